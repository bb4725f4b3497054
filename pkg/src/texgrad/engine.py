"""The central dispatcher.

Owns the backend registry, container bookkeeping, tidy scopes, the gradient
tape and the profiling hooks. All of it is single-threaded state: call it
from one thread only.
"""
from __future__ import annotations

import contextlib
import logging
import os
import time as _time
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Iterator, Sequence

import numpy as np

from . import kernels as K
from .backends.base import Backend, KernelRecord, ReadHandle, TensorInfo
from .errors import (DisposedTensorError, InvalidDTypeError, MissingGradientError,
                     NanDetectedError, NonScalarOutputError, ShapeMismatchError,
                     UnsupportedKernelError)
from .tensor import DataContainer, DType, Tensor, Variable, as_shape, next_id, size_of

log = logging.getLogger(__name__)

GradFn = Callable[["Tensor", "TapeNode"], Sequence["Tensor | None"]]


@dataclass
class MemoryStats:
    num_tensors: int
    num_data_containers: int
    num_bytes: int
    num_bytes_in_backend_device: int


@dataclass
class TimingInfo:
    wall_ms: float
    kernel_ms: float
    kernels: list[KernelRecord]


@dataclass
class ProfileResult:
    new_tensors: int
    new_bytes: int
    peak_tensors: int
    peak_bytes: int
    kernels: list[KernelRecord]
    result: Any = field(default=None, repr=False)

    def to_dict(self, timing: bool = True) -> dict:
        rows = []
        for k in self.kernels:
            row = {"name": k.name, "phase": k.extra.get("phase", "forward"),
                   "output_shape": list(k.output_shape), "output_bytes": k.output_bytes}
            if timing:
                row["elapsed_ms"] = k.elapsed_ms
                row["compile_ms"] = k.compile_ms
            rows.append(row)
        return {"new_tensors": self.new_tensors, "new_bytes": self.new_bytes,
                "peak_tensors": self.peak_tensors, "peak_bytes": self.peak_bytes, "kernels": rows}


@dataclass
class TapeNode:
    """One recorded op. ``inputs``/``output`` are tape-owned views whose
    containers stay alive until backprop finishes, even if user code
    disposes the originals."""

    op_name: str
    input_ids: list[int]
    output_id: int
    inputs: list[Tensor]
    output: Tensor
    attrs: dict
    grad_fn: GradFn | None


class _Tape:
    def __init__(self, watched: Iterable[Tensor]):
        self.nodes: list[TapeNode] = []
        self.watched = {t.id for t in watched}


class _Recorder:
    def __init__(self, engine: "Engine"):
        self.start_tensors = engine.num_tensors
        self.start_bytes = engine.num_bytes
        self.peak_tensors = 0
        self.peak_bytes = 0
        self.kernels: list[KernelRecord] = []

    def observe(self, engine: "Engine") -> None:
        self.peak_tensors = max(self.peak_tensors, engine.num_tensors - self.start_tensors)
        self.peak_bytes = max(self.peak_bytes, engine.num_bytes - self.start_bytes)


def _env_flag(name: str) -> bool:
    return os.environ.get(name, "").strip().lower() in ("1", "true", "yes", "on")


def _flatten_tensors(obj: Any) -> list[Tensor]:
    if isinstance(obj, Tensor):
        return [obj]
    if isinstance(obj, dict):
        obj = list(obj.values())
    if isinstance(obj, (list, tuple)):
        out = []
        for item in obj:
            out.extend(_flatten_tensors(item))
        return out
    return []


class Engine:
    def __init__(self, debug: bool | None = None):
        self._registry: dict[str, tuple[int, Callable[[], Backend]]] = {}
        self._instances: dict[str, Backend] = {}
        self._active: Backend | None = None
        self._containers: dict[int, DataContainer] = {}
        self._gradients: dict[str, GradFn] = {}
        self._scopes: list[list[Tensor]] = []
        self._tape: _Tape | None = None
        self._recorders: list[_Recorder] = []
        self.num_tensors = 0
        self.num_bytes = 0
        self.debug = _env_flag("TEXGRAD_DEBUG") if debug is None else debug
        self._phase = "forward"

    # ------------------------------------------------------------------
    # backend registry

    def register_backend(self, name: str, factory: Callable[[], Backend], priority: int = 1) -> None:
        self._registry[name] = (priority, factory)

    def remove_backend(self, name: str) -> None:
        """Deregister a backend; if it was active, the next best one takes over."""
        self._registry.pop(name, None)
        inst = self._instances.pop(name, None)
        if inst is not None and inst is self._active:
            self._active = None

    @property
    def registered_backends(self) -> list[str]:
        return sorted(self._registry, key=lambda n: -self._registry[n][0])

    def _instantiate(self, name: str) -> Backend:
        if name not in self._instances:
            self._instances[name] = self._registry[name][1]()
        return self._instances[name]

    @property
    def backend(self) -> Backend:
        if self._active is None:
            forced = os.environ.get("TEXGRAD_BACKEND")
            if forced:
                self._active = self._instantiate(forced)
            else:
                for name in self.registered_backends:
                    try:
                        self._active = self._instantiate(name)
                        break
                    except Exception as exc:  # noqa: BLE001 - any init failure falls through
                        log.warning("backend %s failed to initialize: %s", name, exc)
                else:
                    raise RuntimeError("no backend could be initialized")
        return self._active

    @property
    def backend_name(self) -> str:
        return self.backend.name

    def set_backend(self, backend: str | Backend) -> Backend:
        if isinstance(backend, Backend):
            self._active = backend
        else:
            self._active = self._instantiate(backend)
        return self._active

    def get_backend(self, name: str) -> Backend:
        return self._instantiate(name)

    @contextlib.contextmanager
    def backend_scope(self, backend: str | Backend) -> Iterator[Backend]:
        prev = self._active
        try:
            yield self.set_backend(backend)
        finally:
            self._active = prev

    def register_gradient(self, op_name: str, fn: GradFn) -> None:
        self._gradients[op_name] = fn

    def epsilon(self) -> float:
        return self.backend.epsilon

    # ------------------------------------------------------------------
    # tensor lifecycle

    def _new_container(self, dtype: DType, size: int, backend: Backend) -> DataContainer:
        c = DataContainer(id=next_id(), dtype=dtype, size=size, backend=backend)
        self._containers[c.id] = c
        self.num_bytes += c.byte_size
        return c

    def _register(self, t: Tensor, track: bool = True) -> Tensor:
        self.num_tensors += 1
        if track and self._scopes:
            self._scopes[-1].append(t)
        for rec in self._recorders:
            rec.observe(self)
        return t

    def make_tensor(self, values: Any, shape: Sequence[int] | None = None,
                    dtype: DType | str = DType.float32) -> Tensor:
        dtype = DType.of(dtype)
        if dtype == DType.uint8:
            raise InvalidDTypeError("uint8 is a storage-only dtype")
        arr = np.asarray(values)
        if shape is None:
            shape = arr.shape
        shape = as_shape(shape)
        flat = arr.reshape(-1)
        if flat.size != size_of(shape):
            raise ShapeMismatchError(
                f"{flat.size} values cannot fill shape {list(shape)} ({size_of(shape)} elements)")
        flat = flat.astype(dtype.numpy)
        backend = self.backend
        c = self._new_container(dtype, flat.size, backend)
        backend.write(c.id, flat, shape, dtype, pinned=bool(self._scopes))
        return self._register(Tensor(self, shape, dtype, c.id))

    def make_variable(self, initial: Tensor, name: str | None = None, trainable: bool = True) -> Variable:
        self._check(initial)
        self._containers[initial.data_id].ref_count += 1
        self._unpin(initial)
        v = Variable(self, initial.shape, initial.dtype, initial.data_id, name=name, trainable=trainable)
        return self._register(v, track=False)

    def assign(self, var: Variable, value: Tensor) -> None:
        self._check(value)
        if value.shape != var.shape:
            raise ShapeMismatchError(f"cannot assign {list(value.shape)} to variable of {list(var.shape)}")
        self._ensure_on_active(value)
        self._containers[value.data_id].ref_count += 1
        old = var.data_id
        var.data_id = value.data_id
        var.dtype = value.dtype
        self._unpin(var)
        self._release(old)

    def _check(self, t: Tensor) -> None:
        if t.disposed:
            raise DisposedTensorError(f"tensor {t.id} is disposed")

    def _release(self, data_id: int) -> None:
        c = self._containers[data_id]
        c.ref_count -= 1
        if c.ref_count == 0:
            del self._containers[data_id]
            self.num_bytes -= c.byte_size
            c.backend.dispose_data(data_id)

    def dispose_tensor(self, t: Tensor) -> None:
        if t.disposed:
            return
        t.disposed = True
        self.num_tensors -= 1
        self._release(t.data_id)

    def _view(self, t: Tensor, shape, track: bool = True) -> Tensor:
        self._containers[t.data_id].ref_count += 1
        out = Tensor(self, shape, t.dtype, t.data_id)
        return self._register(out, track=track)

    def reshape(self, t: Tensor, shape: Sequence[int]) -> Tensor:
        self._check(t)
        shape = list(shape)
        if shape.count(-1) == 1:
            known = size_of([d for d in shape if d != -1])
            shape[shape.index(-1)] = t.size // known if known else 0
        shape = as_shape(shape)
        if size_of(shape) != t.size:
            raise ShapeMismatchError(f"cannot reshape {list(t.shape)} into {list(shape)}")
        out = self._view(t, shape)
        self._record("reshape", [t], out, {"shape": shape})
        return out

    def clone(self, t: Tensor) -> Tensor:
        self._check(t)
        out = self._view(t, t.shape)
        self._record("clone", [t], out, {})
        return out

    def _ensure_on_active(self, t: Tensor) -> None:
        c = self._containers[t.data_id]
        backend = self.backend
        if c.backend is not backend:
            values = c.backend.read(c.id)
            c.backend.dispose_data(c.id)
            backend.write(c.id, values, t.shape, t.dtype, pinned=bool(self._scopes))
            c.backend = backend

    def read(self, t: Tensor) -> np.ndarray:
        self._check(t)
        c = self._containers[t.data_id]
        return c.backend.read(c.id).astype(t.dtype.numpy, copy=False)

    def read_async(self, t: Tensor) -> ReadHandle:
        self._check(t)
        c = self._containers[t.data_id]
        return c.backend.read_async(c.id)

    def container(self, t: Tensor) -> DataContainer:
        return self._containers[t.data_id]

    def memory(self) -> MemoryStats:
        device = sum(b.memory().get("device_bytes", 0) for b in set(self._instances.values()) | (
            {self._active} if self._active is not None else set()))
        return MemoryStats(self.num_tensors, len(self._containers), self.num_bytes, int(device))

    # ------------------------------------------------------------------
    # dispatch

    def run_kernel(self, name: str, inputs: Sequence[Tensor], attrs: dict | None = None) -> Tensor:
        for t in inputs:
            self._check(t)
        backend = self.backend
        if not backend.has_kernel(name):
            raise UnsupportedKernelError(f"backend '{backend.name}' has no kernel '{name}'")
        shape, dtype, norm = K.infer(name, [t.shape for t in inputs], [t.dtype for t in inputs], attrs)
        for t in inputs:
            self._ensure_on_active(t)
        c = self._new_container(dtype, size_of(shape), backend)
        out_info = TensorInfo(c.id, shape, dtype)
        record = KernelRecord(name, shape, c.byte_size, extra={"phase": self._phase})
        try:
            backend.run_kernel(name, [TensorInfo(t.data_id, t.shape, t.dtype) for t in inputs],
                               norm, out_info, record, pinned=bool(self._scopes))
        except Exception:
            del self._containers[c.id]
            self.num_bytes -= c.byte_size
            raise
        out = self._register(Tensor(self, shape, dtype, c.id))
        for rec in self._recorders:
            rec.kernels.append(record)
        if self.debug and dtype == DType.float32:
            values = backend.read(c.id)
            if not np.all(np.isfinite(values)):
                self.dispose_tensor(out)
                raise NanDetectedError(name)
        self._record(name, list(inputs), out, norm)
        return out

    @contextlib.contextmanager
    def phase(self, name: str) -> Iterator[None]:
        """Label kernels dispatched in this block (shown by ``profile``)."""
        prev, self._phase = self._phase, name
        try:
            yield
        finally:
            self._phase = prev

    def set_debug(self, on: bool) -> None:
        self.debug = bool(on)

    @contextlib.contextmanager
    def debug_mode(self, on: bool = True) -> Iterator[None]:
        prev = self.debug
        self.debug = on
        try:
            yield
        finally:
            self.debug = prev

    # ------------------------------------------------------------------
    # scopes

    def start_scope(self) -> None:
        self._scopes.append([])

    def end_scope(self, keep: Any = None) -> None:
        scope = self._scopes.pop()
        keep_ids = {t.id for t in _flatten_tensors(keep)}
        for t in scope:
            if t.id in keep_ids:
                if self._scopes:
                    self._scopes[-1].append(t)
                else:
                    self._unpin(t)
            elif not t.disposed:
                self.dispose_tensor(t)

    def tidy(self, fn: Callable[[], Any]) -> Any:
        self.start_scope()
        try:
            result = fn()
        except BaseException:
            self.end_scope()
            raise
        self.end_scope(result)
        return result

    def _unpin(self, t: Tensor) -> None:
        c = self._containers.get(t.data_id)
        if c is not None:
            c.backend.unpin(c.id)

    def keep(self, t: Tensor) -> Tensor:
        """Exclude ``t`` from disposal by every enclosing tidy scope."""
        for scope in self._scopes:
            for i, s in enumerate(scope):
                if s is t:
                    del scope[i]
                    break
        return t

    @property
    def scope_depth(self) -> int:
        return len(self._scopes)

    # ------------------------------------------------------------------
    # autodiff

    def _record(self, op_name: str, inputs: list[Tensor], out: Tensor, attrs: dict) -> None:
        tape = self._tape
        if tape is None:
            return
        saved_in = [self._shadow(t) for t in inputs]
        saved_out = self._shadow(out)
        tape.nodes.append(TapeNode(op_name, [t.id for t in inputs], out.id, saved_in, saved_out,
                                   attrs, self._gradients.get(op_name)))

    def _shadow(self, t: Tensor) -> Tensor:
        # tape-owned view: holds a container reference but is not a user tensor
        self._containers[t.data_id].ref_count += 1
        return Tensor(self, t.shape, t.dtype, t.data_id)

    def _release_tape(self, tape: _Tape) -> None:
        for node in tape.nodes:
            for t in node.inputs + [node.output]:
                if not t.disposed:
                    t.disposed = True
                    self._release(t.data_id)

    @property
    def recording(self) -> bool:
        return self._tape is not None

    def gradients(self, f: Callable[..., Tensor], xs: Sequence[Tensor]) -> tuple[Tensor, list[Tensor]]:
        """Value of scalar ``f(*xs)`` and its gradient with respect to each ``x``.

        Everything created along the way is disposed except the returned
        value and gradients.
        """
        if self._tape is not None:
            raise RuntimeError("nested gradient recording is not supported")
        for x in xs:
            self._check(x)
        tape = _Tape(xs)
        self.start_scope()
        y = None
        grads: list[Tensor] = []
        try:
            self._tape = tape
            try:
                y = f(*xs)
            finally:
                self._tape = None
            if not isinstance(y, Tensor) or y.size != 1:
                raise NonScalarOutputError(
                    f"gradient target must be a scalar, got shape {getattr(y, 'shape', None)}")
            with self.phase("gradient"):
                grads = self._backprop(tape, y, xs)
        except BaseException:
            self._release_tape(tape)
            self.end_scope()
            raise
        self._release_tape(tape)
        self.end_scope([y] + grads)
        return y, grads

    def _backprop(self, tape: _Tape, y: Tensor, xs: Sequence[Tensor]) -> list[Tensor]:
        from . import ops

        reach = set(tape.watched)
        forward = []
        for node in tape.nodes:
            if any(i in reach for i in node.input_ids):
                reach.add(node.output_id)
                forward.append(node)
        needed = {y.id}
        path = []
        for node in reversed(forward):
            if node.output_id in needed:
                needed.update(node.input_ids)
                path.append(node)

        grads: dict[int, Tensor] = {y.id: ops.ones(y.shape)}
        for node in path:
            dy = grads.get(node.output_id)
            if dy is None:
                continue
            if node.grad_fn is None:
                raise MissingGradientError(node.op_name)
            in_grads = node.grad_fn(dy, node)
            for inp_id, inp, g in zip(node.input_ids, node.inputs, in_grads):
                if g is None or inp_id not in needed:
                    continue
                if g.shape != inp.shape:
                    raise ShapeMismatchError(
                        f"gradient of '{node.op_name}' has shape {list(g.shape)}, "
                        f"input has {list(inp.shape)}")
                prev = grads.get(inp_id)
                grads[inp_id] = g if prev is None else ops.add(prev, g)
        return [grads[x.id] if x.id in grads else ops.zeros(x.shape) for x in xs]

    def grad(self, f: Callable[[Tensor], Tensor]) -> Callable[[Tensor], Tensor]:
        def df(x: Tensor) -> Tensor:
            y, (g,) = self.gradients(f, [x])
            self.dispose_tensor(y)
            return g
        return df

    # ------------------------------------------------------------------
    # profiling

    def _run_recorded(self, f: Callable[[], Any]):
        rec = _Recorder(self)
        self._recorders.append(rec)
        start = _time.perf_counter()
        try:
            result = f()
            # deferred backends only attribute time once the work has run
            self.backend.flush()
        finally:
            self._recorders.remove(rec)
        wall = (_time.perf_counter() - start) * 1000.0
        return rec, result, wall

    def time(self, f: Callable[[], Any]) -> TimingInfo:
        rec, _, wall = self._run_recorded(f)
        kernel = sum(k.elapsed_ms or 0.0 for k in rec.kernels)
        return TimingInfo(wall_ms=wall, kernel_ms=kernel, kernels=rec.kernels)

    def profile(self, f: Callable[[], Any]) -> ProfileResult:
        rec, result, _ = self._run_recorded(f)
        return ProfileResult(
            new_tensors=self.num_tensors - rec.start_tensors,
            new_bytes=self.num_bytes - rec.start_bytes,
            peak_tensors=rec.peak_tensors,
            peak_bytes=rec.peak_bytes,
            kernels=rec.kernels,
            result=result,
        )


def _default_texsim():
    from .texsim.backend import TexSimBackend
    return TexSimBackend.from_env()


def _default_cpu():
    from .backends.cpu import CpuBackend
    return CpuBackend()


ENGINE = Engine()
ENGINE.register_backend("texsim", _default_texsim, priority=2)
ENGINE.register_backend("cpu", _default_cpu, priority=1)
