"""Plain reference backend.

Every kernel materializes immediately. Accumulations run sequentially in
float32 (no pairwise or BLAS summation) so results are reproducible by a
naive loop and line up with the texture simulator's per-texel loops.
"""
from __future__ import annotations

import time

import numpy as np

from .. import kernels as K
from ..errors import UnsupportedKernelError
from ..tensor import DType, size_of
from .base import Backend, KernelRecord, ReadHandle, TensorInfo

F32 = np.float32


def _unary(kind: str, x: np.ndarray, eps: np.float32) -> np.ndarray:
    x = x.astype(F32, copy=False)
    if kind == "neg":
        return -x
    if kind == "exp":
        return np.exp(x)
    if kind == "log":
        return np.log(x + eps)
    if kind == "relu":
        return np.where(x > F32(0), x, F32(0)).astype(F32)
    if kind == "sigmoid":
        return F32(1) / (F32(1) + np.exp(-x))
    if kind == "square":
        return x * x
    if kind == "step":
        return np.where(x > F32(0), F32(1), F32(0)).astype(F32)
    raise UnsupportedKernelError(kind)


def _binary(kind: str, a: np.ndarray, b: np.ndarray, out_dtype: DType) -> np.ndarray:
    npd = out_dtype.numpy
    a = a.astype(npd, copy=False)
    b = b.astype(npd, copy=False)
    if kind == "add":
        return a + b
    if kind == "sub":
        return a - b
    if kind == "mul":
        return a * b
    if kind == "div":
        return a / b
    raise UnsupportedKernelError(kind)


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    a = a.astype(F32, copy=False)
    b = b.astype(F32, copy=False)
    acc = np.zeros((a.shape[0], b.shape[1]), F32)
    for k in range(a.shape[1]):
        acc += a[:, k:k + 1] * b[k:k + 1, :]
    return acc


def conv2d(x: np.ndarray, f: np.ndarray, strides, padding: str) -> np.ndarray:
    x = x.astype(F32, copy=False)
    f = f.astype(F32, copy=False)
    batch, h, w, cin = x.shape
    kh, kw, _, cout = f.shape
    sh, sw = strides
    out_h, out_w, pad_top, pad_left = K.conv2d_geometry(x.shape, f.shape, strides, padding)
    # zero-pad generously so every window slice is in range
    need_h = (out_h - 1) * sh + kh
    need_w = (out_w - 1) * sw + kw
    xp = np.zeros((batch, max(need_h, h + pad_top), max(need_w, w + pad_left), cin), F32)
    xp[:, pad_top:pad_top + h, pad_left:pad_left + w, :] = x
    acc = np.zeros((batch, out_h, out_w, cout), F32)
    for i in range(kh):
        for j in range(kw):
            for c in range(cin):
                patch = xp[:, i:i + sh * (out_h - 1) + 1:sh, j:j + sw * (out_w - 1) + 1:sw, c]
                acc += patch[..., None] * f[i, j, c, :]
    return acc


def reduce(kind: str, x: np.ndarray, axes: tuple[int, ...], out_dtype: DType) -> np.ndarray:
    kept = [i for i in range(x.ndim) if i not in axes]
    count = K.reduced_count(x.shape, axes)
    out_size = size_of([x.shape[i] for i in kept])
    cols = np.transpose(x, kept + list(axes)).reshape(out_size, count)
    npd = out_dtype.numpy if kind != "mean" else np.dtype(F32)
    cols = cols.astype(npd, copy=False)
    if kind == "max":
        start = -np.inf if npd == F32 else np.iinfo(npd).min
        acc = np.full(out_size, start, npd)
        for k in range(count):
            acc = np.maximum(acc, cols[:, k])
        return acc
    acc = np.zeros(out_size, npd)
    for k in range(count):
        acc += cols[:, k]
    if kind == "mean":
        acc = acc / F32(count)
    return acc


class CpuBackend(Backend):
    """Reference kernels over numpy buffers keyed by container id."""

    name = "cpu"

    def __init__(self, epsilon: float = 1e-8):
        self.epsilon = float(F32(epsilon))
        self._store: dict[int, np.ndarray] = {}

    def write(self, data_id, values, shape, dtype, pinned=False):
        self._store[data_id] = np.array(values, dtype=dtype.numpy).reshape(-1)

    def read(self, data_id):
        return self._store[data_id].copy()

    def read_async(self, data_id):
        return ReadHandle(lambda: True, lambda: self.read(data_id))

    def dispose_data(self, data_id):
        self._store.pop(data_id, None)

    def has_kernel(self, name):
        return name in K.ALL_KERNELS

    def memory(self):
        return {"device_bytes": int(sum(v.nbytes for v in self._store.values()))}

    def _get(self, info: TensorInfo) -> np.ndarray:
        return self._store[info.data_id].reshape(info.shape)

    def run_kernel(self, name, inputs, attrs, output, record: KernelRecord, pinned=False):
        if not self.has_kernel(name):
            raise UnsupportedKernelError(f"cpu backend has no kernel '{name}'")
        start = time.perf_counter()
        args = [self._get(t) for t in inputs]
        with np.errstate(all="ignore"):
            if name in K.UNARY:
                res = _unary(name, args[0], F32(self.epsilon))
            elif name in K.BINARY:
                res = _binary(name, args[0], args[1], output.dtype)
            elif name == "matmul":
                res = matmul(*args)
            elif name == "conv2d":
                res = conv2d(args[0], args[1], attrs["strides"], attrs["padding"])
            elif name in K.REDUCE:
                res = reduce(name, args[0], attrs["axes"], output.dtype)
            elif name == "transpose":
                res = np.transpose(args[0], attrs["perm"])
            elif name == "slice":
                idx = tuple(slice(b, b + s) for b, s in zip(attrs["begin"], attrs["size"]))
                res = args[0][idx]
            elif name == "concat":
                res = np.concatenate([a.astype(output.dtype.numpy, copy=False) for a in args],
                                     axis=attrs["axis"])
            else:  # pragma: no cover - guarded by has_kernel
                raise UnsupportedKernelError(name)
        self._store[output.data_id] = np.ascontiguousarray(res, dtype=output.dtype.numpy).reshape(-1)
        record.elapsed_ms = (time.perf_counter() - start) * 1000.0
