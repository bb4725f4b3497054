"""Randomized cross-backend parity suite.

Every kernel is run on freshly sampled shapes and values on the CPU
reference and on the texture simulator (single-channel and packed storage).
Deviation is measured per element as ``|got - ref| / max(|ref|, 1)``, with
matching NaNs (or equal infinities) counting as zero deviation.
"""
from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field
from typing import Any, Callable

import numpy as np

from . import kernels as K
from .backends.cpu import CpuBackend
from .engine import ENGINE
from .texsim.backend import TexSimBackend
from .texsim.layout import PACKED, SINGLE
from .texsim.precision import F32, PrecisionProfile, get_profile

MAX_ELEMENTS = 4096
VALUE_RANGE = 2.0
F32_TOLERANCE = 1e-5
F16_TOLERANCE = 1e-2
EXACT_KERNELS = K.UNARY + K.BINARY + K.MOVEMENT + ("reshape",)
PARITY_KERNELS = K.ALL_KERNELS + ("reshape",)

Case = tuple[list[np.ndarray], dict[str, Any]]


def deviation(got: np.ndarray, ref: np.ndarray) -> float:
    got = np.asarray(got, np.float64).reshape(-1)
    ref = np.asarray(ref, np.float64).reshape(-1)
    if got.shape != ref.shape:
        return math.inf
    if not got.size:
        return 0.0
    same = (got == ref) | (np.isnan(got) & np.isnan(ref))
    with np.errstate(invalid="ignore", over="ignore"):
        dev = np.abs(got - ref) / np.maximum(np.abs(ref), 1.0)
    dev = np.where(same, 0.0, dev)
    dev = np.where(np.isnan(dev), math.inf, dev)
    return float(dev.max())


# ----------------------------------------------------------------------
# case generation

def _random_shape(rng: np.random.Generator, min_rank=0, max_rank=4, max_elements=MAX_ELEMENTS) -> tuple:
    rank = int(rng.integers(min_rank, max_rank + 1))
    budget = int(np.exp(rng.uniform(0, np.log(max_elements))))
    shape = []
    for i in range(rank):
        hi = max(1, budget // math.prod(shape or [1]))
        # the remaining dims still need at least one element each
        d = int(rng.integers(1, max(2, int(round(hi ** (1.0 / (rank - i)))) * 2)))
        shape.append(min(d, hi))
    return tuple(shape)


def _values(rng, shape) -> np.ndarray:
    return rng.uniform(-VALUE_RANGE, VALUE_RANGE, shape).astype(np.float32)


def _broadcast_partner(rng, shape) -> tuple:
    drop = int(rng.integers(0, len(shape) + 1))
    partner = [d if rng.random() < 0.6 else 1 for d in shape[drop:]]
    return tuple(partner)


def generate_case(kernel: str, rng: np.random.Generator) -> Case:
    if kernel in K.UNARY:
        x = _values(rng, _random_shape(rng))
        return [np.abs(x) if kernel == "log" else x], {}
    if kernel in K.BINARY:
        a_shape = _random_shape(rng)
        b_shape = _broadcast_partner(rng, a_shape)
        if rng.random() < 0.5:
            a_shape, b_shape = b_shape, a_shape
        a, b = _values(rng, a_shape), _values(rng, b_shape)
        if kernel == "div":
            mag = rng.uniform(0.25, VALUE_RANGE, b_shape).astype(np.float32)
            b = np.where(rng.random(b_shape) < 0.5, -mag, mag).astype(np.float32)
        return [a, b], {}
    if kernel == "matmul":
        m, n, p = (int(rng.integers(1, 40)) for _ in range(3))
        return [_values(rng, (m, n)), _values(rng, (n, p))], {}
    if kernel == "conv2d":
        padding = "valid" if rng.random() < 0.5 else "same"
        batch, cin, cout = int(rng.integers(1, 3)), int(rng.integers(1, 4)), int(rng.integers(1, 4))
        h, w = int(rng.integers(1, 11)), int(rng.integers(1, 11))
        kh = int(rng.integers(1, (min(h, 4) if padding == "valid" else 4) + 1))
        kw = int(rng.integers(1, (min(w, 4) if padding == "valid" else 4) + 1))
        strides = (int(rng.integers(1, 3)), int(rng.integers(1, 3)))
        return ([_values(rng, (batch, h, w, cin)), _values(rng, (kh, kw, cin, cout))],
                {"strides": strides, "padding": padding})
    if kernel in K.REDUCE:
        shape = _random_shape(rng, 1, 4)
        if rng.random() < 0.25:
            axes = None
        else:
            k = int(rng.integers(1, len(shape) + 1))
            axes = sorted(rng.choice(len(shape), size=k, replace=False).tolist())
        return [_values(rng, shape)], {"axes": axes}
    if kernel == "transpose":
        shape = _random_shape(rng, 1, 5)
        return [_values(rng, shape)], {"perm": rng.permutation(len(shape)).tolist()}
    if kernel == "slice":
        shape = _random_shape(rng, 1, 4)
        begin = [int(rng.integers(0, d)) for d in shape]
        size = [int(rng.integers(1, d - b + 1)) if rng.random() < 0.8 else -1
                for d, b in zip(shape, begin)]
        return [_values(rng, shape)], {"begin": begin, "size": size}
    if kernel == "concat":
        shape = list(_random_shape(rng, 1, 4, MAX_ELEMENTS // 4))
        axis = int(rng.integers(0, len(shape)))
        parts = []
        for _ in range(int(rng.integers(1, 5))):
            s = list(shape)
            s[axis] = int(rng.integers(1, 6))
            parts.append(_values(rng, tuple(s)))
        return parts, {"axis": axis}
    if kernel == "reshape":
        shape = _random_shape(rng, 1, 4)
        n = math.prod(shape)
        divisors = [d for d in range(1, n + 1) if n % d == 0]
        first = int(rng.choice(divisors))
        rest = n // first
        second = int(rng.choice([d for d in range(1, rest + 1) if rest % d == 0]))
        return [_values(rng, shape)], {"shape": [first, second, rest // second]}
    raise ValueError(f"no case generator for kernel {kernel!r}")


# ----------------------------------------------------------------------
# execution

def run_on(backend, kernel: str, inputs: list[np.ndarray], attrs: dict[str, Any]) -> np.ndarray:
    """Run one kernel through the engine on ``backend`` and read the result."""
    with ENGINE.backend_scope(backend):
        def body():
            ts = [ENGINE.make_tensor(x) for x in inputs]
            if kernel == "reshape":
                # a reshaped view feeding a kernel exercises the relayout path
                out = ENGINE.run_kernel("neg", [ENGINE.reshape(ts[0], attrs["shape"])])
            else:
                out = ENGINE.run_kernel(kernel, ts, attrs)
            return ENGINE.read(out)
        return ENGINE.tidy(body)


@dataclass
class KernelReport:
    kernel: str
    cases: int
    max_deviation: float
    tolerance: float
    exact: bool
    packed_mismatches: int
    failures: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return not self.failures


@dataclass
class ParityReport:
    profile: str
    trials: int
    seed: int
    kernels: list[KernelReport]
    seconds: float = 0.0

    @property
    def passed(self) -> bool:
        return all(k.passed for k in self.kernels)

    @property
    def failing(self) -> list[str]:
        return [k.kernel for k in self.kernels if not k.passed]

    def to_dict(self, timing: bool = False) -> dict[str, Any]:
        d = {"profile": self.profile, "trials": self.trials, "seed": self.seed, "passed": self.passed,
             "kernels": [dict(asdict(k), passed=k.passed) for k in self.kernels]}
        if timing:
            d["seconds"] = self.seconds
        return d


def run_parity(trials: int = 200, seed: int = 0, profile: PrecisionProfile | str = F32,
               kernels: tuple[str, ...] = PARITY_KERNELS, check_packed: bool | None = None,
               progress: Callable[[KernelReport], None] | None = None) -> ParityReport:
    """Compare texsim (single and packed) against the CPU reference.

    Under F32, elementwise and movement kernels must match exactly and the
    packed backend must match the single-channel one bitwise. Under F16 the
    CPU reference is fed the same half-rounded inputs and epsilon, and
    deviation is bounded by ``F16_TOLERANCE``.
    """
    profile = get_profile(profile)
    half = profile.bits == 16
    check_packed = (not half) if check_packed is None else check_packed
    start = time.perf_counter()
    rng = np.random.default_rng(seed)
    cpu = CpuBackend(epsilon=profile.epsilon)
    single = TexSimBackend(profile, SINGLE)
    packed = TexSimBackend(profile, PACKED) if check_packed else None
    reports = []
    for kernel in kernels:
        exact = kernel in EXACT_KERNELS and not half
        tol = 0.0 if exact else (F16_TOLERANCE if half else F32_TOLERANCE)
        report = KernelReport(kernel, 0, 0.0, tol, exact, 0)
        for trial in range(trials):
            inputs, attrs = generate_case(kernel, rng)
            ref_inputs = [profile.quantize(x) for x in inputs] if half else inputs
            ref = run_on(cpu, kernel, ref_inputs, attrs)
            if half:
                ref = profile.quantize(ref)
            got = run_on(single, kernel, inputs, attrs)
            dev = deviation(got, ref)
            report.cases += 1
            report.max_deviation = max(report.max_deviation, dev)
            shapes = [list(x.shape) for x in inputs]
            if dev > tol:
                report.failures.append(f"trial {trial}: shapes {shapes} attrs {attrs} deviation {dev:.3g}")
            if packed is not None:
                other = run_on(packed, kernel, inputs, attrs)
                if not np.array_equal(got.view(np.uint32), other.view(np.uint32)):
                    report.packed_mismatches += 1
                    report.failures.append(f"trial {trial}: packed differs from single for shapes {shapes}")
        reports.append(report)
        if progress is not None:
            progress(report)
    return ParityReport(profile.name, trials, seed, reports, time.perf_counter() - start)
