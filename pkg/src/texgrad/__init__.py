"""texgrad: an eager tensor runtime with autodiff, a CPU reference backend
and a simulated WebGL texture backend."""
from . import errors
from .engine import ENGINE, MemoryStats, ProfileResult, TimingInfo
from .ops import (add, clone, concat, conv2d, dispose, div, exp, fill, grad, keep,
                  log, matmul, max, mean, memory, mul, neg, ones, relu, reshape, scalar, sigmoid,
                  slice, square, sub, sum, tensor, tensor2d, tidy, transpose, value_and_grads,
                  variable, zeros, zeros_like)
from .tensor import DType, Tensor, Variable
from . import layers  # noqa: E402  (needs ops loaded first)
from .layers import sequential

__version__ = "0.1.0"


def set_backend(backend):
    return ENGINE.set_backend(backend)


def get_backend(name: str | None = None):
    return ENGINE.backend if name is None else ENGINE.get_backend(name)


def backend_name() -> str:
    return ENGINE.backend.name


def backend_scope(backend):
    return ENGINE.backend_scope(backend)


def set_debug(on: bool) -> None:
    ENGINE.set_debug(on)


def time(f):
    return ENGINE.time(f)


def profile(f):
    return ENGINE.profile(f)
