"""User-facing operations and their gradients.

Each op is a thin wrapper that validates arguments and calls
``ENGINE.run_kernel``; the matching gradient is registered with the engine
and only consulted while a gradient tape is recording.
"""
from __future__ import annotations

from typing import Any, Callable, Sequence

import numpy as np

from . import kernels as K
from .engine import ENGINE, TapeNode
from .tensor import DType, Tensor, size_of

TensorLike = Any


# ----------------------------------------------------------------------
# creation

def tensor(values: TensorLike, shape: Sequence[int] | None = None, dtype: str | DType = "float32") -> Tensor:
    return ENGINE.make_tensor(values, shape, dtype)


def tensor2d(values: TensorLike, shape: Sequence[int], dtype: str | DType = "float32") -> Tensor:
    return ENGINE.make_tensor(values, shape, dtype)


def scalar(value: float, dtype: str | DType = "float32") -> Tensor:
    return ENGINE.make_tensor([value], (), dtype)


def fill(shape: Sequence[int], value: float, dtype: str | DType = "float32") -> Tensor:
    dtype = DType.of(dtype)
    return ENGINE.make_tensor(np.full(size_of(shape), value, dtype.numpy), tuple(shape), dtype)


def zeros(shape: Sequence[int], dtype: str | DType = "float32") -> Tensor:
    return fill(shape, 0, dtype)


def ones(shape: Sequence[int], dtype: str | DType = "float32") -> Tensor:
    return fill(shape, 1, dtype)


def zeros_like(t: Tensor) -> Tensor:
    return zeros(t.shape, t.dtype)


def variable(initial: TensorLike, name: str | None = None, trainable: bool = True):
    if isinstance(initial, Tensor):
        return ENGINE.make_variable(initial, name=name, trainable=trainable)
    t = _t(initial)
    v = ENGINE.make_variable(t, name=name, trainable=trainable)
    t.dispose()
    return v


def _t(x: TensorLike) -> Tensor:
    if isinstance(x, Tensor):
        return x
    arr = np.asarray(x)
    if arr.dtype == np.bool_:
        dtype = DType.bool
    elif isinstance(x, np.ndarray) and np.issubdtype(arr.dtype, np.integer):
        dtype = DType.int32
    else:
        dtype = DType.float32
    return ENGINE.make_tensor(arr, arr.shape, dtype)


# ----------------------------------------------------------------------
# memory helpers

def tidy(fn: Callable[[], Any]) -> Any:
    return ENGINE.tidy(fn)


def keep(t: Tensor) -> Tensor:
    return ENGINE.keep(t)


def dispose(obj: Any) -> None:
    if isinstance(obj, Tensor):
        obj.dispose()
    elif isinstance(obj, dict):
        for v in obj.values():
            dispose(v)
    elif isinstance(obj, (list, tuple)):
        for v in obj:
            dispose(v)


def memory():
    return ENGINE.memory()


# ----------------------------------------------------------------------
# kernels

def _unary(name: str):
    def op(x: TensorLike) -> Tensor:
        return ENGINE.run_kernel(name, [_t(x)])
    op.__name__ = name
    return op


neg = _unary("neg")
exp = _unary("exp")
log = _unary("log")
relu = _unary("relu")
sigmoid = _unary("sigmoid")
square = _unary("square")
step = _unary("step")


def add(a: TensorLike, b: TensorLike) -> Tensor:
    return ENGINE.run_kernel("add", [_t(a), _t(b)])


def sub(a: TensorLike, b: TensorLike) -> Tensor:
    return ENGINE.run_kernel("sub", [_t(a), _t(b)])


def mul(a: TensorLike, b: TensorLike) -> Tensor:
    return ENGINE.run_kernel("mul", [_t(a), _t(b)])


def div(a: TensorLike, b: TensorLike) -> Tensor:
    return ENGINE.run_kernel("div", [_t(a), _t(b)])


def matmul(a: TensorLike, b: TensorLike) -> Tensor:
    return ENGINE.run_kernel("matmul", [_t(a), _t(b)])


def conv2d(x: TensorLike, filt: TensorLike, strides=(1, 1), padding: str = "valid") -> Tensor:
    return ENGINE.run_kernel("conv2d", [_t(x), _t(filt)], {"strides": strides, "padding": padding})


def sum(x: TensorLike, axes=None) -> Tensor:  # noqa: A001 - mirrors the tensor API name
    return ENGINE.run_kernel("sum", [_t(x)], {"axes": axes})


def mean(x: TensorLike, axes=None) -> Tensor:
    return ENGINE.run_kernel("mean", [_t(x)], {"axes": axes})


def max(x: TensorLike, axes=None) -> Tensor:  # noqa: A001
    return ENGINE.run_kernel("max", [_t(x)], {"axes": axes})


def transpose(x: TensorLike, perm: Sequence[int] | None = None) -> Tensor:
    return ENGINE.run_kernel("transpose", [_t(x)], {"perm": perm})


def slice(x: TensorLike, begin: Sequence[int], size: Sequence[int]) -> Tensor:  # noqa: A001
    return ENGINE.run_kernel("slice", [_t(x)], {"begin": begin, "size": size})


def concat(tensors: Sequence[TensorLike], axis: int = 0) -> Tensor:
    return ENGINE.run_kernel("concat", [_t(t) for t in tensors], {"axis": axis})


def reshape(x: TensorLike, shape: Sequence[int]) -> Tensor:
    return ENGINE.reshape(_t(x), shape)


def clone(x: TensorLike) -> Tensor:
    return ENGINE.clone(_t(x))


def broadcast_to(x: Tensor, shape: Sequence[int]) -> Tensor:
    if tuple(x.shape) == tuple(shape):
        return x
    return add(x, zeros(shape, x.dtype))


# ----------------------------------------------------------------------
# autodiff entry points

def grad(f: Callable[[Tensor], Tensor]) -> Callable[[Tensor], Tensor]:
    return ENGINE.grad(f)


def value_and_grads(f: Callable[..., Tensor], xs: Sequence[Tensor]):
    return ENGINE.gradients(f, xs)


# ----------------------------------------------------------------------
# gradients

def _unbroadcast(g: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    if g.shape == shape:
        return g
    lead = len(g.shape) - len(shape)
    axes = list(range(lead))
    for i, d in enumerate(shape):
        if d == 1 and g.shape[lead + i] != 1:
            axes.append(lead + i)
    if axes:
        g = sum(g, axes)
    return reshape(g, shape)


def _expand_reduced(dy: Tensor, x_shape, axes) -> Tensor:
    keep_shape = [1 if i in axes else d for i, d in enumerate(x_shape)]
    return broadcast_to(reshape(dy, keep_shape), x_shape)


def _g_sum(dy, n: TapeNode):
    return [_expand_reduced(dy, n.inputs[0].shape, n.attrs["axes"])]


def _g_mean(dy, n: TapeNode):
    count = K.reduced_count(n.inputs[0].shape, n.attrs["axes"])
    return [div(_expand_reduced(dy, n.inputs[0].shape, n.attrs["axes"]), scalar(float(count)))]


def _g_slice(dy, n: TapeNode):
    x_shape = n.inputs[0].shape
    g = dy
    for axis, (b, s) in enumerate(zip(n.attrs["begin"], n.attrs["size"])):
        before, after = b, x_shape[axis] - b - s
        parts = []
        if before:
            parts.append(zeros(g.shape[:axis] + (before,) + g.shape[axis + 1:]))
        parts.append(g)
        if after:
            parts.append(zeros(g.shape[:axis] + (after,) + g.shape[axis + 1:]))
        if len(parts) > 1:
            g = concat(parts, axis)
    return [g]


def _g_concat(dy, n: TapeNode):
    axis = n.attrs["axis"]
    out, offset = [], 0
    for inp in n.inputs:
        begin = [0] * dy.rank
        begin[axis] = offset
        out.append(slice(dy, begin, inp.shape))
        offset += inp.shape[axis]
    return out


def _g_transpose(dy, n: TapeNode):
    perm = n.attrs["perm"]
    inverse = [0] * len(perm)
    for i, p in enumerate(perm):
        inverse[p] = i
    return [transpose(dy, inverse)]


_GRADS = {
    "neg": lambda dy, n: [neg(dy)],
    "exp": lambda dy, n: [mul(dy, n.output)],
    "log": lambda dy, n: [div(dy, add(n.inputs[0], scalar(ENGINE.epsilon())))],
    "relu": lambda dy, n: [mul(dy, step(n.inputs[0]))],
    "sigmoid": lambda dy, n: [mul(dy, mul(n.output, sub(scalar(1.0), n.output)))],
    "square": lambda dy, n: [mul(dy, mul(n.inputs[0], scalar(2.0)))],
    "step": lambda dy, n: [zeros_like(n.inputs[0])],
    "add": lambda dy, n: [_unbroadcast(dy, n.inputs[0].shape), _unbroadcast(dy, n.inputs[1].shape)],
    "sub": lambda dy, n: [_unbroadcast(dy, n.inputs[0].shape), _unbroadcast(neg(dy), n.inputs[1].shape)],
    "mul": lambda dy, n: [_unbroadcast(mul(dy, n.inputs[1]), n.inputs[0].shape),
                          _unbroadcast(mul(dy, n.inputs[0]), n.inputs[1].shape)],
    "div": lambda dy, n: [
        _unbroadcast(div(dy, n.inputs[1]), n.inputs[0].shape),
        _unbroadcast(neg(div(mul(dy, n.inputs[0]), mul(n.inputs[1], n.inputs[1]))), n.inputs[1].shape)],
    "matmul": lambda dy, n: [matmul(dy, transpose(n.inputs[1], (1, 0))),
                             matmul(transpose(n.inputs[0], (1, 0)), dy)],
    "sum": _g_sum,
    "mean": _g_mean,
    "transpose": _g_transpose,
    "slice": _g_slice,
    "concat": _g_concat,
    "reshape": lambda dy, n: [reshape(dy, n.inputs[0].shape)],
    "clone": lambda dy, n: [dy],
}

for _name, _fn in _GRADS.items():
    ENGINE.register_gradient(_name, _fn)

#: ops that run forward-only; calling grad through them raises MISSING_GRADIENT
FORWARD_ONLY = ("conv2d", "max")
DIFFERENTIABLE = tuple(_GRADS)
