"""Kernel catalogue shared by every backend.

Each kernel name maps to a shape/dtype inference function that also
validates and normalizes attributes, so backends only ever see checked
inputs.
"""
from __future__ import annotations

import math
from typing import Any, Callable, Sequence

from .errors import (AxisOutOfRangeError, BadPermutationError, BroadcastIncompatibleError,
                     ChannelMismatchError, ConcatShapeMismatchError, FilterLargerThanInputError,
                     InnerDimMismatchError, ShapeMismatchError, SliceOutOfBoundsError,
                     UnsupportedKernelError)
from .tensor import DType, Shape

UNARY = ("neg", "exp", "log", "relu", "sigmoid", "square", "step")
BINARY = ("add", "sub", "mul", "div")
REDUCE = ("sum", "mean", "max")
MOVEMENT = ("transpose", "slice", "concat")
ALL_KERNELS = UNARY + BINARY + ("matmul", "conv2d") + REDUCE + MOVEMENT

Attrs = dict[str, Any]
Inferred = tuple[Shape, DType, Attrs]


def broadcast_shapes(a: Sequence[int], b: Sequence[int]) -> Shape:
    """Trailing-aligned broadcasting; size-1 dims stretch."""
    out = []
    for i in range(1, max(len(a), len(b)) + 1):
        da = a[-i] if i <= len(a) else 1
        db = b[-i] if i <= len(b) else 1
        if da != db and da != 1 and db != 1:
            raise BroadcastIncompatibleError(f"cannot broadcast {list(a)} with {list(b)}")
        out.append(db if da == 1 else da)
    return tuple(reversed(out))


def normalize_axes(axes, rank: int) -> tuple[int, ...]:
    """None or [] mean every axis; negative axes count from the end."""
    if axes is None:
        return tuple(range(rank))
    if isinstance(axes, int):
        axes = [axes]
    axes = list(axes)
    if not axes:
        return tuple(range(rank))
    norm = []
    for ax in axes:
        a = ax + rank if ax < 0 else ax
        if not 0 <= a < rank:
            raise AxisOutOfRangeError(f"axis {ax} out of range for rank {rank}")
        if a in norm:
            raise AxisOutOfRangeError(f"duplicate axis {ax}")
        norm.append(a)
    return tuple(sorted(norm))


def conv2d_geometry(x_shape: Shape, f_shape: Shape, strides, padding: str):
    """Return (out_h, out_w, pad_top, pad_left)."""
    _, h, w, _ = x_shape
    kh, kw = f_shape[0], f_shape[1]
    sh, sw = strides
    if padding == "valid":
        out_h = (h - kh) // sh + 1
        out_w = (w - kw) // sw + 1
        return out_h, out_w, 0, 0
    out_h = -(-h // sh)
    out_w = -(-w // sw)
    pad_h = max((out_h - 1) * sh + kh - h, 0)
    pad_w = max((out_w - 1) * sw + kw - w, 0)
    # the odd pad pixel goes on the high side
    return out_h, out_w, pad_h // 2, pad_w // 2


def _float_result(dtypes: Sequence[DType]) -> DType:
    return DType.float32 if any(d == DType.float32 for d in dtypes) else DType.int32


def _unary(shapes, dtypes, attrs) -> Inferred:
    return shapes[0], DType.float32, {}


def _binary(name):
    def infer(shapes, dtypes, attrs) -> Inferred:
        out = broadcast_shapes(shapes[0], shapes[1])
        dtype = DType.float32 if name == "div" else _float_result(dtypes)
        return out, dtype, {}
    return infer


def _matmul(shapes, dtypes, attrs) -> Inferred:
    a, b = shapes
    if len(a) != 2 or len(b) != 2:
        raise ShapeMismatchError(f"matmul expects rank-2 operands, got {list(a)} and {list(b)}")
    if a[1] != b[0]:
        raise InnerDimMismatchError(f"inner dimensions differ: {list(a)} x {list(b)}")
    return (a[0], b[1]), DType.float32, {}


def _conv2d(shapes, dtypes, attrs) -> Inferred:
    x, f = shapes
    if len(x) != 4 or len(f) != 4:
        raise ShapeMismatchError(f"conv2d expects NHWC input and HWIO filter, got {list(x)}, {list(f)}")
    if x[3] != f[2]:
        raise ChannelMismatchError(f"input has {x[3]} channels, filter expects {f[2]}")
    strides = attrs.get("strides", (1, 1))
    if isinstance(strides, int):
        strides = (strides, strides)
    strides = tuple(int(s) for s in strides)
    if len(strides) != 2 or min(strides) < 1:
        raise ShapeMismatchError(f"strides must be two integers >= 1, got {strides}")
    padding = attrs.get("padding", "valid")
    if padding not in ("valid", "same"):
        raise ShapeMismatchError(f"padding must be 'valid' or 'same', got {padding!r}")
    if padding == "valid" and (f[0] > x[1] or f[1] > x[2]):
        raise FilterLargerThanInputError(f"filter {f[:2]} larger than input {x[1:3]}")
    out_h, out_w, _, _ = conv2d_geometry(x, f, strides, padding)
    return (x[0], out_h, out_w, f[3]), DType.float32, {"strides": strides, "padding": padding}


def _reduce(name):
    def infer(shapes, dtypes, attrs) -> Inferred:
        shape = shapes[0]
        axes = normalize_axes(attrs.get("axes"), len(shape))
        out = tuple(d for i, d in enumerate(shape) if i not in axes)
        dtype = DType.float32 if name == "mean" else _float_result(dtypes)
        return out, dtype, {"axes": axes}
    return infer


def _transpose(shapes, dtypes, attrs) -> Inferred:
    shape = shapes[0]
    perm = attrs.get("perm")
    if perm is None:
        perm = tuple(reversed(range(len(shape))))
    perm = tuple(int(p) for p in perm)
    if sorted(perm) != list(range(len(shape))):
        raise BadPermutationError(f"{list(perm)} is not a permutation of rank {len(shape)}")
    return tuple(shape[p] for p in perm), dtypes[0], {"perm": perm}


def _slice(shapes, dtypes, attrs) -> Inferred:
    shape = shapes[0]
    begin = tuple(int(b) for b in attrs["begin"])
    size = list(attrs.get("size", [-1] * len(shape)))
    if len(begin) != len(shape) or len(size) != len(shape):
        raise SliceOutOfBoundsError(f"begin/size rank must equal tensor rank {len(shape)}")
    for i, d in enumerate(shape):
        if size[i] == -1:
            size[i] = d - begin[i]
        if begin[i] < 0 or size[i] < 0 or begin[i] + size[i] > d:
            raise SliceOutOfBoundsError(
                f"slice begin={list(begin)} size={size} exceeds shape {list(shape)}")
    return tuple(size), dtypes[0], {"begin": begin, "size": tuple(size)}


def _concat(shapes, dtypes, attrs) -> Inferred:
    if not shapes:
        raise ConcatShapeMismatchError("concat needs at least one tensor")
    rank = len(shapes[0])
    axis = int(attrs.get("axis", 0))
    if axis < 0:
        axis += rank
    if not 0 <= axis < rank:
        raise AxisOutOfRangeError(f"concat axis {attrs.get('axis')} out of range for rank {rank}")
    for s in shapes[1:]:
        if len(s) != rank or any(s[i] != shapes[0][i] for i in range(rank) if i != axis):
            raise ConcatShapeMismatchError(
                f"shapes {[list(x) for x in shapes]} disagree off axis {axis}")
    out = list(shapes[0])
    out[axis] = sum(s[axis] for s in shapes)
    return tuple(out), _float_result(dtypes) if len(set(dtypes)) > 1 else dtypes[0], {"axis": axis}


_INFER: dict[str, Callable[..., Inferred]] = {
    **{k: _unary for k in UNARY},
    **{k: _binary(k) for k in BINARY},
    "matmul": _matmul,
    "conv2d": _conv2d,
    **{k: _reduce(k) for k in REDUCE},
    "transpose": _transpose,
    "slice": _slice,
    "concat": _concat,
}

ARITY = {**{k: 1 for k in UNARY}, **{k: 2 for k in BINARY}, "matmul": 2, "conv2d": 2,
         **{k: 1 for k in REDUCE}, "transpose": 1, "slice": 1}


def infer(name: str, shapes: Sequence[Shape], dtypes: Sequence[DType], attrs: Attrs | None) -> Inferred:
    try:
        fn = _INFER[name]
    except KeyError:
        raise UnsupportedKernelError(f"unknown kernel '{name}'") from None
    want = ARITY.get(name)
    if want is not None and len(shapes) != want:
        raise ShapeMismatchError(f"kernel '{name}' takes {want} inputs, got {len(shapes)}")
    return fn(list(shapes), list(dtypes), dict(attrs or {}))


def reduced_count(shape: Shape, axes: Sequence[int]) -> int:
    return math.prod(shape[a] for a in axes)
