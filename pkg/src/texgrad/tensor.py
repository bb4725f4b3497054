"""Tensors, dtypes and the reference-counted containers behind them.

A :class:`Tensor` is an immutable view (shape + dtype) over a
:class:`DataContainer`. Several tensors may point at the same container;
reshape and clone only bump the container's reference count.
"""
from __future__ import annotations

import enum
import itertools
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Any, Iterable, Sequence

import numpy as np

from .errors import DisposedTensorError, RankTooLargeError, ShapeMismatchError

if TYPE_CHECKING:
    from .engine import Engine, ReadHandle

MAX_RANK = 6

Shape = tuple[int, ...]


class DType(str, enum.Enum):
    float32 = "float32"
    int32 = "int32"
    bool = "bool"
    # quantized weight storage only, never a live tensor dtype
    uint8 = "uint8"

    @property
    def width(self) -> int:
        return _WIDTHS[self]

    @property
    def numpy(self) -> np.dtype:
        return np.dtype(_NUMPY[self])

    @classmethod
    def of(cls, value: "DType | str") -> "DType":
        if isinstance(value, DType):
            return value
        try:
            return cls(str(value))
        except ValueError:
            from .errors import InvalidDTypeError
            raise InvalidDTypeError(f"unknown dtype {value!r}") from None


_WIDTHS = {DType.float32: 4, DType.int32: 4, DType.bool: 1, DType.uint8: 1}
_NUMPY = {DType.float32: np.float32, DType.int32: np.int32, DType.bool: np.bool_, DType.uint8: np.uint8}


def as_shape(dims: Iterable[int]) -> Shape:
    shape = tuple(int(d) for d in dims)
    if any(d < 0 for d in shape):
        raise ShapeMismatchError(f"negative dimension in shape {shape}")
    if len(shape) > MAX_RANK:
        raise RankTooLargeError(f"rank {len(shape)} exceeds the maximum of {MAX_RANK}")
    return shape


def size_of(shape: Sequence[int]) -> int:
    """Number of elements; the empty product is 1."""
    return math.prod(shape)


def strides_of(shape: Sequence[int]) -> tuple[int, ...]:
    """Row-major element strides."""
    strides = []
    acc = 1
    for d in reversed(shape):
        strides.append(acc)
        acc *= d
    return tuple(reversed(strides))


_ids = itertools.count(1)


def next_id() -> int:
    return next(_ids)


@dataclass(eq=False)
class DataContainer:
    """Bookkeeping for one backend buffer.

    The values themselves live in the owning backend; ``values`` on the
    container is resolved lazily through it and may be ABSENT (deferred or
    paged out) from the backend's point of view.
    """

    id: int
    dtype: DType
    size: int
    backend: Any
    ref_count: int = 1

    @property
    def byte_size(self) -> int:
        return self.size * self.dtype.width


class Tensor:
    """Immutable N-D array handle."""

    __array_priority__ = 1000

    def __init__(self, engine: "Engine", shape: Shape, dtype: DType, data_id: int):
        self.id = next_id()
        self.shape = shape
        self.dtype = dtype
        self.data_id = data_id
        self.disposed = False
        self._engine = engine

    @property
    def rank(self) -> int:
        return len(self.shape)

    @property
    def size(self) -> int:
        return size_of(self.shape)

    @property
    def nbytes(self) -> int:
        return self.size * self.dtype.width

    def _check_live(self) -> None:
        if self.disposed:
            raise DisposedTensorError(f"tensor {self.id} is disposed")

    # data access

    def data_sync(self) -> np.ndarray:
        """Blocking read of the flat row-major values."""
        self._check_live()
        return self._engine.read(self)

    def data(self) -> "ReadHandle":
        """Non-blocking read; returns a handle that completes once the data is computed."""
        self._check_live()
        return self._engine.read_async(self)

    def numpy(self) -> np.ndarray:
        return self.data_sync().reshape(self.shape)

    def tolist(self) -> Any:
        return self.numpy().tolist()

    def item(self) -> float | int | bool:
        if self.size != 1:
            raise ShapeMismatchError(f"item() needs a single element, tensor has {self.size}")
        return self.data_sync()[0].item()

    def print(self) -> None:
        print(f"Tensor {list(self.shape)} {self.dtype.value}\n{self.numpy()}")

    # lifecycle

    def dispose(self) -> None:
        self._engine.dispose_tensor(self)

    def reshape(self, shape: Sequence[int]) -> "Tensor":
        return self._engine.reshape(self, shape)

    def clone(self) -> "Tensor":
        return self._engine.clone(self)

    def __repr__(self) -> str:
        state = "disposed" if self.disposed else f"data={self.data_id}"
        return f"Tensor(shape={list(self.shape)}, dtype={self.dtype.value}, {state})"

    # arithmetic sugar

    def __add__(self, other):
        from . import ops
        return ops.add(self, other)

    def __radd__(self, other):
        from . import ops
        return ops.add(other, self)

    def __sub__(self, other):
        from . import ops
        return ops.sub(self, other)

    def __rsub__(self, other):
        from . import ops
        return ops.sub(other, self)

    def __mul__(self, other):
        from . import ops
        return ops.mul(self, other)

    def __rmul__(self, other):
        from . import ops
        return ops.mul(other, self)

    def __truediv__(self, other):
        from . import ops
        return ops.div(self, other)

    def __rtruediv__(self, other):
        from . import ops
        return ops.div(other, self)

    def __neg__(self):
        from . import ops
        return ops.neg(self)

    def __matmul__(self, other):
        from . import ops
        return ops.matmul(self, other)


class Variable(Tensor):
    """A mutable tensor slot: ``assign`` swaps the backing container.

    Variables are never tracked by tidy scopes.
    """

    def __init__(self, engine: "Engine", shape: Shape, dtype: DType, data_id: int,
                 name: str | None = None, trainable: bool = True):
        super().__init__(engine, shape, dtype, data_id)
        self.name = name or f"variable_{self.id}"
        self.trainable = trainable

    def assign(self, value: Tensor) -> None:
        self._engine.assign(self, value)
