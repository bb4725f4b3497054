"""Logical N-D shape -> physical 2D texel grid.

Size-1 dims are squeezed away first; squeezing never changes row-major
element order, so the squeezed tensor can be laid out row-major as-is.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np

from ..errors import TensorTooLargeError
from ..tensor import Shape, size_of

SINGLE = "single"
PACKED = "packed"
DEFAULT_MAX_TEXTURE_SIZE = 4096


def squeeze_shape(shape: Shape) -> tuple[Shape, tuple[int, ...]]:
    kept = tuple(i for i, d in enumerate(shape) if d != 1)
    squeezed = tuple(shape[i] for i in kept)
    return (squeezed or (1,)), kept


def fold(units: int, base: tuple[int, int], max_size: int) -> tuple[tuple[int, int], bool]:
    """Fit ``units`` texels on a grid no side of which exceeds ``max_size``.

    Returns ((rows, cols), direct) where direct means ``base`` was used
    unchanged. Otherwise rows is the smallest divisor >= ceil(sqrt(units))
    that fits; failing that, a near-square grid with zero padding.
    """
    rows, cols = base
    if rows <= max_size and cols <= max_size:
        return (rows, cols), True
    if units > max_size * max_size:
        raise TensorTooLargeError(
            f"{units} texels exceed the {max_size}x{max_size} texture capacity")
    lo = math.isqrt(units - 1) + 1 if units > 1 else 1
    for d in range(lo, min(units, max_size) + 1):
        if units % d == 0 and units // d <= max_size:
            return (d, units // d), False
    rows = lo
    return (rows, -(-units // rows)), False


@dataclass(frozen=True)
class TextureLayout:
    logical_shape: Shape
    squeezed_shape: Shape
    kept_axes: tuple[int, ...]
    rows: int
    cols: int
    packing: str = SINGLE
    direct: bool = True

    @property
    def channels(self) -> int:
        return 4 if self.packing == PACKED else 1

    @property
    def element_count(self) -> int:
        return size_of(self.logical_shape)

    @property
    def buffer_size(self) -> int:
        return self.rows * self.cols * self.channels

    @property
    def inner(self) -> tuple[int, int]:
        """Innermost two squeezed dims; a rank-1 squeeze is one row."""
        s = self.squeezed_shape
        return (1, s[0]) if len(s) == 1 else (s[-2], s[-1])

    @property
    def batch(self) -> int:
        return size_of(self.squeezed_shape[:-2])

    @property
    def block_grid(self) -> tuple[int, int]:
        r, c = self.inner
        return -(-r // 2), -(-c // 2)

    @property
    def key(self) -> str:
        dims = "x".join(map(str, self.logical_shape)) or "scalar"
        return f"{dims}:{self.rows}x{self.cols}:{self.packing}{'' if self.direct else ':folded'}"

    @cached_property
    def element_positions(self) -> np.ndarray:
        """Buffer index of every logical element, in row-major order."""
        n = self.element_count
        idx = np.arange(n, dtype=np.int64)
        if self.packing == SINGLE:
            return idx
        r_dim, c_dim = self.inner
        br, bc = self.block_grid
        b = idx // (r_dim * c_dim)
        r = (idx // c_dim) % r_dim
        c = idx % c_dim
        texel = (b * br + r // 2) * bc + c // 2
        return texel * 4 + (r % 2) * 2 + (c % 2)

    def encode(self, flat: np.ndarray) -> np.ndarray:
        buf = np.zeros(self.buffer_size, np.float32)
        buf[self.element_positions] = np.asarray(flat, np.float32).reshape(-1)
        return buf

    def decode(self, buf: np.ndarray) -> np.ndarray:
        return np.asarray(buf)[self.element_positions]

    def lanes(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(row, col, channel) of every texel slot that holds a logical element."""
        pos = self.element_positions
        texel = pos // self.channels
        return texel // self.cols, texel % self.cols, pos % self.channels


def compute_layout(shape, packing: str = SINGLE,
                   max_texture_size: int = DEFAULT_MAX_TEXTURE_SIZE) -> TextureLayout:
    shape = tuple(int(d) for d in shape)
    squeezed, kept = squeeze_shape(shape)
    if packing == SINGLE:
        last = squeezed[-1]
        prefix = size_of(squeezed[:-1])
        units, base = prefix * last, (prefix, last)
    elif packing == PACKED:
        r, c = (1, squeezed[0]) if len(squeezed) == 1 else (squeezed[-2], squeezed[-1])
        br, bc = -(-r // 2), -(-c // 2)
        b = size_of(squeezed[:-2])
        units, base = b * br * bc, (b * br, bc)
    else:
        raise ValueError(f"unknown packing {packing!r}")
    (rows, cols), direct = fold(units, base, max_texture_size)
    return TextureLayout(shape, squeezed, kept, rows, cols, packing, direct)
