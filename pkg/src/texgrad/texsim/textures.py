"""Virtual textures, the shape-keyed recycler and CPU paging bookkeeping."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

IN_USE = "inUse"
RECYCLABLE = "recyclable"
PAGED_OUT = "pagedOut"

_ids = itertools.count(1)


@dataclass(eq=False)
class VirtualTexture:
    rows: int
    cols: int
    channels: int
    nbytes: int
    id: int = field(default_factory=lambda: next(_ids))
    data: np.ndarray | None = None
    state: str = IN_USE
    cpu_copy: np.ndarray | None = None
    # queued commands that will still read or write this texture
    pending: int = 0

    @property
    def key(self) -> tuple[int, int, int]:
        return self.rows, self.cols, self.channels


class TexturePool:
    """Allocates textures, recycles them by (rows, cols, channels).

    ``bytes_in_textures`` counts every allocated texture, recyclable ones
    included; only deletion or paging gives memory back.
    """

    def __init__(self, bytes_per_channel: int = 4):
        self.bytes_per_channel = bytes_per_channel
        self.free: dict[tuple[int, int, int], list[VirtualTexture]] = {}
        self.textures_created = 0
        self.textures_deleted = 0
        self.bytes_in_textures = 0

    def acquire(self, rows: int, cols: int, channels: int, idle_only: bool = False) -> VirtualTexture:
        """Reuse a recyclable texture of the same shape, else allocate.

        ``idle_only`` restricts reuse to textures no queued command still
        touches; uploads need that because they write immediately, whereas
        a kernel output is written after every earlier command has run.
        """
        bucket = self.free.get((rows, cols, channels), [])
        for i, tex in enumerate(bucket):
            if not idle_only or tex.pending == 0:
                bucket.pop(i)
                tex.state = IN_USE
                return tex
        tex = VirtualTexture(rows, cols, channels, rows * cols * channels * self.bytes_per_channel)
        self.textures_created += 1
        self.bytes_in_textures += tex.nbytes
        return tex

    def release(self, tex: VirtualTexture) -> None:
        if tex.state == PAGED_OUT:
            tex.cpu_copy = None
            return
        tex.state = RECYCLABLE
        self.free.setdefault(tex.key, []).append(tex)

    def delete(self, tex: VirtualTexture) -> None:
        bucket = self.free.get(tex.key, [])
        if tex in bucket:
            bucket.remove(tex)
        self._reclaim(tex)

    def page_out(self, tex: VirtualTexture) -> None:
        tex.cpu_copy = tex.data
        tex.data = None
        tex.state = PAGED_OUT
        self.bytes_in_textures -= tex.nbytes

    def idle_recyclable(self) -> list[VirtualTexture]:
        return [t for bucket in self.free.values() for t in bucket if t.pending == 0]

    @property
    def recyclable_count(self) -> int:
        return sum(len(b) for b in self.free.values())

    def _reclaim(self, tex: VirtualTexture) -> None:
        tex.data = None
        tex.state = "deleted"
        self.bytes_in_textures -= tex.nbytes
        self.textures_deleted += 1
