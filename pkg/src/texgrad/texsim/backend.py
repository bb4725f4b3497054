"""Backend that emulates a WebGL device with virtual textures.

Kernels are compiled to DSL programs and queued; nothing is evaluated until
a read (or flush) needs the result. Uploads and kernel outputs go through
the active precision profile's quantizer.
"""
from __future__ import annotations

import itertools
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..backends.base import Backend, KernelRecord, ReadHandle, TensorInfo
from ..dsl.compiler import INPUT_NAMES, SUPPORTED_OPS, KernelCache, KernelProgram, run_program
from ..errors import DisposedTensorError, OutOfMemoryError, PendingWorkError
from ..tensor import DType
from .layout import DEFAULT_MAX_TEXTURE_SIZE, PACKED, SINGLE, TextureLayout, compute_layout
from .precision import F32, PrecisionProfile, get_profile
from .queue import AUTO_FLUSH_PENDING, CommandQueue
from .textures import IN_USE, PAGED_OUT, TexturePool, VirtualTexture

DEFAULT_PAGE_THRESHOLD = 256 * 1024 * 1024
LANES_PER_TASK = 16384


@dataclass(eq=False)
class _Entry:
    data_id: int
    layout: TextureLayout
    dtype: DType
    texture: VirtualTexture
    pinned: bool
    producer: int  # queue position of the producing command; 0 for uploads
    last_used: int


@dataclass(eq=False)
class _Command:
    program: KernelProgram
    inputs: list  # (texture, stored layout, layout the program expects)
    output: VirtualTexture
    record: KernelRecord


class TexSimBackend(Backend):
    name = "texsim"

    def __init__(self, profile: PrecisionProfile | str = F32, packing: str = SINGLE,
                 max_texture_size: int = DEFAULT_MAX_TEXTURE_SIZE,
                 page_threshold: int = DEFAULT_PAGE_THRESHOLD, workers: int = 1,
                 max_pending: int = AUTO_FLUSH_PENDING):
        if packing not in (SINGLE, PACKED):
            raise ValueError(f"packing must be '{SINGLE}' or '{PACKED}', got {packing!r}")
        self._profile = get_profile(profile)
        self.packing = packing
        self.max_texture_size = int(max_texture_size)
        self.page_threshold = int(page_threshold)
        self.workers = max(1, int(workers))
        self.pool = TexturePool(self._profile.bytes_per_channel)
        self.cache = KernelCache()
        self.queue = CommandQueue(self._execute, max_pending)
        self._entries: dict[int, _Entry] = {}
        self._tick = itertools.count(1)
        self._executor: ThreadPoolExecutor | None = None
        self.texel_evaluations = 0
        self.pages_out = 0
        self.pages_in = 0
        self.gpu_ms = 0.0

    @classmethod
    def from_env(cls) -> "TexSimBackend":
        env = os.environ
        return cls(profile=env.get("TEXGRAD_PROFILE", "f32"),
                   max_texture_size=int(env.get("TEXGRAD_MAX_TEXTURE_SIZE", DEFAULT_MAX_TEXTURE_SIZE)),
                   page_threshold=int(env.get("TEXGRAD_PAGE_THRESHOLD", DEFAULT_PAGE_THRESHOLD)))

    # configuration

    @property
    def profile(self) -> PrecisionProfile:
        return self._profile

    @property
    def epsilon(self) -> float:
        return self._profile.epsilon

    def set_profile(self, profile: PrecisionProfile | str) -> None:
        if len(self.queue):
            raise PendingWorkError(f"{len(self.queue)} queued commands; flush before switching profile")
        self._profile = get_profile(profile)
        self.pool.bytes_per_channel = self._profile.bytes_per_channel
        self.cache.clear()

    def layout_for(self, shape) -> TextureLayout:
        return compute_layout(shape, self.packing, self.max_texture_size)

    # storage

    def _entry(self, data_id: int) -> _Entry:
        try:
            return self._entries[data_id]
        except KeyError:
            raise DisposedTensorError(f"data {data_id} is not resident on texsim") from None

    def _bytes_for(self, layout: TextureLayout) -> int:
        return layout.rows * layout.cols * layout.channels * self.pool.bytes_per_channel

    def _check_capacity(self, layout: TextureLayout) -> None:
        nbytes = self._bytes_for(layout)
        if nbytes > self.page_threshold and not self.pool.idle_recyclable() and \
                not any(self._evictable(e) for e in self._entries.values()):
            raise OutOfMemoryError(
                f"a {nbytes}-byte texture exceeds the {self.page_threshold}-byte paging threshold "
                f"and nothing can be evicted")

    def write(self, data_id, values, shape, dtype, pinned=False):
        layout = self.layout_for(shape)
        self._check_capacity(layout)
        tex = self.pool.acquire(layout.rows, layout.cols, layout.channels, idle_only=True)
        flat = np.asarray(values, np.float32).reshape(-1)
        tex.data = layout.encode(self._profile.quantize(flat))
        self._entries[data_id] = _Entry(data_id, layout, DType.of(dtype), tex, pinned, 0, next(self._tick))
        self._maybe_page()

    def unpin(self, data_id: int) -> None:
        entry = self._entries.get(data_id)
        if entry is not None:
            entry.pinned = False

    def _decode(self, entry: _Entry) -> np.ndarray:
        tex = entry.texture
        buf = tex.cpu_copy if tex.state == PAGED_OUT else tex.data
        return np.array(entry.layout.decode(buf), np.float32)

    def read(self, data_id):
        entry = self._entry(data_id)
        if not self.queue.passed(entry.producer):
            self.queue.execute_pending(entry.producer)
        entry.last_used = next(self._tick)
        return self._decode(entry)

    def read_async(self, data_id):
        entry = self._entry(data_id)
        fence = self.queue.fence()

        def finish():
            self.queue.execute_pending(fence)
            return self._decode(entry)

        return ReadHandle(lambda: self.queue.passed(fence), finish, self.queue.step)

    def dispose_data(self, data_id):
        entry = self._entries.pop(data_id, None)
        if entry is not None:
            self.pool.release(entry.texture)

    def is_materialized(self, data_id):
        return self.queue.passed(self._entry(data_id).producer)

    def flush(self):
        self.queue.execute_pending()

    # kernels

    def has_kernel(self, name):
        return name in SUPPORTED_OPS

    def _page_in(self, entry: _Entry) -> None:
        old = entry.texture
        lo = entry.layout
        tex = self.pool.acquire(lo.rows, lo.cols, lo.channels, idle_only=True)
        tex.data = old.cpu_copy
        old.cpu_copy = None
        entry.texture = tex
        self.pages_in += 1

    def run_kernel(self, name, inputs: list[TensorInfo], attrs, output: TensorInfo,
                   record: KernelRecord, pinned=False):
        entries = [self._entry(t.data_id) for t in inputs]
        wanted = [self.layout_for(t.shape) for t in inputs]
        out_layout = self.layout_for(output.shape)
        compiled = self.cache.compilations
        start = time.perf_counter()
        program = self.cache.get(name, wanted, out_layout, self._profile, attrs)
        if self.cache.compilations != compiled:
            record.compile_ms = (time.perf_counter() - start) * 1000.0
        record.extra["cache_key"] = program.cache_key
        self._check_capacity(out_layout)
        tick = next(self._tick)
        for e in entries:
            if e.texture.state == PAGED_OUT:
                self._page_in(e)
            e.texture.pending += 1
            e.last_used = tick
        tex = self.pool.acquire(out_layout.rows, out_layout.cols, out_layout.channels)
        tex.pending += 1
        position = self.queue.total_enqueued + 1
        self._entries[output.data_id] = _Entry(output.data_id, out_layout, output.dtype, tex,
                                               pinned, position, tick)
        command = _Command(program, [(e.texture, e.layout, w) for e, w in zip(entries, wanted)],
                           tex, record)
        self._maybe_page()
        self.queue.enqueue(command)

    def _input_buffer(self, tex: VirtualTexture, stored: TextureLayout, wanted: TextureLayout):
        buf = tex.data
        # a reshape shares data under a new logical shape; single storage is
        # row-major in every layout, packed storage may need re-blocking
        if stored.packing == PACKED and stored != wanted and not np.array_equal(
                stored.element_positions, wanted.element_positions):
            buf = wanted.encode(stored.decode(buf))
        return buf

    def _execute(self, command: _Command) -> None:
        program = command.program
        start = time.perf_counter()
        try:
            textures = {INPUT_NAMES[i]: self._input_buffer(*spec) for i, spec in enumerate(command.inputs)}
            layout = program.output_layout
            out = np.zeros(layout.buffer_size, np.float32)
            lanes = layout.element_count
            if self.workers > 1 and lanes > LANES_PER_TASK:
                if self._executor is None:
                    self._executor = ThreadPoolExecutor(self.workers)
                chunks = [np.arange(i, min(i + LANES_PER_TASK, lanes))
                          for i in range(0, lanes, LANES_PER_TASK)]
                # workers write disjoint slots of one buffer
                list(self._executor.map(lambda c: run_program(program, textures, c, out), chunks))
            else:
                run_program(program, textures, None, out)
            command.output.data = out
            self.texel_evaluations += lanes
        finally:
            for tex, _, _ in command.inputs:
                tex.pending -= 1
            command.output.pending -= 1
        elapsed = (time.perf_counter() - start) * 1000.0
        command.record.elapsed_ms = elapsed
        self.gpu_ms += elapsed
        self._maybe_page()

    # paging

    def _evictable(self, entry: _Entry) -> bool:
        tex = entry.texture
        return (tex.state == IN_USE and not entry.pinned and tex.pending == 0
                and self.queue.passed(entry.producer))

    def _maybe_page(self) -> None:
        pool = self.pool
        if pool.bytes_in_textures <= self.page_threshold:
            return
        for tex in pool.idle_recyclable():
            pool.delete(tex)
            if pool.bytes_in_textures <= self.page_threshold:
                return
        victims = sorted((e for e in self._entries.values() if self._evictable(e)),
                         key=lambda e: e.last_used)
        for entry in victims:
            pool.page_out(entry.texture)
            self.pages_out += 1
            if pool.bytes_in_textures <= self.page_threshold:
                return

    # introspection

    @property
    def executed_count(self) -> int:
        return self.queue.executed_count

    def texture_state(self, data_id: int) -> str:
        return self._entry(data_id).texture.state

    def texture_of(self, data_id: int) -> VirtualTexture:
        return self._entry(data_id).texture

    def memory(self):
        paged = sum(e.texture.nbytes for e in self._entries.values() if e.texture.state == PAGED_OUT)
        return {
            "device_bytes": self.pool.bytes_in_textures,
            "textures_created": self.pool.textures_created,
            "textures_recyclable": self.pool.recyclable_count,
            "paged_out_bytes": paged,
            "pending_commands": len(self.queue),
        }
