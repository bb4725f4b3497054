from __future__ import annotations

import abc
import asyncio
from dataclasses import dataclass, field
from typing import Any, Callable, NamedTuple

import numpy as np

from ..tensor import DType, Shape


class TensorInfo(NamedTuple):
    data_id: int
    shape: Shape
    dtype: DType


@dataclass
class KernelRecord:
    """One kernel invocation as seen by profiling.

    ``elapsed_ms`` stays None until the backend has actually executed the
    kernel; compile time is kept apart and never counted as kernel time.
    """

    name: str
    output_shape: Shape
    output_bytes: int
    elapsed_ms: float | None = None
    compile_ms: float = 0.0
    extra: dict[str, Any] = field(default_factory=dict)


class ReadHandle:
    """Completion handle for an asynchronous readback.

    ``ready`` polls without doing any work. ``result()`` blocks (drives the
    device to completion). Awaiting the handle yields to the event loop
    between polls while the device advances one command per tick.
    """

    def __init__(self, poll: Callable[[], bool], finish: Callable[[], np.ndarray],
                 step: Callable[[], None] | None = None):
        self._poll = poll
        self._finish = finish
        self._step = step
        self._value: np.ndarray | None = None

    @property
    def ready(self) -> bool:
        return self._value is not None or self._poll()

    def result(self) -> np.ndarray:
        if self._value is None:
            self._value = self._finish()
        return self._value

    def __await__(self):
        return self._wait().__await__()

    async def _wait(self) -> np.ndarray:
        while not self.ready:
            if self._step is not None:
                self._step()
            await asyncio.sleep(0)
        return self.result()


class Backend(abc.ABC):
    """Kernel set plus storage for tensor data."""

    name: str = "abstract"
    epsilon: float = float(np.float32(1e-8))

    @abc.abstractmethod
    def write(self, data_id: int, values: np.ndarray, shape: Shape, dtype: DType,
              pinned: bool = False) -> None: ...

    @abc.abstractmethod
    def read(self, data_id: int) -> np.ndarray: ...

    @abc.abstractmethod
    def read_async(self, data_id: int) -> ReadHandle: ...

    @abc.abstractmethod
    def dispose_data(self, data_id: int) -> None: ...

    @abc.abstractmethod
    def run_kernel(self, name: str, inputs: list[TensorInfo], attrs: dict, output: TensorInfo,
                   record: KernelRecord, pinned: bool = False) -> None: ...

    @abc.abstractmethod
    def has_kernel(self, name: str) -> bool: ...

    def flush(self) -> None:
        """Complete all outstanding device work."""

    def memory(self) -> dict[str, int]:
        return {"device_bytes": 0}

    def is_materialized(self, data_id: int) -> bool:
        return True

    def unpin(self, data_id: int) -> None:
        """Allow the data to be paged out again (no-op without paging)."""
