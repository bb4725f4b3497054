"""FIFO device command queue with fences."""
from __future__ import annotations

from collections import deque
from dataclasses import dataclass
from typing import Any, Callable

AUTO_FLUSH_PENDING = 1000


@dataclass(frozen=True)
class Fence:
    id: int
    position: int  # number of commands enqueued before the fence


class CommandQueue:
    """Commands run strictly in enqueue order.

    A fence passes once every command enqueued before it has executed;
    since execution is FIFO and never rolls back, fences pass in insertion
    order and stay passed.
    """

    def __init__(self, execute: Callable[[Any], None], max_pending: int = AUTO_FLUSH_PENDING):
        self._execute = execute
        self.max_pending = max_pending
        self.pending: deque = deque()
        self.total_enqueued = 0
        self.executed_count = 0
        self._fences = 0

    def __len__(self) -> int:
        return len(self.pending)

    def enqueue(self, command) -> int:
        """Append a command; returns its 1-based position in the global order."""
        self.pending.append(command)
        self.total_enqueued += 1
        position = self.total_enqueued
        if len(self.pending) > self.max_pending:
            self.execute_pending()
        return position

    def fence(self) -> Fence:
        self._fences += 1
        return Fence(self._fences, self.total_enqueued)

    def passed(self, fence: Fence | int) -> bool:
        position = fence.position if isinstance(fence, Fence) else fence
        return self.executed_count >= position

    def step(self) -> bool:
        """Execute the oldest pending command, if any."""
        if not self.pending:
            return False
        command = self.pending.popleft()
        try:
            self._execute(command)
        finally:
            self.executed_count += 1
        return True

    def execute_pending(self, upto: Fence | int | None = None) -> None:
        target = self.total_enqueued if upto is None else (
            upto.position if isinstance(upto, Fence) else int(upto))
        while self.executed_count < target and self.pending:
            self.step()
