"""Deterministic discrete-event engine.

Simulated time only, in float milliseconds. Events fire in nondecreasing
time, ties broken by a monotone sequence counter, so two runs over the same
schedule produce identical logs byte for byte.
"""

from __future__ import annotations

import heapq
import json
from dataclasses import dataclass, field
from typing import Any, Callable, Optional


@dataclass(frozen=True)
class SimEvent:
    fire_time: float
    target_node: str
    payload: Any
    sequence: int


@dataclass
class EventHandle:
    """Returned by schedule(); cancel via Engine.cancel before the event fires."""

    event: SimEvent
    cancelled: bool = False
    fired: bool = False


@dataclass(frozen=True)
class LogRecord:
    t: float
    node: str
    kind: str
    detail: dict

    def to_json(self) -> str:
        return json.dumps(
            {"t": self.t, "node": self.node, "kind": self.kind, "detail": self.detail},
            sort_keys=True,
            separators=(",", ":"),
        )


def payload_kind(payload: Any) -> str:
    kind = getattr(payload, "kind", None)
    if isinstance(kind, str):
        return kind
    return type(payload).__name__


def payload_detail(payload: Any) -> dict:
    describe = getattr(payload, "describe", None)
    if callable(describe):
        return describe()
    return {}


@dataclass
class Engine:
    now: float = 0.0
    record_events: bool = True  # False keeps only log_custom records (big runs)
    log: list[LogRecord] = field(default_factory=list)
    _heap: list = field(default_factory=list)
    _sequence: int = 0

    def schedule(
        self,
        fire_time: float,
        node: str,
        payload: Any,
        action: Optional[Callable[[], None]] = None,
    ) -> EventHandle:
        """Enqueue an event; rejects times before the current simulated time."""
        if fire_time < self.now:
            raise ValueError(f"cannot schedule at t={fire_time} before now={self.now}")
        event = SimEvent(fire_time, node, payload, self._sequence)
        self._sequence += 1
        handle = EventHandle(event)
        heapq.heappush(self._heap, (fire_time, event.sequence, event, handle, action))
        return handle

    def cancel(self, handle: EventHandle) -> None:
        handle.cancelled = True

    def log_custom(self, t: float, node: str, kind: str, detail: dict) -> None:
        """Append a synthetic record (metrics, protocol markers) to the log."""
        self.log.append(LogRecord(t, node, kind, detail))

    def pending(self) -> int:
        return sum(1 for _, _, _, h, _ in self._heap if not h.cancelled)

    def run_until(self, t_end: float) -> list[LogRecord]:
        """Process every event with fire_time <= t_end; returns new records."""
        start = len(self.log)
        while self._heap and self._heap[0][0] <= t_end:
            _, _, event, handle, action = heapq.heappop(self._heap)
            if handle.cancelled:
                continue
            handle.fired = True
            self.now = event.fire_time
            if self.record_events:
                self.log.append(
                    LogRecord(
                        event.fire_time,
                        event.target_node,
                        payload_kind(event.payload),
                        payload_detail(event.payload),
                    )
                )
            if action is not None:
                action()
        self.now = max(self.now, t_end)
        return self.log[start:]

    def run_to_quiescence(self, t_max: float = float("inf")) -> list[LogRecord]:
        """Drain the queue (respecting t_max); returns new records."""
        start = len(self.log)
        while self._heap and self._heap[0][0] <= t_max:
            self.run_until(self._heap[0][0])
        return self.log[start:]
