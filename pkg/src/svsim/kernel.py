"""Deterministic discrete-event kernel.

Virtual time is kept in integer nanoseconds so that event ordering never
depends on floating-point rounding. Ties at the same fire time break by
scheduling sequence (FIFO), giving every run a total order.
"""

import heapq
from dataclasses import dataclass

NS_PER_S = 1_000_000_000


def s_to_ns(seconds: float) -> int:
    return round(seconds * NS_PER_S)


def ns_to_s(ns: int) -> float:
    return ns / NS_PER_S


class SchedulingInPastError(ValueError):
    pass


class HandlerError(RuntimeError):
    """A handler raised; carries the offending event's context."""

    def __init__(self, event, cause):
        super().__init__(
            f"handler failed at t={ns_to_s(event.fire_time_ns):.9f}s "
            f"seq={event.sequence} target={event.target} action={event.action}"
        )
        self.event = event
        self.cause = cause


@dataclass
class KernelStats:
    events_fired: int
    final_time_ns: int

    @property
    def final_time_s(self) -> float:
        return ns_to_s(self.final_time_ns)


class _Event:
    __slots__ = ("fire_time_ns", "sequence", "target", "action", "fn", "cancelled")

    def __init__(self, fire_time_ns, sequence, target, action, fn):
        self.fire_time_ns = fire_time_ns
        self.sequence = sequence
        self.target = target
        self.action = action
        self.fn = fn
        self.cancelled = False

    def __lt__(self, other):
        return (self.fire_time_ns, self.sequence) < (other.fire_time_ns, other.sequence)


class Kernel:
    """Single-threaded event loop; one instance per replication."""

    def __init__(self, trace: bool = False):
        self.now_ns = 0
        self._queue: list[_Event] = []
        self._seq = 0
        self._events_fired = 0
        self._by_id: dict[int, _Event] = {}
        self.trace: list[tuple[int, int, str, str]] | None = [] if trace else None

    @property
    def now_s(self) -> float:
        return ns_to_s(self.now_ns)

    def schedule(self, fire_time_ns: int, fn, target: str = "", action: str = "") -> int:
        """Enqueue ``fn`` to run at ``fire_time_ns``; returns a cancellable id."""
        if fire_time_ns < self.now_ns:
            raise SchedulingInPastError(
                f"fire time {fire_time_ns} ns is before current clock {self.now_ns} ns"
            )
        ev = _Event(fire_time_ns, self._seq, target, action, fn)
        self._seq += 1
        heapq.heappush(self._queue, ev)
        self._by_id[ev.sequence] = ev
        return ev.sequence

    def schedule_s(self, fire_time_s: float, fn, target: str = "", action: str = "") -> int:
        return self.schedule(s_to_ns(fire_time_s), fn, target, action)

    def cancel(self, event_id: int) -> bool:
        ev = self._by_id.pop(event_id, None)
        if ev is None or ev.cancelled:
            return False
        ev.cancelled = True
        return True

    def run_until(self, t_end_ns: int) -> KernelStats:
        """Fire all events with fire_time <= t_end_ns in (time, sequence) order."""
        if t_end_ns < self.now_ns:
            raise SchedulingInPastError(
                f"t_end {t_end_ns} ns is before current clock {self.now_ns} ns"
            )
        queue = self._queue
        last_fired_ns = self.now_ns
        while queue:
            ev = queue[0]
            if ev.fire_time_ns > t_end_ns:
                break
            heapq.heappop(queue)
            if ev.cancelled:
                continue
            self._by_id.pop(ev.sequence, None)
            self.now_ns = ev.fire_time_ns
            last_fired_ns = ev.fire_time_ns
            if self.trace is not None:
                self.trace.append((ev.fire_time_ns, ev.sequence, ev.target, ev.action))
            try:
                ev.fn()
            except Exception as exc:  # noqa: BLE001 - context is re-raised
                raise HandlerError(ev, exc) from exc
            self._events_fired += 1
        # Drained queue: clock rests at the last event; otherwise at t_end.
        self.now_ns = min(t_end_ns, last_fired_ns) if not queue else t_end_ns
        return KernelStats(self._events_fired, self.now_ns)

    def run_until_s(self, t_end_s: float) -> KernelStats:
        return self.run_until(s_to_ns(t_end_s))

    def dump_trace(self) -> str:
        """One line per fired event: ``time_ns,seq,target,action``."""
        if self.trace is None:
            raise ValueError("kernel was created with trace=False")
        return "\n".join(f"{t},{s},{tg},{a}" for t, s, tg, a in self.trace)
