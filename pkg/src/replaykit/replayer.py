"""Time-synchronized replay of recorded sessions back onto a bus.

Every envelope is scheduled against one common clock: with ``t0`` the
earliest record time in the plan and ``wall_start`` taken once after all
topic streams are ready, envelope ``e`` is published at::

    wall_start + (e.record_time - t0) / rate

In real time each topic gets its own thread and the threads meet at a start
barrier.  On a :class:`~replaykit.bus.VirtualClock` the streams are merged
into one deterministic schedule instead, advancing the clock (and anything
hooked to it, such as the simulator) up to each publish instant.
"""

from __future__ import annotations

import heapq
import logging
import threading
from dataclasses import dataclass, field
from fractions import Fraction

from .bus import Bus, TypeConflict, VirtualClock
from .messages import decode
from .store import DocStore, Envelope, Query

logger = logging.getLogger(__name__)

DEFAULT_TOLERANCE_NS = 20_000_000


class ReplayError(Exception):
    pass


class InvalidRate(ReplayError):
    pass


class ReplayAborted(ReplayError):
    pass


@dataclass
class ReplayPlan:
    streams: dict[str, list[Envelope]]
    t0: int
    rate: float = 1.0

    def __post_init__(self):
        if not self.rate > 0:
            raise InvalidRate(f"rate must be positive, got {self.rate}")

    @property
    def total(self) -> int:
        return sum(len(s) for s in self.streams.values())

    def offset(self, env: Envelope) -> Fraction:
        """Exact scheduled offset of ``env`` from the replay start, in ns."""
        return Fraction(env.record_time - self.t0) / Fraction(self.rate)

    @property
    def duration_ns(self) -> float:
        last = max((s[-1].record_time for s in self.streams.values() if s), default=self.t0)
        return float(Fraction(last - self.t0) / Fraction(self.rate))


@dataclass
class PublishRecord:
    topic: str
    index: int
    scheduled_ns: float
    actual_ns: int

    @property
    def lateness_ns(self) -> float:
        return self.actual_ns - self.scheduled_ns


@dataclass
class ReplayReport:
    planned: dict[str, int]
    records: list[PublishRecord] = field(default_factory=list)
    skipped: dict[str, int] = field(default_factory=dict)
    wall_start: int | None = None
    wall_duration_ns: int = 0
    partial: bool = False
    tolerance_ns: int = DEFAULT_TOLERANCE_NS

    @property
    def counts(self) -> dict[str, int]:
        out = {t: 0 for t in self.planned}
        for r in self.records:
            out[r.topic] += 1
        return out

    @property
    def published(self) -> int:
        return len(self.records)

    @property
    def max_lateness_ns(self) -> float:
        return max((abs(r.lateness_ns) for r in self.records), default=0.0)

    @property
    def within_tolerance(self) -> bool:
        return self.max_lateness_ns <= self.tolerance_ns

    @property
    def complete(self) -> bool:
        return not self.partial and self.counts == self.planned


def plan(store: DocStore, collection: str, q: Query | None = None, rate: float = 1.0) -> ReplayPlan:
    """Partition the envelopes matching ``q`` into per-topic streams."""
    if not rate > 0:
        raise InvalidRate(f"rate must be positive, got {rate}")
    envelopes = store.query(collection, q or Query())
    return plan_from_envelopes(envelopes, rate)


def plan_from_envelopes(envelopes, rate: float = 1.0) -> ReplayPlan:
    streams: dict[str, list[Envelope]] = {}
    for env in sorted(envelopes, key=lambda e: e.sort_key):
        streams.setdefault(env.topic, []).append(env)
    t0 = min((s[0].record_time for s in streams.values()), default=0)
    return ReplayPlan(streams, t0, rate)


class ActiveReplay:
    """A replay in progress.  :meth:`wait` blocks for the report;
    :meth:`cancel` stops it early and returns the partial report."""

    def __init__(self, plan: ReplayPlan, bus: Bus, tolerance_ns: int = DEFAULT_TOLERANCE_NS,
                 skip_late_ns: int | None = None):
        self.plan = plan
        self.bus = bus
        self.clock = bus.clock
        self.skip_late_ns = skip_late_ns
        self.report = ReplayReport({t: len(s) for t, s in plan.streams.items()}, tolerance_ns=tolerance_ns)
        self._cancel = threading.Event()
        self._lock = threading.Lock()
        self._done = threading.Event()
        self._threads: list[threading.Thread] = []
        self._barrier: threading.Barrier | None = None
        self._messages = {t: [decode(e.payload, e.type_name) for e in s] for t, s in plan.streams.items()}
        self._advertise()

    def _advertise(self) -> None:
        for topic, stream in self.plan.streams.items():
            type_name = stream[0].type_name
            known = self.bus.topics().get(topic)
            if known is None:
                self.bus.advertise(topic, type_name)
            elif known.type_name != type_name and self.bus.strict:
                raise TypeConflict(f"{topic} is {known.type_name} on the bus but {type_name} in the plan")

    # -- real time ---------------------------------------------------------

    def start(self) -> "ActiveReplay":
        if isinstance(self.clock, VirtualClock):
            self._run_virtual()
            return self
        topics = [t for t, s in self.plan.streams.items() if s]
        if not topics:
            self._finish(self.clock.now_ns())
            return self
        barrier = self._barrier = threading.Barrier(len(topics), action=self._take_wall_start)
        for topic in topics:
            th = threading.Thread(target=self._stream, args=(topic, barrier), name=f"replay{topic}", daemon=True)
            self._threads.append(th)
            th.start()
        threading.Thread(target=self._join_all, name="replay-join", daemon=True).start()
        return self

    def _take_wall_start(self) -> None:
        self.report.wall_start = self.clock.now_ns()

    def _stream(self, topic: str, barrier: threading.Barrier) -> None:
        try:
            barrier.wait()
        except threading.BrokenBarrierError:
            return
        start = self.report.wall_start
        for i, (env, msg) in enumerate(zip(self.plan.streams[topic], self._messages[topic])):
            if self._cancel.is_set():
                return
            due = start + self.plan.offset(env)
            if not self.clock.sleep_until(float(due), self._cancel):
                return
            if self.skip_late_ns is not None and self.clock.now_ns() - due > self.skip_late_ns:
                with self._lock:
                    self.report.skipped[topic] = self.report.skipped.get(topic, 0) + 1
                continue
            self._publish(topic, i, msg, due)

    def _publish(self, topic, index, msg, due) -> None:
        with self._lock:
            # Checked under the lock so nothing is published after cancel() returns.
            if self._cancel.is_set():
                return
            delivery = self.bus.publish(topic, msg)
            self.report.records.append(PublishRecord(topic, index, float(due), delivery.receipt_time))

    def _join_all(self) -> None:
        for th in self._threads:
            th.join()
        self._finish(self.clock.now_ns())

    def _finish(self, end: int) -> None:
        with self._lock:
            if self.report.wall_start is not None:
                self.report.wall_duration_ns = end - self.report.wall_start
            if self._cancel.is_set() and self.report.counts != self.report.planned:
                self.report.partial = True
        self._done.set()

    # -- virtual time ------------------------------------------------------

    def _run_virtual(self) -> None:
        start = self.clock.now_ns()
        self.report.wall_start = start
        merged = heapq.merge(
            *[
                [(self.plan.offset(e), e.seq, e.session_id, topic, i) for i, e in enumerate(stream)]
                for topic, stream in self.plan.streams.items()
            ]
        )
        for offset, _, _, topic, i in merged:
            if self._cancel.is_set():
                break
            due = start + offset
            self.clock.advance_to(int(due))
            self._publish(topic, i, self._messages[topic][i], due)
        self._finish(self.clock.now_ns())

    # -- control -----------------------------------------------------------

    def wait(self, timeout: float | None = None) -> ReplayReport:
        if not self._done.wait(timeout):
            raise TimeoutError("replay still running")
        return self.report

    def cancel(self) -> ReplayReport:
        with self._lock:
            self._cancel.set()
        if self._barrier is not None:
            # Streams still waiting at the barrier must be released.
            self._barrier.abort()
        for th in self._threads:
            th.join()
        self._done.wait()
        return self.report

    @property
    def running(self) -> bool:
        return not self._done.is_set()


def replay(plan: ReplayPlan, bus: Bus, tolerance_ns: int = DEFAULT_TOLERANCE_NS,
           skip_late_ns: int | None = None) -> ReplayReport:
    """Replay ``plan`` onto ``bus`` and block until every stream finishes."""
    return ActiveReplay(plan, bus, tolerance_ns, skip_late_ns).start().wait()


def start_replay(plan: ReplayPlan, bus: Bus, tolerance_ns: int = DEFAULT_TOLERANCE_NS,
                 skip_late_ns: int | None = None) -> ActiveReplay:
    return ActiveReplay(plan, bus, tolerance_ns, skip_late_ns).start()
