"""In-process publish/subscribe bus with per-topic ordering.

Every delivery is stamped with a receipt time taken from the bus clock, a
single monotonic nanosecond counter.  Topics are typed; subscribers each get
their own bounded queue and see deliveries in publication order.
"""

from __future__ import annotations

import queue
import re
import threading
import time
from dataclasses import dataclass

from .messages import TypedMessage

TOPIC_RE = re.compile(r"(/[A-Za-z0-9_]+)+")

BLOCK = "block"
DROP = "drop"


class BusError(Exception):
    pass


class TypeConflict(BusError):
    pass


class UnknownTopic(BusError):
    pass


class InvalidTopic(BusError):
    pass


class MonotonicClock:
    """Nanoseconds since construction, from ``time.monotonic_ns``."""

    def __init__(self):
        self._epoch = time.monotonic_ns()

    def now_ns(self) -> int:
        return time.monotonic_ns() - self._epoch

    def sleep_until(self, deadline_ns: float, cancel: threading.Event | None = None) -> bool:
        """Block until ``deadline_ns``; returns False if ``cancel`` fired first."""
        while True:
            remaining = (deadline_ns - self.now_ns()) / 1e9
            if remaining <= 0:
                return not (cancel is not None and cancel.is_set())
            if cancel is not None:
                if cancel.wait(remaining):
                    return False
            else:
                time.sleep(remaining)


class VirtualClock:
    """Manually advanced clock for simulated time.

    ``advance_to`` runs registered hooks (e.g. a simulator stepping itself
    forward) before moving the clock.
    """

    def __init__(self, start_ns: int = 0):
        self._now = start_ns
        self._hooks = []

    def now_ns(self) -> int:
        return self._now

    def set_ns(self, t_ns: int) -> None:
        if t_ns < self._now:
            raise ValueError("virtual clock cannot move backwards")
        self._now = t_ns

    def add_hook(self, hook) -> None:
        self._hooks.append(hook)

    def remove_hook(self, hook) -> None:
        self._hooks.remove(hook)

    def advance_to(self, t_ns: int) -> None:
        for hook in list(self._hooks):
            hook(t_ns)
        if t_ns > self._now:
            self._now = t_ns


@dataclass(frozen=True)
class TopicInfo:
    name: str
    type_name: str
    advertised_at: int


@dataclass(frozen=True)
class Delivery:
    topic: str
    seq: int
    receipt_time: int
    msg: TypedMessage


class Subscription:
    """Ordered stream of deliveries for one topic.

    ``maxsize=0`` means unbounded.  With the ``block`` policy a full queue
    stalls the publisher; with ``drop`` the delivery is discarded and counted.
    A shared ``sink`` queue may be passed to merge several topics into one
    stream.
    """

    def __init__(self, bus: "Bus", topic: str, maxsize: int = 10_000, overflow: str = BLOCK, sink=None):
        if overflow not in (BLOCK, DROP):
            raise ValueError(f"unknown overflow policy {overflow!r}")
        self.bus = bus
        self.topic = topic
        self.overflow = overflow
        self.dropped = 0
        self.closed = False
        self._queue = sink if sink is not None else queue.Queue(maxsize)

    def _deliver(self, delivery: Delivery) -> None:
        if self.overflow == BLOCK:
            self._queue.put(delivery)
        else:
            try:
                self._queue.put_nowait(delivery)
            except queue.Full:
                self.dropped += 1

    def get(self, timeout: float | None = None) -> Delivery:
        """Next delivery; raises ``queue.Empty`` on timeout."""
        return self._queue.get(timeout=timeout)

    def drain(self) -> list[Delivery]:
        out = []
        while True:
            try:
                out.append(self._queue.get_nowait())
            except queue.Empty:
                return out

    def __iter__(self):
        return iter(self.drain())

    def close(self) -> None:
        self.bus.unsubscribe(self)


class _Topic:
    def __init__(self, info: TopicInfo):
        self.info = info
        self.lock = threading.Lock()
        self.seq = 0
        self.subscribers: list[Subscription] = []


class Bus:
    def __init__(self, clock=None, strict: bool = True):
        self.clock = clock if clock is not None else MonotonicClock()
        self.strict = strict
        self._topics: dict[str, _Topic] = {}
        self._lock = threading.Lock()

    def now_ns(self) -> int:
        return self.clock.now_ns()

    def advertise(self, topic: str, type_name: str) -> TopicInfo:
        if not TOPIC_RE.fullmatch(topic):
            raise InvalidTopic(topic)
        with self._lock:
            existing = self._topics.get(topic)
            if existing is not None:
                if existing.info.type_name != type_name:
                    raise TypeConflict(
                        f"{topic} is advertised as {existing.info.type_name}, not {type_name}"
                    )
                return existing.info
            info = TopicInfo(topic, type_name, self.clock.now_ns())
            self._topics[topic] = _Topic(info)
            return info

    def topics(self) -> dict[str, TopicInfo]:
        with self._lock:
            return {name: t.info for name, t in self._topics.items()}

    def topic_info(self, topic: str) -> TopicInfo:
        return self._get(topic).info

    def _get(self, topic: str) -> _Topic:
        try:
            return self._topics[topic]
        except KeyError:
            raise UnknownTopic(topic) from None

    def publish(self, topic: str, msg: TypedMessage) -> Delivery:
        t = self._get(topic)
        if self.strict and msg.type_name != t.info.type_name:
            raise TypeConflict(f"{topic} carries {t.info.type_name}, got {msg.type_name}")
        # One lock per topic serializes stamping and fan-out, so every
        # subscriber sees the same order and receipt times never go backwards.
        with t.lock:
            t.seq += 1
            delivery = Delivery(topic, t.seq, self.clock.now_ns(), msg)
            for sub in list(t.subscribers):
                sub._deliver(delivery)
        return delivery

    def subscribe(self, topic: str, type_name: str | None = None, **kwargs) -> Subscription:
        """Subscribe to ``topic``.

        Unknown topics raise in strict mode; in permissive mode they are
        advertised on the spot, using ``type_name`` when given.
        """
        if topic not in self._topics:
            if self.strict:
                raise UnknownTopic(topic)
            self.advertise(topic, type_name or "")
        t = self._topics[topic]
        sub = Subscription(self, topic, **kwargs)
        with t.lock:
            t.subscribers.append(sub)
        return sub

    def unsubscribe(self, sub: Subscription) -> None:
        t = self._topics.get(sub.topic)
        if t is None:
            return
        with t.lock:
            if sub in t.subscribers:
                t.subscribers.remove(sub)
        sub.closed = True
