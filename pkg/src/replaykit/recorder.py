"""Session-scoped capture of bus topics into the document store."""

from __future__ import annotations

import logging
import queue
import threading
import uuid
from dataclasses import dataclass, field

from .bus import BLOCK, Bus, Subscription
from .messages import encode, header_stamp
from .store import DocStore, Envelope, SessionSummary, StoreError

logger = logging.getLogger(__name__)

_STOP = object()


class RecorderError(Exception):
    pass


class InvalidTopics(RecorderError):
    pass


class AlreadyStopped(RecorderError):
    pass


@dataclass
class RecorderHandle:
    session_id: str
    behavior_path: str
    collection: str
    topics: tuple[str, ...]
    start_time: int
    subscriptions: list[Subscription] = field(default_factory=list)
    inserted: int = 0
    active: bool = True
    error: BaseException | None = None
    _queue: queue.Queue = field(default=None, repr=False)
    _worker: threading.Thread = field(default=None, repr=False)

    @property
    def dropped(self) -> int:
        return sum(s.dropped for s in self.subscriptions)


class Recorder:
    """Records selected topics from ``bus`` into ``store``.

    Each session merges its topic subscriptions into one bounded queue that a
    worker thread streams into the store.  The record time of an envelope is
    the bus receipt time of the delivery, so time differences between
    envelopes are exactly the receipt time differences.
    """

    def __init__(self, bus: Bus, store: DocStore, collection: str = "default",
                 queue_size: int = 10_000, overflow: str = BLOCK):
        self.bus = bus
        self.store = store
        self.collection = collection
        self.queue_size = queue_size
        self.overflow = overflow

    def start(self, topics, behavior_path: str = "", collection: str | None = None) -> RecorderHandle:
        topics = tuple(dict.fromkeys(topics))
        if not topics:
            raise InvalidTopics("nothing to record: empty topic list")
        collection = collection or self.collection
        col = self.store.collection(collection, create=True)

        handle = RecorderHandle(
            session_id=str(uuid.uuid4()),
            behavior_path=behavior_path,
            collection=collection,
            topics=topics,
            start_time=self.bus.now_ns(),
            _queue=queue.Queue(self.queue_size),
        )
        # Subscribe first so a failure leaves no open session behind.
        try:
            for topic in topics:
                handle.subscriptions.append(
                    self.bus.subscribe(topic, sink=handle._queue, overflow=self.overflow)
                )
        except Exception:
            for sub in handle.subscriptions:
                sub.close()
            raise
        col.open_session(handle.session_id, behavior_path, handle.start_time)

        handle._worker = threading.Thread(
            target=self._drain, args=(handle, col), name=f"recorder-{handle.session_id[:8]}", daemon=True
        )
        handle._worker.start()
        logger.debug("recording %s on %s", behavior_path or handle.session_id, ", ".join(topics))
        return handle

    def _drain(self, handle: RecorderHandle, col) -> None:
        while True:
            item = handle._queue.get()
            if item is _STOP:
                return
            if handle.error is not None:
                continue
            payload = encode(item.msg)
            env = Envelope(
                session_id=handle.session_id,
                behavior_path=handle.behavior_path,
                topic=item.topic,
                type_name=item.msg.type_name,
                record_time=item.receipt_time,
                seq=handle.inserted + 1,
                payload=payload,
                msg_stamp=header_stamp(item.msg.payload),
            )
            try:
                col.insert(env)
            except StoreError as exc:
                # Keep consuming so publishers never block on a dead recorder.
                logger.error("recording %s failed: %s", handle.session_id, exc)
                handle.error = exc
                continue
            handle.inserted += 1

    def stop(self, handle: RecorderHandle) -> SessionSummary:
        if not handle.active:
            raise AlreadyStopped(handle.session_id)
        handle.active = False
        for sub in handle.subscriptions:
            sub.close()
        end = self.bus.now_ns()
        # Everything delivered before the unsubscribe is queued ahead of this.
        handle._queue.put(_STOP)
        handle._worker.join()
        col = self.store.collection(handle.collection)
        summary = col.close_session(handle.session_id, end)
        if handle.error is not None:
            raise RecorderError(f"session {handle.session_id} incomplete: {handle.error}")
        return summary
