"""Embedded schemaless document store for recorded envelopes.

Each collection is one append-only file ``<store_dir>/<collection>.col``.
The first line is a header document; every following line is one canonical
document (see :func:`replaykit.messages.canonical_dumps`):

* ``{"_type":"Envelope", ...}`` - one recorded message
* ``{"_type":"SessionOpen", ...}`` / ``{"_type":"SessionClose", ...}`` -
  session lifecycle, so empty and crashed sessions are still listed

An in-memory index is rebuilt on open.  A torn final line (crash mid-write)
is truncated away; any other undecodable line is reported as corruption.
"""

from __future__ import annotations

import bisect
import errno
import heapq
import os
import re
import threading
from dataclasses import dataclass, field
from pathlib import Path

from .messages import Timestamp, TypedMessage, canonical_dumps, canonical_loads, decode

FORMAT_NAME = "replaykit-col"
FORMAT_VERSION = 1
SUFFIX = ".col"
COLLECTION_RE = re.compile(r"[A-Za-z0-9_.-]+")


class StoreError(Exception):
    pass


class UnknownCollection(StoreError):
    pass


class UnknownSession(StoreError):
    pass


class SeqRegression(StoreError):
    pass


class StorageFull(StoreError):
    pass


class CorruptCollection(StoreError):
    def __init__(self, path, line_no: int, detail: str):
        super().__init__(f"{path}:{line_no}: {detail}")
        self.path = path
        self.line_no = line_no
        self.detail = detail


@dataclass(frozen=True)
class Envelope:
    session_id: str
    behavior_path: str
    topic: str
    type_name: str
    record_time: int
    seq: int
    payload: dict
    msg_stamp: Timestamp | None = None

    @property
    def sort_key(self):
        return (self.record_time, self.seq, self.session_id)

    def message(self) -> TypedMessage:
        return decode(self.payload, self.type_name)

    def to_document(self) -> dict:
        return {
            "_type": "Envelope",
            "behavior_path": self.behavior_path,
            "msg_stamp": self.msg_stamp.to_value() if self.msg_stamp else None,
            "payload": self.payload,
            "record_time": self.record_time,
            "seq": self.seq,
            "session_id": self.session_id,
            "topic": self.topic,
            "type_name": self.type_name,
        }

    @classmethod
    def from_document(cls, doc: dict) -> "Envelope":
        stamp = doc.get("msg_stamp")
        return cls(
            session_id=doc["session_id"],
            behavior_path=doc["behavior_path"],
            topic=doc["topic"],
            type_name=doc["type_name"],
            record_time=doc["record_time"],
            seq=doc["seq"],
            payload=doc["payload"],
            msg_stamp=Timestamp.from_value(stamp) if stamp is not None else None,
        )


@dataclass
class SessionSummary:
    session_id: str
    behavior_path: str
    started_at: int
    ended_at: int | None = None
    topic_counts: dict[str, int] = field(default_factory=dict)
    status: str = "open"
    t_min: int | None = None
    t_max: int | None = None
    last_seq: int = 0

    @property
    def count(self) -> int:
        return sum(self.topic_counts.values())

    @property
    def duration_ns(self) -> int | None:
        if self.ended_at is None:
            return None
        return self.ended_at - self.started_at


@dataclass(frozen=True)
class Query:
    session_id: str | None = None
    topics: frozenset[str] | None = None
    t_lo: int | None = None
    t_hi: int | None = None
    behavior_prefix: str | None = None

    def __post_init__(self):
        if self.topics is not None and not isinstance(self.topics, frozenset):
            object.__setattr__(self, "topics", frozenset(self.topics))
        if self.t_lo is not None and self.t_hi is not None and self.t_lo > self.t_hi:
            raise ValueError("t_lo must not exceed t_hi")

    def matches(self, env: Envelope) -> bool:
        if self.session_id is not None and env.session_id != self.session_id:
            return False
        if self.topics is not None and env.topic not in self.topics:
            return False
        if self.t_lo is not None and env.record_time < self.t_lo:
            return False
        if self.t_hi is not None and env.record_time >= self.t_hi:
            return False
        if self.behavior_prefix is not None and not path_has_prefix(env.behavior_path, self.behavior_prefix):
            return False
        return True


def path_has_prefix(path: str, prefix: str) -> bool:
    """Segment-wise prefix: ``kitting`` matches ``kitting/pick`` but not ``kittings``."""
    prefix = prefix.rstrip("/")
    return prefix == "" or path == prefix or path.startswith(prefix + "/")


class _SortedList:
    """Envelopes kept sorted by ``sort_key``, with a parallel key list for bisect."""

    def __init__(self):
        self.keys = []
        self.items = []

    def add(self, env: Envelope) -> None:
        key = env.sort_key
        i = bisect.bisect_right(self.keys, key)
        self.keys.insert(i, key)
        self.items.insert(i, env)

    def window(self, t_lo, t_hi) -> list[Envelope]:
        lo = 0 if t_lo is None else bisect.bisect_left(self.keys, (t_lo,))
        hi = len(self.keys) if t_hi is None else bisect.bisect_left(self.keys, (t_hi,))
        return self.items[lo:hi]


class Collection:
    """One collection file plus its in-memory index.  Single writer."""

    def __init__(self, path: Path, max_bytes: int | None = None, fsync: bool = False):
        self.path = path
        self.name = path.name[: -len(SUFFIX)]
        self.max_bytes = max_bytes
        self.fsync = fsync
        self._lock = threading.RLock()
        self._all = _SortedList()
        self._by_topic: dict[str, _SortedList] = {}
        self._by_session: dict[str, _SortedList] = {}
        self.sessions: dict[str, SessionSummary] = {}
        self._load()
        self._fh = open(self.path, "ab")

    # -- loading ---------------------------------------------------------

    def _load(self) -> None:
        if not self.path.exists():
            header = canonical_dumps({"format": FORMAT_NAME, "version": FORMAT_VERSION}) + b"\n"
            with open(self.path, "wb") as fh:
                fh.write(header)
            return
        data = self.path.read_bytes()
        lines = data.split(b"\n")
        # A file that does not end in "\n" has a torn final record.
        torn = lines.pop()
        good_end = len(data) - len(torn)
        for i, raw in enumerate(lines, start=1):
            try:
                doc = canonical_loads(raw)
            except (UnicodeDecodeError, ValueError) as exc:
                raise CorruptCollection(self.path, i, f"undecodable line ({exc})") from None
            if i == 1:
                if doc.get("format") != FORMAT_NAME or doc.get("version") != FORMAT_VERSION:
                    raise CorruptCollection(self.path, 1, "bad header")
                continue
            try:
                self._apply(doc)
            except (KeyError, TypeError, ValueError, StoreError) as exc:
                raise CorruptCollection(self.path, i, f"malformed record ({exc!r})") from None
        if not lines:
            raise CorruptCollection(self.path, 1, "missing header")
        if torn:
            with open(self.path, "r+b") as fh:
                fh.truncate(good_end)

    def _apply(self, doc: dict) -> None:
        kind = doc["_type"]
        if kind == "Envelope":
            self._index(Envelope.from_document(doc))
        elif kind == "SessionOpen":
            self.sessions[doc["session_id"]] = SessionSummary(
                doc["session_id"], doc["behavior_path"], doc["started_at"]
            )
        elif kind == "SessionClose":
            s = self.sessions[doc["session_id"]]
            s.ended_at = doc["ended_at"]
            s.status = "closed"
        else:
            raise ValueError(f"unknown record type {kind!r}")

    def _index(self, env: Envelope) -> None:
        s = self.sessions.get(env.session_id)
        if s is None:
            # Envelopes without an explicit open record start an implicit session.
            s = self.sessions[env.session_id] = SessionSummary(env.session_id, env.behavior_path, env.record_time)
        if env.seq <= s.last_seq:
            raise SeqRegression(f"session {env.session_id}: seq {env.seq} after {s.last_seq}")
        if s.status == "closed":
            raise StoreError(f"session {env.session_id} is closed")
        s.last_seq = env.seq
        s.topic_counts[env.topic] = s.topic_counts.get(env.topic, 0) + 1
        s.t_min = env.record_time if s.t_min is None else min(s.t_min, env.record_time)
        s.t_max = env.record_time if s.t_max is None else max(s.t_max, env.record_time)
        self._all.add(env)
        self._by_topic.setdefault(env.topic, _SortedList()).add(env)
        self._by_session.setdefault(env.session_id, _SortedList()).add(env)

    # -- writing ---------------------------------------------------------

    def _append(self, doc: dict) -> None:
        line = canonical_dumps(doc) + b"\n"
        if self.max_bytes is not None and self._fh.tell() + len(line) > self.max_bytes:
            raise StorageFull(f"{self.path} would exceed {self.max_bytes} bytes")
        try:
            self._fh.write(line)
            self._fh.flush()
            if self.fsync:
                os.fsync(self._fh.fileno())
        except OSError as exc:
            if exc.errno == errno.ENOSPC:
                raise StorageFull(str(exc)) from exc
            raise

    def open_session(self, session_id: str, behavior_path: str, started_at: int) -> SessionSummary:
        with self._lock:
            if session_id in self.sessions:
                raise StoreError(f"session {session_id} already exists")
            self._append(
                {"_type": "SessionOpen", "behavior_path": behavior_path,
                 "session_id": session_id, "started_at": started_at}
            )
            self.sessions[session_id] = SessionSummary(session_id, behavior_path, started_at)
            return self.sessions[session_id]

    def close_session(self, session_id: str, ended_at: int) -> SessionSummary:
        with self._lock:
            s = self.sessions.get(session_id)
            if s is None:
                raise UnknownSession(session_id)
            if s.status == "closed":
                raise StoreError(f"session {session_id} already closed")
            ended_at = max(ended_at, s.started_at)
            self._append({"_type": "SessionClose", "ended_at": ended_at, "session_id": session_id})
            s.ended_at = ended_at
            s.status = "closed"
            return s

    def insert(self, env: Envelope) -> None:
        with self._lock:
            s = self.sessions.get(env.session_id)
            if s is not None and env.seq <= s.last_seq:
                raise SeqRegression(f"session {env.session_id}: seq {env.seq} after {s.last_seq}")
            if s is not None and s.status == "closed":
                raise StoreError(f"session {env.session_id} is closed")
            self._append(env.to_document())
            self._index(env)

    # -- reading ---------------------------------------------------------

    def query(self, q: Query) -> list[Envelope]:
        with self._lock:
            if q.session_id is not None:
                idx = self._by_session.get(q.session_id)
                candidates = idx.window(q.t_lo, q.t_hi) if idx else []
            elif q.topics is not None:
                windows = [self._by_topic[t].window(q.t_lo, q.t_hi) for t in sorted(q.topics) if t in self._by_topic]
                candidates = list(heapq.merge(*windows, key=lambda e: e.sort_key))
            else:
                candidates = self._all.window(q.t_lo, q.t_hi)
        out = []
        for env in candidates:
            if q.topics is not None and env.topic not in q.topics:
                continue
            if q.behavior_prefix is not None and not path_has_prefix(env.behavior_path, q.behavior_prefix):
                continue
            out.append(env)
        return out

    def list_sessions(self) -> list[SessionSummary]:
        with self._lock:
            return sorted(self.sessions.values(), key=lambda s: (s.started_at, s.session_id))

    def close(self) -> None:
        self._fh.close()


class DocStore:
    """A directory of collections."""

    def __init__(self, store_dir, create: bool = True, max_bytes: int | None = None, fsync: bool = False):
        self.root = Path(store_dir)
        if not self.root.is_dir():
            if not create:
                raise StoreError(f"store directory {self.root} does not exist")
            self.root.mkdir(parents=True)
        self.max_bytes = max_bytes
        self.fsync = fsync
        self._collections: dict[str, Collection] = {}
        self._lock = threading.Lock()

    def collection_names(self) -> list[str]:
        return sorted(p.name[: -len(SUFFIX)] for p in self.root.glob("*" + SUFFIX))

    def collection(self, name: str, create: bool = False) -> Collection:
        if not COLLECTION_RE.fullmatch(name):
            raise StoreError(f"invalid collection name {name!r}")
        with self._lock:
            col = self._collections.get(name)
            if col is None:
                path = self.root / (name + SUFFIX)
                if not path.exists() and not create:
                    raise UnknownCollection(name)
                col = self._collections[name] = Collection(path, self.max_bytes, self.fsync)
            return col

    def insert(self, collection: str, env: Envelope) -> None:
        self.collection(collection, create=True).insert(env)

    def query(self, collection: str, q: Query | None = None) -> list[Envelope]:
        return self.collection(collection).query(q or Query())

    def list_sessions(self, collection: str) -> list[SessionSummary]:
        try:
            return self.collection(collection).list_sessions()
        except UnknownCollection:
            return []

    def find_session(self, session_id: str) -> str | None:
        """Name of the collection holding ``session_id``, if any."""
        for name in self.collection_names():
            if session_id in self.collection(name).sessions:
                return name
        return None

    def close(self) -> None:
        with self._lock:
            for col in self._collections.values():
                col.close()
            self._collections.clear()
