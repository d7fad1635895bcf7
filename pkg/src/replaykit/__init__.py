"""Record and replay robot behaviors.

Behavior trees bound recording sessions, a schemaless document store keeps
the captured message streams, and the replayer republishes them onto the bus
against a common clock.
"""

from .bus import Bus, Delivery, MonotonicClock, VirtualClock
from .messages import Timestamp, TypedMessage, decode, encode, validate
from .recorder import Recorder
from .replayer import ReplayPlan, ReplayReport, plan, replay
from .store import DocStore, Envelope, Query, SessionSummary

__version__ = "0.1.0"

__all__ = [
    "Bus", "Delivery", "MonotonicClock", "VirtualClock", "Timestamp", "TypedMessage",
    "decode", "encode", "validate", "Recorder", "ReplayPlan", "ReplayReport", "plan",
    "replay", "DocStore", "Envelope", "Query", "SessionSummary",
]
