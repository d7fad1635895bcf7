"""Hierarchical message values and the standard message types.

A message payload is a plain Python value tree built from ``float``, ``int``,
``bool``, ``str``, ``bytes``, ``list`` and ``dict`` (string keys).  Messages
are encoded to JSON-compatible documents and serialized in one canonical,
newline-free form, which is the unit written by the document store.
"""

from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field
from functools import total_ordering
from typing import Any

TYPE_KEY = "_type"
BYTES_KEY = "$bytes"
FLOAT_KEY = "$float"

QUATERNION_TOLERANCE = 1e-6
NSEC_PER_SEC = 1_000_000_000

Document = dict


class MessageError(Exception):
    pass


class UnknownType(MessageError):
    pass


class SchemaMismatch(MessageError):
    def __init__(self, path: str, detail: str):
        super().__init__(f"{path or '<root>'}: {detail}")
        self.path = path
        self.detail = detail


@total_ordering
@dataclass(frozen=True)
class Timestamp:
    sec: int
    nsec: int = 0

    def __post_init__(self):
        if not 0 <= self.nsec < NSEC_PER_SEC:
            raise ValueError(f"nsec out of range: {self.nsec}")

    def __lt__(self, other: "Timestamp") -> bool:
        return (self.sec, self.nsec) < (other.sec, other.nsec)

    @classmethod
    def from_ns(cls, ns: int) -> "Timestamp":
        sec, nsec = divmod(ns, NSEC_PER_SEC)
        return cls(sec, nsec)

    def to_ns(self) -> int:
        return self.sec * NSEC_PER_SEC + self.nsec

    def to_value(self) -> dict:
        return {"sec": self.sec, "nsec": self.nsec}

    @classmethod
    def from_value(cls, value: dict) -> "Timestamp":
        return cls(value["sec"], value["nsec"])


@dataclass(frozen=True)
class TypedMessage:
    """A payload tree tagged with its type name.

    Instances are treated as immutable; the payload is never modified after
    construction by anything in this package.
    """

    type_name: str
    payload: dict = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, TypedMessage):
            return NotImplemented
        return self.type_name == other.type_name and value_equal(self.payload, other.payload)

    __hash__ = None


@dataclass(frozen=True)
class Violation:
    path: str
    rule: str
    detail: str = ""


def value_equal(a: Any, b: Any) -> bool:
    """Type-strict structural equality (``1 != 1.0 != True``; NaN equals NaN)."""
    if type(a) is not type(b):
        return False
    if isinstance(a, float):
        if math.isnan(a):
            return math.isnan(b)
        return a == b and math.copysign(1.0, a) == math.copysign(1.0, b)
    if isinstance(a, list):
        return len(a) == len(b) and all(value_equal(x, y) for x, y in zip(a, b))
    if isinstance(a, dict):
        return a.keys() == b.keys() and all(value_equal(a[k], b[k]) for k in a)
    return a == b


# --------------------------------------------------------------------------
# document encoding


def _escape_key(key: str) -> str:
    if key.startswith("$") or key == TYPE_KEY:
        return "$" + key
    return key


def _unescape_key(key: str) -> str:
    return key[1:] if key.startswith("$") else key


def encode_value(value: Any) -> Any:
    if value is None:
        raise TypeError("None is not a message value")
    if isinstance(value, bool) or isinstance(value, int) or isinstance(value, str):
        return value
    if isinstance(value, float):
        if math.isfinite(value):
            return value
        return {FLOAT_KEY: "nan" if math.isnan(value) else ("inf" if value > 0 else "-inf")}
    if isinstance(value, (bytes, bytearray)):
        return {BYTES_KEY: base64.b64encode(bytes(value)).decode("ascii")}
    if isinstance(value, (list, tuple)):
        return [encode_value(v) for v in value]
    if isinstance(value, dict):
        out = {}
        for k, v in value.items():
            if not isinstance(k, str):
                raise TypeError(f"map keys must be strings, got {k!r}")
            out[_escape_key(k)] = encode_value(v)
        return out
    raise TypeError(f"unsupported value type: {type(value).__name__}")


def decode_value(doc: Any) -> Any:
    if isinstance(doc, list):
        return [decode_value(v) for v in doc]
    if isinstance(doc, dict):
        if len(doc) == 1:
            if BYTES_KEY in doc:
                return base64.b64decode(doc[BYTES_KEY], validate=True)
            if FLOAT_KEY in doc:
                return float(doc[FLOAT_KEY])
        return {_unescape_key(k): decode_value(v) for k, v in doc.items()}
    return doc


def encode(msg: TypedMessage) -> Document:
    """Encode ``msg`` as a document with the type name under ``"_type"``."""
    if not isinstance(msg.payload, dict):
        raise TypeError("message payload must be a map")
    doc = {TYPE_KEY: msg.type_name}
    doc.update(encode_value(msg.payload))
    return doc


def decode(doc: Document, expected_type: str | None = None, strict: bool = False) -> TypedMessage:
    """Inverse of :func:`encode`.

    Registered types are checked against their field layout and raise
    :class:`SchemaMismatch` on a missing field or wrong leaf kind.  Unknown
    types pass through untouched unless ``strict`` is set.
    """
    stored = doc.get(TYPE_KEY)
    type_name = expected_type if expected_type is not None else stored
    if type_name is None:
        raise SchemaMismatch("", "document carries no type and none was expected")
    if stored is not None and stored != type_name:
        raise SchemaMismatch(TYPE_KEY, f"document type {stored!r} != expected {type_name!r}")
    payload = decode_value({k: v for k, v in doc.items() if k != TYPE_KEY})
    if type_name in STANDARD_TYPES:
        problems = _check_layout(payload, type_name, "")
        if problems:
            raise SchemaMismatch(problems[0].path, problems[0].detail)
    elif strict:
        raise UnknownType(type_name)
    return TypedMessage(type_name, payload)


# --------------------------------------------------------------------------
# canonical serialization


def _dump(obj: Any, parts: list) -> None:
    if isinstance(obj, dict):
        keys = sorted(obj)
        if TYPE_KEY in obj:
            keys.remove(TYPE_KEY)
            keys.insert(0, TYPE_KEY)
        parts.append("{")
        for i, k in enumerate(keys):
            if i:
                parts.append(",")
            parts.append(json.dumps(k, ensure_ascii=False))
            parts.append(":")
            _dump(obj[k], parts)
        parts.append("}")
    elif isinstance(obj, list):
        parts.append("[")
        for i, v in enumerate(obj):
            if i:
                parts.append(",")
            _dump(v, parts)
        parts.append("]")
    elif isinstance(obj, float) and not math.isfinite(obj):
        raise ValueError("non-finite floats must be encoded before serialization")
    else:
        parts.append(json.dumps(obj, ensure_ascii=False))


def canonical_dumps(doc: Any) -> bytes:
    """Serialize a document: sorted keys, ``"_type"`` first, no whitespace, UTF-8."""
    parts: list[str] = []
    _dump(doc, parts)
    return "".join(parts).encode("utf-8")


def canonical_loads(data: bytes | str) -> Any:
    if isinstance(data, bytes):
        data = data.decode("utf-8")
    return json.loads(data)


def serialize(msg: TypedMessage) -> bytes:
    return canonical_dumps(encode(msg))


# --------------------------------------------------------------------------
# standard types
#
# Field specs: "float" (int accepted), "int", "str", "bool", "bytes",
# a registered type name, or ("list", spec).

FLOAT, INT, STR = "float", "int", "str"

MARKER_SHAPES = ("arrow", "cube", "sphere", "cylinder", "line_strip", "text")

STANDARD_TYPES: dict[str, dict[str, Any]] = {
    "Timestamp": {"sec": INT, "nsec": INT},
    "Header": {"frame_id": STR, "stamp": "Timestamp"},
    "Point": {"x": FLOAT, "y": FLOAT, "z": FLOAT},
    "Quaternion": {"x": FLOAT, "y": FLOAT, "z": FLOAT, "w": FLOAT},
    "Pose": {"position": "Point", "orientation": "Quaternion"},
    "PoseStamped": {"header": "Header", "pose": "Pose"},
    "Pose2D": {"x": FLOAT, "y": FLOAT, "theta": FLOAT},
    "Twist": {"linear": "Point", "angular": "Point"},
    "TrajectoryPoint": {"positions": ("list", FLOAT), "time_from_start": FLOAT},
    "JointTrajectoryGoal": {"joint_names": ("list", STR), "points": ("list", "TrajectoryPoint")},
    "GripperGoal": {"position": FLOAT, "max_effort": FLOAT},
    "PointHeadGoal": {"header": "Header", "target": "Point"},
    "JointState": {"header": "Header", "name": ("list", STR), "position": ("list", FLOAT)},
    "PointCloud": {"header": "Header", "points": ("list", "Point")},
    "ColorRGBA": {"r": FLOAT, "g": FLOAT, "b": FLOAT, "a": FLOAT},
    "Marker": {"header": "Header", "shape": STR, "pose": "Pose", "scale": "Point", "color": "ColorRGBA"},
    "Path": {"header": "Header", "poses": ("list", "PoseStamped")},
    "SoundRequest": {"text": STR},
}


def is_registered(type_name: str) -> bool:
    return type_name in STANDARD_TYPES


def _join(path: str, key: str) -> str:
    return f"{path}.{key}" if path else key


def _check_leaf(value: Any, spec: str, path: str) -> list[Violation]:
    ok = {
        FLOAT: isinstance(value, (int, float)) and not isinstance(value, bool),
        INT: isinstance(value, int) and not isinstance(value, bool),
        STR: isinstance(value, str),
        "bool": isinstance(value, bool),
        "bytes": isinstance(value, bytes),
    }[spec]
    if ok:
        return []
    return [Violation(path, "schema", f"expected {spec}, got {type(value).__name__}")]


def _check_spec(value: Any, spec: Any, path: str) -> list[Violation]:
    if isinstance(spec, tuple):
        if not isinstance(value, list):
            return [Violation(path, "schema", f"expected list, got {type(value).__name__}")]
        out = []
        for i, item in enumerate(value):
            out.extend(_check_spec(item, spec[1], f"{path}[{i}]"))
        return out
    if spec in STANDARD_TYPES:
        return _check_layout(value, spec, path)
    return _check_leaf(value, spec, path)


def _check_layout(value: Any, type_name: str, path: str) -> list[Violation]:
    if not isinstance(value, dict):
        return [Violation(path, "schema", f"expected {type_name} map, got {type(value).__name__}")]
    out = []
    for key, spec in STANDARD_TYPES[type_name].items():
        if key not in value:
            out.append(Violation(_join(path, key), "schema", "missing field"))
        else:
            out.extend(_check_spec(value[key], spec, _join(path, key)))
    return out


def _check_invariants(value: Any, spec: Any, path: str) -> list[Violation]:
    """Semantic rules on a layout-conforming value."""
    if isinstance(spec, tuple):
        out = []
        for i, item in enumerate(value):
            out.extend(_check_invariants(item, spec[1], f"{path}[{i}]"))
        return out
    if spec not in STANDARD_TYPES:
        return []
    out = []
    for key, sub in STANDARD_TYPES[spec].items():
        out.extend(_check_invariants(value[key], sub, _join(path, key)))

    if spec == "Quaternion":
        norm = math.sqrt(sum(value[k] ** 2 for k in "xyzw"))
        if not abs(norm - 1.0) <= QUATERNION_TOLERANCE:
            out.append(Violation(path, "quaternion_norm", f"|q| = {norm:.9g}"))
    elif spec == "Timestamp":
        if not 0 <= value["nsec"] < NSEC_PER_SEC:
            out.append(Violation(path, "nsec_range", f"nsec = {value['nsec']}"))
    elif spec == "JointTrajectoryGoal":
        n = len(value["joint_names"])
        last = None
        for i, pt in enumerate(value["points"]):
            p = _join(path, f"points[{i}]")
            if len(pt["positions"]) != n:
                out.append(Violation(p, "arity", f"{len(pt['positions'])} positions for {n} joints"))
            t = pt["time_from_start"]
            if last is not None and not t > last:
                out.append(Violation(p, "monotonic_time", f"time_from_start {t} after {last}"))
            last = t
    elif spec == "Marker":
        if value["shape"] not in MARKER_SHAPES:
            out.append(Violation(_join(path, "shape"), "enum", f"unknown shape {value['shape']!r}"))
    return out


def validate(msg: TypedMessage) -> list[Violation]:
    """Check a message against its registered type; unknown types always pass."""
    if msg.type_name not in STANDARD_TYPES:
        return []
    problems = _check_layout(msg.payload, msg.type_name, "")
    if problems:
        return problems
    return _check_invariants(msg.payload, msg.type_name, "")


def header_stamp(payload: dict) -> Timestamp | None:
    try:
        stamp = payload["header"]["stamp"]
        return Timestamp(stamp["sec"], stamp["nsec"])
    except (KeyError, TypeError, ValueError):
        return None


# --------------------------------------------------------------------------
# constructors for the standard types


def header(frame_id: str = "map", stamp_ns: int = 0) -> dict:
    return {"frame_id": frame_id, "stamp": Timestamp.from_ns(stamp_ns).to_value()}


def point(x: float = 0.0, y: float = 0.0, z: float = 0.0) -> dict:
    return {"x": float(x), "y": float(y), "z": float(z)}


def yaw_quaternion(yaw: float) -> dict:
    return {"x": 0.0, "y": 0.0, "z": math.sin(yaw / 2.0), "w": math.cos(yaw / 2.0)}


def quaternion_yaw(q: dict) -> float:
    return math.atan2(2.0 * (q["w"] * q["z"] + q["x"] * q["y"]), 1.0 - 2.0 * (q["y"] ** 2 + q["z"] ** 2))


def pose(x: float = 0.0, y: float = 0.0, z: float = 0.0, yaw: float = 0.0) -> dict:
    return {"position": point(x, y, z), "orientation": yaw_quaternion(yaw)}


def pose_stamped(x, y, yaw=0.0, frame_id="map", stamp_ns=0) -> TypedMessage:
    return TypedMessage("PoseStamped", {"header": header(frame_id, stamp_ns), "pose": pose(x, y, 0.0, yaw)})


def pose2d(x: float, y: float, theta: float) -> TypedMessage:
    return TypedMessage("Pose2D", {"x": float(x), "y": float(y), "theta": float(theta)})


def twist(v: float = 0.0, w: float = 0.0) -> TypedMessage:
    return TypedMessage("Twist", {"linear": point(v, 0.0, 0.0), "angular": point(0.0, 0.0, w)})


def joint_trajectory_goal(joint_names, points) -> TypedMessage:
    """``points`` is a sequence of ``(positions, time_from_start)`` pairs."""
    return TypedMessage(
        "JointTrajectoryGoal",
        {
            "joint_names": list(joint_names),
            "points": [
                {"positions": [float(p) for p in positions], "time_from_start": float(t)}
                for positions, t in points
            ],
        },
    )


def gripper_goal(position: float, max_effort: float = 60.0) -> TypedMessage:
    return TypedMessage("GripperGoal", {"position": float(position), "max_effort": float(max_effort)})


def point_head_goal(x, y, z, frame_id="map", stamp_ns=0) -> TypedMessage:
    return TypedMessage("PointHeadGoal", {"header": header(frame_id, stamp_ns), "target": point(x, y, z)})


def point_cloud(points, frame_id="map", stamp_ns=0) -> TypedMessage:
    return TypedMessage(
        "PointCloud", {"header": header(frame_id, stamp_ns), "points": [point(*p) for p in points]}
    )


def marker(shape, position, scale, color, yaw=0.0, frame_id="map", stamp_ns=0) -> TypedMessage:
    r, g, b, a = color
    return TypedMessage(
        "Marker",
        {
            "header": header(frame_id, stamp_ns),
            "shape": shape,
            "pose": pose(*position, yaw=yaw),
            "scale": point(*scale),
            "color": {"r": float(r), "g": float(g), "b": float(b), "a": float(a)},
        },
    )


def path(poses, frame_id="map", stamp_ns=0) -> TypedMessage:
    """``poses`` is a sequence of ``(x, y, yaw)``."""
    return TypedMessage(
        "Path",
        {
            "header": header(frame_id, stamp_ns),
            "poses": [pose_stamped(x, y, yaw, frame_id, stamp_ns).payload for x, y, yaw in poses],
        },
    )


def sound_request(text: str) -> TypedMessage:
    return TypedMessage("SoundRequest", {"text": text})


def joint_state(names, positions, stamp_ns=0) -> TypedMessage:
    return TypedMessage(
        "JointState",
        {"header": header("base_link", stamp_ns), "name": list(names), "position": [float(p) for p in positions]},
    )
