import math

import pytest
from hypothesis import given, settings

from replaykit import messages as m
from replaykit.messages import SchemaMismatch, TypedMessage, UnknownType

from conftest import typed_messages, values


def test_identity_pose_stamped_leaves():
    msg = m.pose_stamped(1.0, 2.0, 0.0)
    doc = m.encode(msg)
    assert doc["_type"] == "PoseStamped"
    q = doc["pose"]["orientation"]
    assert (q["x"], q["y"], q["z"], q["w"]) == (0.0, 0.0, 0.0, 1.0)


def test_twist_has_six_numeric_leaves():
    doc = m.encode(TypedMessage("Twist", {"linear": m.point(0.2, 0, 0), "angular": m.point(0, 0, 0.5)}))
    leaves = [v for part in ("linear", "angular") for v in doc[part].values()]
    assert len(leaves) == 6
    assert all(isinstance(v, float) for v in leaves)
    assert set(doc) == {"_type", "linear", "angular"}


def test_twist_round_trip():
    t = m.twist(0.2, 0.5)
    assert m.decode(m.encode(t), "Twist") == t


def test_missing_orientation_w_is_schema_mismatch():
    doc = m.encode(m.pose_stamped(0, 0, 0))
    del doc["pose"]["orientation"]["w"]
    with pytest.raises(SchemaMismatch) as err:
        m.decode(doc, "PoseStamped")
    assert err.value.path == "pose.orientation.w"


def test_wrong_leaf_kind_is_schema_mismatch():
    doc = m.encode(m.twist(1.0, 0.0))
    doc["linear"]["x"] = "fast"
    with pytest.raises(SchemaMismatch):
        m.decode(doc, "Twist")


def test_unknown_type_permissive_passthrough():
    doc = {"_type": "RobotMood", "level": 3, "tags": ["a", {"b": {"$bytes": "AAE="}}]}
    msg = m.decode(m.canonical_loads(m.canonical_dumps(doc)), "RobotMood")
    assert msg.type_name == "RobotMood"
    assert msg.payload == {"level": 3, "tags": ["a", {"b": b"\x00\x01"}]}
    # encode . decode is a fixpoint on the document
    assert m.canonical_dumps(m.encode(msg)) == m.canonical_dumps(doc)


def test_unknown_type_strict():
    with pytest.raises(UnknownType):
        m.decode({"_type": "RobotMood"}, "RobotMood", strict=True)


def test_expected_type_mismatch():
    with pytest.raises(SchemaMismatch):
        m.decode(m.encode(m.twist()), "PoseStamped")


def test_canonical_form():
    msg = TypedMessage("Thing", {"b": 1, "a": {"z": [1.0, True], "_type": "inner"}, "blob": b"hi"})
    data = m.serialize(msg)
    assert data.startswith(b'{"_type":"Thing",')
    assert b"\n" not in data and b" " not in data
    assert data == b'{"_type":"Thing","a":{"$_type":"inner","z":[1.0,true]},"b":1,"blob":{"$bytes":"aGk="}}'


def test_reserved_keys_are_escaped():
    payload = {"$bytes": "not a blob", "_type": "user", "$float": 1, "$$deep": 2.0}
    msg = TypedMessage("X", payload)
    back = m.decode(m.canonical_loads(m.serialize(msg)), "X")
    assert m.value_equal(back.payload, payload)


def test_non_finite_floats_round_trip():
    msg = TypedMessage("X", {"a": math.inf, "b": -math.inf, "c": math.nan, "d": -0.0})
    back = m.decode(m.canonical_loads(m.serialize(msg)), "X")
    assert back == msg
    assert math.copysign(1.0, back.payload["d"]) == -1.0


def test_int_float_bool_are_distinct():
    a = TypedMessage("X", {"v": 1})
    assert a != TypedMessage("X", {"v": 1.0})
    assert a != TypedMessage("X", {"v": True})
    assert m.serialize(a) != m.serialize(TypedMessage("X", {"v": 1.0}))


def test_none_is_rejected():
    with pytest.raises(TypeError):
        m.encode(TypedMessage("X", {"v": None}))


@settings(max_examples=300, deadline=None)
@given(typed_messages)
def test_round_trip_property(msg):
    data = m.serialize(msg)
    back = m.decode(m.canonical_loads(data), msg.type_name)
    assert back == msg
    assert m.serialize(back) == data


@settings(max_examples=200, deadline=None)
@given(values, values)
def test_encode_is_injective(a, b):
    ma, mb = TypedMessage("X", {"v": a}), TypedMessage("X", {"v": b})
    if m.value_equal(a, b):
        assert m.serialize(ma) == m.serialize(mb)
    else:
        assert m.serialize(ma) != m.serialize(mb)


# -- validate --------------------------------------------------------------


def test_validate_identity_quaternion():
    assert m.validate(m.pose_stamped(0, 0, 0)) == []


def test_validate_bad_quaternion():
    msg = m.pose_stamped(0, 0, 0)
    msg.payload["pose"]["orientation"] = {"x": 1.0, "y": 1.0, "z": 1.0, "w": 1.0}
    (v,) = m.validate(msg)
    assert (v.path, v.rule) == ("pose.orientation", "quaternion_norm")


def test_validate_quaternion_tolerance():
    msg = m.pose_stamped(0, 0, 0)
    msg.payload["pose"]["orientation"]["w"] = 1.0 + 5e-7
    assert m.validate(msg) == []
    msg.payload["pose"]["orientation"]["w"] = 1.0 + 2e-6
    assert [v.rule for v in m.validate(msg)] == ["quaternion_norm"]


def test_validate_trajectory_monotonic():
    goal = m.joint_trajectory_goal(["a", "b"], [([0, 0], 1.0), ([1, 1], 1.0)])
    (v,) = m.validate(goal)
    assert v.rule == "monotonic_time" and v.path == "points[1]"


def test_validate_trajectory_arity():
    goal = m.joint_trajectory_goal(["a", "b"], [([0], 1.0)])
    assert [v.rule for v in m.validate(goal)] == ["arity"]


def test_validate_nested_path_quaternions():
    msg = m.path([(0, 0, 0), (1, 0, 1.0)])
    assert m.validate(msg) == []
    msg.payload["poses"][1]["pose"]["orientation"]["w"] = 3.0
    (v,) = m.validate(msg)
    assert v.path == "poses[1].pose.orientation"


def test_validate_marker_shape_and_stamp():
    mk = m.marker("cube", (1, 2, 3), (0.1, 0.1, 0.1), (1, 1, 1, 1))
    assert m.validate(mk) == []
    mk.payload["shape"] = "blob"
    mk.payload["header"]["stamp"]["nsec"] = 2_000_000_000
    assert sorted(v.rule for v in m.validate(mk)) == ["enum", "nsec_range"]


def test_validate_unknown_type_passes():
    assert m.validate(TypedMessage("Whatever", {"q": {"x": 5}})) == []


def test_standard_constructors_validate_clean():
    corpus = [
        m.pose_stamped(1, 2, 0.3), m.twist(0.1, -0.2), m.pose2d(1, 2, 3),
        m.joint_trajectory_goal(["a"], [([0.1], 0.5), ([0.2], 1.0)]),
        m.gripper_goal(0.05), m.point_head_goal(1, 0, 0.7),
        m.point_cloud([(0, 0, 0), (1, 1, 1)]), m.marker("arrow", (0, 0, 0), (1, 1, 1), (0, 1, 0, 1)),
        m.path([(0, 0, 0), (1, 1, 0.5)]), m.sound_request("hello"),
        m.joint_state(["a", "b"], [0.0, 1.0]),
    ]
    for msg in corpus:
        assert m.validate(msg) == [], msg.type_name
        assert m.decode(m.canonical_loads(m.serialize(msg)), msg.type_name) == msg


def test_timestamp_order_and_range():
    assert m.Timestamp(1, 5) < m.Timestamp(2, 0) < m.Timestamp(2, 1)
    assert m.Timestamp.from_ns(3_000_000_007) == m.Timestamp(3, 7)
    with pytest.raises(ValueError):
        m.Timestamp(0, 1_000_000_000)


def test_yaw_quaternion_round_trip():
    for yaw in (-3.0, -1.0, 0.0, 0.5, 3.1):
        assert m.quaternion_yaw(m.yaw_quaternion(yaw)) == pytest.approx(yaw, abs=1e-12)
