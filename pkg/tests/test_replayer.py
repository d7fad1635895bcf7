import time
from fractions import Fraction

import pytest

from replaykit import messages as m
from replaykit.bus import Bus, VirtualClock
from replaykit.replayer import InvalidRate, plan, plan_from_envelopes, replay, start_replay
from replaykit.store import Envelope, Query

MS = 1_000_000


def envs(spec, sid="s"):
    """spec: list of (topic, record_time_ns)."""
    out = []
    for seq, (topic, t) in enumerate(sorted(spec, key=lambda x: x[1]), start=1):
        payload = m.encode(m.TypedMessage("X", {"seq": seq, "topic": topic}))
        out.append(Envelope(sid, "p", topic, "X", t, seq, payload))
    return out


def capture(bus, topics):
    return {t: bus.subscribe(t) for t in topics}


def test_plan_partitions_by_topic(store):
    for e in envs([("/a", 10), ("/b", 20), ("/a", 30)]):
        store.insert("c", e)
    p = plan(store, "c")
    assert p.t0 == 10 and p.total == 3
    assert [e.record_time for e in p.streams["/a"]] == [10, 30]
    assert plan(store, "c", Query(topics={"/b"})).t0 == 20


def test_empty_plan_completes():
    p = plan_from_envelopes([])
    r = replay(p, Bus())
    assert r.published == 0 and r.complete


def test_invalid_rate():
    for rate in (0, -1, float("nan")):
        with pytest.raises(InvalidRate):
            plan_from_envelopes([], rate)


def test_offsets_are_exact_fractions():
    e = envs([("/a", 0), ("/a", 1)])
    p = plan_from_envelopes(e, rate=3.0)
    assert p.offset(e[1]) == Fraction(1, 3)
    assert p.offset(e[0]) == 0


def test_timing_two_topics():
    e = envs([("/a", 0), ("/b", 100 * MS), ("/a", 250 * MS)])
    bus = Bus()
    p = plan_from_envelopes(e)
    bus.advertise("/a", "X")
    bus.advertise("/b", "X")
    subs = capture(bus, ["/a", "/b"])
    report = replay(p, bus)
    a = [d.receipt_time for d in subs["/a"].drain()]
    (b,) = [d.receipt_time for d in subs["/b"].drain()]
    assert abs((b - a[0]) - 100 * MS) < 20 * MS
    assert abs((a[1] - a[0]) - 250 * MS) < 20 * MS
    assert report.counts == {"/a": 2, "/b": 1}
    assert report.max_lateness_ns < 20 * MS


def test_rate_scaling_wall_duration():
    e = envs([("/a", 0), ("/a", 200 * MS)])
    r = replay(plan_from_envelopes(e, rate=2.0), Bus())
    assert abs(r.wall_duration_ns - 100 * MS) < 20 * MS


def test_single_envelope_published_immediately():
    r = replay(plan_from_envelopes(envs([("/a", 5 * 10**9)])), Bus())
    assert r.published == 1 and r.wall_duration_ns < 20 * MS


def test_payload_fidelity():
    msg = m.TypedMessage("X", {"blob": b"\x00\xff", "nan": float("nan"), "nested": [{"$k": 1}]})
    e = Envelope("s", "p", "/a", "X", 0, 1, m.encode(msg))
    bus = Bus()
    bus.advertise("/a", "X")
    sub = bus.subscribe("/a")
    replay(plan_from_envelopes([e]), bus)
    (d,) = sub.drain()
    assert d.msg == msg
    assert m.serialize(d.msg) == m.serialize(msg)


def test_cancel_mid_replay():
    e = envs([("/a", i * 100 * MS) for i in range(20)] + [("/b", 50 * MS + i * 100 * MS) for i in range(20)])
    bus = Bus()
    bus.advertise("/a", "X")
    bus.advertise("/b", "X")
    sub_a, sub_b = bus.subscribe("/a"), bus.subscribe("/b")
    active = start_replay(plan_from_envelopes(e), bus)
    time.sleep(0.33)
    report = active.cancel()
    n = len(sub_a.drain()) + len(sub_b.drain())
    time.sleep(0.2)
    assert len(sub_a.drain()) + len(sub_b.drain()) == 0
    assert report.partial and 0 < report.published == n < 40
    assert not active.running


def test_cancel_immediately_and_after_finish():
    e = envs([("/a", 0), ("/a", 10**9)])
    active = start_replay(plan_from_envelopes(e), Bus())
    r = active.cancel()
    assert r.published <= 1 and r.partial
    done = start_replay(plan_from_envelopes(envs([("/a", 0)])), Bus())
    r = done.wait(5)
    assert done.cancel() is r and r.complete and not r.partial


def test_type_conflict_on_bus():
    from replaykit.bus import TypeConflict

    bus = Bus()
    bus.advertise("/a", "Other")
    with pytest.raises(TypeConflict):
        replay(plan_from_envelopes(envs([("/a", 0)])), bus)


def test_virtual_time_is_exact_and_ordered():
    e = envs([("/a", 0), ("/b", 100 * MS), ("/a", 250 * MS), ("/b", 250 * MS)])
    clock = VirtualClock(1_000)
    bus = Bus(clock)
    bus.advertise("/a", "X")
    bus.advertise("/b", "X")
    subs = capture(bus, ["/a", "/b"])
    r = replay(plan_from_envelopes(e, rate=2.0), bus)
    assert r.max_lateness_ns == 0
    times = {t: [d.receipt_time - 1_000 for d in s.drain()] for t, s in subs.items()}
    assert times == {"/a": [0, 125 * MS], "/b": [50 * MS, 125 * MS]}
    assert [rec.topic for rec in r.records] == ["/a", "/b", "/a", "/b"]
