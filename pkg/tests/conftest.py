import math
import random
import string

import pytest
from hypothesis import strategies as st

from replaykit import messages as m
from replaykit.bus import Bus, VirtualClock
from replaykit.store import DocStore

KEY_CHARS = string.ascii_letters + string.digits + "_$ .é✓"
SPECIAL_FLOATS = [0.0, -0.0, 1e-308, 5e-324, 1.7976931348623157e308, math.inf, -math.inf, math.nan, 0.1, -2.5]


def random_key(rng):
    if rng.random() < 0.1:
        return rng.choice(["_type", "$bytes", "$float", "$$x", "$", ""])
    return "".join(rng.choice(KEY_CHARS) for _ in range(rng.randint(0, 8)))


def random_scalar(rng):
    kind = rng.randrange(6)
    if kind == 0:
        return rng.choice(SPECIAL_FLOATS) if rng.random() < 0.2 else rng.uniform(-1e6, 1e6)
    if kind == 1:
        return rng.choice([0, -1, 2**63, -(2**70), rng.randint(-1000, 1000)])
    if kind == 2:
        return rng.random() < 0.5
    if kind == 3:
        return "".join(rng.choice(KEY_CHARS + "\n\t\"\\ ") for _ in range(rng.randint(0, 12)))
    if kind == 4:
        return bytes(rng.randrange(256) for _ in range(rng.randint(0, 16)))
    return rng.uniform(-1.0, 1.0)


def random_value(rng, depth=6, budget=None):
    """Random value tree of at most ``depth`` levels and roughly 200 nodes."""
    budget = budget if budget is not None else [200]
    budget[0] -= 1
    if depth <= 1 or budget[0] <= 0 or rng.random() < 0.3:
        return random_scalar(rng)
    n = rng.randint(0, 5)
    if rng.random() < 0.5:
        return [random_value(rng, depth - 1, budget) for _ in range(n)]
    return {random_key(rng): random_value(rng, depth - 1, budget) for _ in range(n)}


def random_message(rng, depth=6):
    payload = {random_key(rng): random_value(rng, depth - 1) for _ in range(rng.randint(0, 5))}
    return m.TypedMessage(f"Custom{rng.randrange(5)}", payload)


def count_nodes(value):
    if isinstance(value, list):
        return 1 + sum(count_nodes(v) for v in value)
    if isinstance(value, dict):
        return 1 + sum(count_nodes(v) for v in value.values())
    return 1


def depth_of(value):
    if isinstance(value, list):
        return 1 + max((depth_of(v) for v in value), default=0)
    if isinstance(value, dict):
        return 1 + max((depth_of(v) for v in value.values()), default=0)
    return 1


scalars = st.one_of(
    st.floats(allow_nan=True, allow_infinity=True),
    st.integers(),
    st.booleans(),
    st.text(max_size=20),
    st.binary(max_size=20),
)
values = st.recursive(
    scalars,
    lambda children: st.one_of(
        st.lists(children, max_size=5),
        st.dictionaries(st.text(max_size=8), children, max_size=5),
    ),
    max_leaves=40,
)
typed_messages = st.builds(
    m.TypedMessage,
    st.text(alphabet=string.ascii_letters, min_size=1, max_size=12).filter(lambda t: not m.is_registered(t)),
    st.dictionaries(st.text(max_size=8), values, max_size=6),
)


@pytest.fixture
def rng():
    return random.Random(1234)


@pytest.fixture
def store(tmp_path):
    s = DocStore(tmp_path / "store")
    yield s
    s.close()


@pytest.fixture
def vbus():
    return Bus(VirtualClock())


# -- document store oracle ---------------------------------------------------

from replaykit.store import Envelope, Query  # noqa: E402

PATHS = ["kitting/pick", "kitting/place", "kitting", "kittings/x", "nav", "nav/a/b", ""]
TOPICS = ["/a", "/b", "/cmd_vel", "/odom"]


def random_envelopes(rng, n_sessions=None, max_per_session=40):
    envs = []
    for k in range(n_sessions or rng.randint(0, 4)):
        sid = f"s{k}-{rng.randrange(1000)}"
        path = rng.choice(PATHS)
        t = rng.randint(0, 50)
        for seq in range(1, rng.randint(0, max_per_session) + 1):
            t += rng.choice([0, 0, 1, 3, 10])
            envs.append(Envelope(sid, path, rng.choice(TOPICS), "X", t, seq, {"_type": "X", "v": rng.random()}))
    return envs


def random_query(rng, envs):
    sessions = sorted({e.session_id for e in envs}) + ["missing"]
    times = [e.record_time for e in envs] or [0]
    lo = rng.choice([None, rng.randint(min(times) - 2, max(times) + 2)])
    hi = rng.choice([None, rng.randint(min(times) - 2, max(times) + 5)])
    if lo is not None and hi is not None and lo > hi:
        lo, hi = hi, lo
    return Query(
        session_id=rng.choice([None, None, rng.choice(sessions)]),
        topics=rng.choice([None, None, frozenset(rng.sample(TOPICS + ["/none"], rng.randint(0, 3)))]),
        t_lo=lo,
        t_hi=hi,
        behavior_prefix=rng.choice([None, None, "kitting", "kitting/", "kit", "nav/a", "", "kitting/pick"]),
    )


def oracle_query(envs, q):
    """Linear scan over every inserted envelope, written independently of the store."""

    def prefix_ok(path):
        p = q.behavior_prefix
        if p is None:
            return True
        want = [s for s in p.split("/") if s]
        have = [s for s in path.split("/") if s]
        return have[: len(want)] == want

    out = [
        e for e in envs
        if (q.session_id is None or e.session_id == q.session_id)
        and (q.topics is None or e.topic in q.topics)
        and (q.t_lo is None or e.record_time >= q.t_lo)
        and (q.t_hi is None or e.record_time < q.t_hi)
        and prefix_ok(e.behavior_path)
    ]
    return sorted(out, key=lambda e: (e.record_time, e.seq, e.session_id))


# -- unicycle oracle ---------------------------------------------------------


def euler_unicycle(x, y, theta, v, w, dt, h=1e-5):
    """Forward Euler with step ``h``; the heading update is exact so the
    position sum vectorizes over the steps."""
    import numpy as np

    n = int(dt // h)
    rest = dt - n * h
    k = np.arange(n, dtype=float)
    headings = theta + k * h * w
    x = x + h * v * float(np.cos(headings).sum())
    y = y + h * v * float(np.sin(headings).sum())
    th = theta + n * h * w
    x += rest * v * np.cos(th)
    y += rest * v * np.sin(th)
    return float(x), float(y), th + rest * w


def angle_diff(a, b):
    return abs(math.remainder(a - b, 2 * math.pi))


# -- acceptance report ---------------------------------------------------------

ACCEPTANCE_LINES = []


def report_criterion(number, title, ok, detail=""):
    line = f"{'PASS' if ok else 'FAIL'} criterion {number}: {title}" + (f" ({detail})" if detail else "")
    ACCEPTANCE_LINES.append((number, line))
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
