"""Kinematic models: unicycle base, joint trajectory tracking, actuation noise."""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field, replace

from ..messages import TypedMessage, validate

STRAIGHT_EPS = 1e-9


class SimError(Exception):
    pass


class NonFiniteInput(SimError):
    pass


class MalformedGoal(SimError):
    pass


def wrap_angle(theta: float) -> float:
    """Wrap to (-pi, pi]."""
    w = math.remainder(theta, 2.0 * math.pi)
    return math.pi if w <= -math.pi else w


@dataclass(frozen=True)
class BaseState:
    x: float = 0.0
    y: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.x, self.y, self.theta)):
            raise NonFiniteInput(f"non-finite base state {self}")
        object.__setattr__(self, "theta", wrap_angle(self.theta))

    def distance_to(self, other: "BaseState") -> float:
        return math.hypot(self.x - other.x, self.y - other.y)


@dataclass
class NoiseModel:
    """Zero-mean Gaussian error on the applied velocities.

    Only non-zero command components are perturbed: a robot told to stand
    still does not creep.  The generator is seeded once, so a given seed
    always yields the same sequence of perturbations.
    """

    enabled: bool = False
    sigma_v: float = 0.0
    sigma_w: float = 0.0
    seed: int = 0
    _rng: random.Random = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.sigma_v < 0 or self.sigma_w < 0:
            raise ValueError("noise sigmas must be non-negative")
        self._rng = random.Random(self.seed)

    def reseed(self, seed: int | None = None) -> None:
        if seed is not None:
            self.seed = seed
        self._rng = random.Random(self.seed)

    def perturb(self, v: float, w: float) -> tuple[float, float]:
        if not self.enabled:
            return v, w
        if v != 0.0:
            v += self._rng.gauss(0.0, self.sigma_v)
        if w != 0.0:
            w += self._rng.gauss(0.0, self.sigma_w)
        return v, w


NO_NOISE = NoiseModel()


def twist_components(cmd) -> tuple[float, float]:
    """(linear.x, angular.z) from a Twist message, payload, or ``(v, w)`` pair."""
    if isinstance(cmd, TypedMessage):
        cmd = cmd.payload
    if isinstance(cmd, dict):
        return float(cmd["linear"]["x"]), float(cmd["angular"]["z"])
    v, w = cmd
    return float(v), float(w)


def apply_twist(s: BaseState, cmd, dt: float, noise: NoiseModel | None = None) -> BaseState:
    """Integrate unicycle motion over ``dt`` seconds in closed form."""
    v, w = twist_components(cmd)
    if not (math.isfinite(v) and math.isfinite(w) and math.isfinite(dt)):
        raise NonFiniteInput(f"v={v}, w={w}, dt={dt}")
    if dt <= 0:
        raise ValueError("dt must be positive")
    if noise is not None:
        v, w = noise.perturb(v, w)
    th = s.theta
    if abs(w) < STRAIGHT_EPS:
        x = s.x + v * dt * math.cos(th)
        y = s.y + v * dt * math.sin(th)
    else:
        r = v / w
        x = s.x + r * (math.sin(th + w * dt) - math.sin(th))
        y = s.y + r * (math.cos(th) - math.cos(th + w * dt))
    return BaseState(x, y, th + w * dt)


# --------------------------------------------------------------------------
# joint trajectories


@dataclass(frozen=True)
class JointLimits:
    lower: float
    upper: float

    def clamp(self, value: float) -> float:
        return min(max(value, self.lower), self.upper)


@dataclass(frozen=True)
class ArmState:
    """Positions of one joint group and the trajectory it is following.

    ``goal`` is a list of ``(time_from_start, positions)`` waypoints over
    ``goal_joints``; ``start_positions`` are the group positions when the
    goal was accepted at ``goal_start_ns``.
    """

    positions: dict
    goal: tuple | None = None
    goal_joints: tuple = ()
    goal_start_ns: int = 0
    start_positions: dict = field(default_factory=dict)
    limits: dict = field(default_factory=dict, compare=False)

    @property
    def active(self) -> bool:
        return self.goal is not None


def parse_trajectory_goal(msg: TypedMessage, known_joints) -> tuple[tuple, tuple]:
    """Check a JointTrajectoryGoal and return ``(joint_names, waypoints)``."""
    problems = validate(msg)
    if problems:
        p = problems[0]
        raise MalformedGoal(f"{p.path}: {p.rule} {p.detail}".strip())
    names = tuple(msg.payload["joint_names"])
    unknown = [n for n in names if n not in known_joints]
    if unknown:
        raise MalformedGoal(f"unknown joints {unknown}")
    points = msg.payload["points"]
    if not points:
        raise MalformedGoal("trajectory has no points")
    if points[0]["time_from_start"] < 0:
        raise MalformedGoal("negative time_from_start")
    waypoints = tuple((float(p["time_from_start"]), tuple(float(x) for x in p["positions"])) for p in points)
    return names, waypoints


def accept_goal(a: ArmState, msg: TypedMessage, t_now_ns: int) -> ArmState:
    names, waypoints = parse_trajectory_goal(msg, a.positions)
    return replace(
        a,
        goal=waypoints,
        goal_joints=names,
        goal_start_ns=t_now_ns,
        start_positions=dict(a.positions),
    )


def apply_trajectory(a: ArmState, t_now_ns: int) -> ArmState:
    """Positions along the active goal at ``t_now_ns``.

    The path runs linearly from the start positions (at elapsed 0) through
    each waypoint; at or past the last waypoint the final positions are held
    and the goal is cleared.
    """
    if a.goal is None:
        return a
    times = [t for t, _ in a.goal]
    if any(t2 <= t1 for t1, t2 in zip(times, times[1:])) or times[0] < 0:
        raise MalformedGoal("time_from_start must be strictly increasing and non-negative")
    if any(len(p) != len(a.goal_joints) for _, p in a.goal):
        raise MalformedGoal("waypoint arity does not match joint names")

    elapsed = (t_now_ns - a.goal_start_ns) / 1e9
    start = tuple(a.start_positions[n] for n in a.goal_joints)
    knots = list(a.goal)
    if knots[0][0] > 0:
        knots.insert(0, (0.0, start))

    done = elapsed >= times[-1]
    if done:
        values = knots[-1][1]
    elif elapsed <= knots[0][0]:
        values = knots[0][1] if knots[0][0] == 0.0 and elapsed >= 0 else start
    else:
        for (t1, p1), (t2, p2) in zip(knots, knots[1:]):
            if t1 <= elapsed < t2:
                u = (elapsed - t1) / (t2 - t1)
                values = tuple(x1 + u * (x2 - x1) for x1, x2 in zip(p1, p2))
                break

    positions = dict(a.positions)
    for name, value in zip(a.goal_joints, values):
        lim = a.limits.get(name)
        positions[name] = lim.clamp(value) if lim else value
    if done:
        return replace(a, positions=positions, goal=None, goal_joints=(), start_positions={})
    return replace(a, positions=positions)
