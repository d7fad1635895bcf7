"""Fixed-step kinematic simulation of a Fetch-like mobile manipulator."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

from .. import messages as m
from ..bus import Bus, VirtualClock
from .kinematics import (
    ArmState,
    BaseState,
    JointLimits,
    MalformedGoal,
    NoiseModel,
    accept_goal,
    apply_trajectory,
    apply_twist,
    twist_components,
    wrap_angle,
)

logger = logging.getLogger(__name__)

# Topics the robot listens to.
GRIPPER_GOAL = "/gripper_controller/gripper_action/goal"
ARM_TORSO_GOAL = "/arm_with_torso_controller/follow_joint_trajectory/goal"
TORSO_GOAL = "/torso_controller/follow_joint_trajectory/goal"
HEAD_POINT_GOAL = "/head_controller/point_head/goal"
HEAD_TRAJ_GOAL = "/head_controller/follow_joint_trajectory/goal"
CMD_VEL = "/cmd_vel"
WAYPOINT_GOAL = "/move_base_simple/goal"
SOUND = "/robotsound"

BODY_TOPICS = (GRIPPER_GOAL, ARM_TORSO_GOAL, TORSO_GOAL, HEAD_POINT_GOAL, HEAD_TRAJ_GOAL, CMD_VEL)

# Topics the robot publishes.
ODOM = "/odom"
JOINT_STATES = "/joint_states"

# Visualization topics, passed through to sinks.
GRASP_CLOUD = "/ar/grasp_cloud"
RECOGNIZED_CLOUD = "/ar/recognized_cloud"
OBSTACLE_CLOUD = "/ar/obstacle_cloud"
DETOUR_PATH = "/ar/detour_path"
CADDY_MARKER = "/ar/caddy_marker"

INPUT_TOPICS = {
    GRIPPER_GOAL: "GripperGoal",
    ARM_TORSO_GOAL: "JointTrajectoryGoal",
    TORSO_GOAL: "JointTrajectoryGoal",
    HEAD_POINT_GOAL: "PointHeadGoal",
    HEAD_TRAJ_GOAL: "JointTrajectoryGoal",
    CMD_VEL: "Twist",
    WAYPOINT_GOAL: "PoseStamped",
}
SINK_TOPICS = {
    GRASP_CLOUD: "PointCloud",
    RECOGNIZED_CLOUD: "PointCloud",
    OBSTACLE_CLOUD: "PointCloud",
    DETOUR_PATH: "Path",
    CADDY_MARKER: "Marker",
    SOUND: "SoundRequest",
}
STATE_TOPICS = {ODOM: "Pose2D", JOINT_STATES: "JointState"}

TORSO_JOINT = "torso_lift_joint"
ARM_JOINTS = (
    "shoulder_pan_joint",
    "shoulder_lift_joint",
    "upperarm_roll_joint",
    "elbow_flex_joint",
    "forearm_roll_joint",
    "wrist_flex_joint",
    "wrist_roll_joint",
)
HEAD_JOINTS = ("head_pan_joint", "head_tilt_joint")
GRIPPER_JOINT = "gripper_joint"
ALL_JOINTS = (TORSO_JOINT,) + ARM_JOINTS + HEAD_JOINTS + (GRIPPER_JOINT,)

JOINT_LIMITS = {
    TORSO_JOINT: JointLimits(0.0, 0.386),
    "shoulder_pan_joint": JointLimits(-1.6056, 1.6056),
    "shoulder_lift_joint": JointLimits(-1.221, 1.518),
    "upperarm_roll_joint": JointLimits(-math.pi, math.pi),
    "elbow_flex_joint": JointLimits(-2.251, 2.251),
    "forearm_roll_joint": JointLimits(-math.pi, math.pi),
    "wrist_flex_joint": JointLimits(-2.16, 2.16),
    "wrist_roll_joint": JointLimits(-math.pi, math.pi),
    "head_pan_joint": JointLimits(-1.57, 1.57),
    "head_tilt_joint": JointLimits(-0.76, 1.45),
    GRIPPER_JOINT: JointLimits(0.0, 0.1),
}

# Stowed arm, lowered torso, head level, gripper open.
HOME_POSITIONS = {
    TORSO_JOINT: 0.0,
    "shoulder_pan_joint": 1.32,
    "shoulder_lift_joint": 1.40,
    "upperarm_roll_joint": -0.2,
    "elbow_flex_joint": 1.72,
    "forearm_roll_joint": 0.0,
    "wrist_flex_joint": 1.66,
    "wrist_roll_joint": 0.0,
    "head_pan_joint": 0.0,
    "head_tilt_joint": 0.0,
    GRIPPER_JOINT: 0.1,
}

HEAD_HEIGHT = 1.1  # m above ground with the torso down
HEAD_SPEED = 1.0  # rad/s
GRIPPER_SPEED = 0.1  # m/s


@dataclass(frozen=True)
class ControllerGains:
    """Go-to-pose controller constants."""

    k_v: float = 8.0
    k_w: float = 8.0
    v_max: float = 0.4
    w_max: float = 1.0
    pos_tol: float = 2e-4
    yaw_tol: float = 2e-3
    heading_gate: float = 0.4


class GoToPose:
    """Drives the base to a pose: turn toward the goal, drive while roughly
    facing it (backing up when it lies behind), then turn to the goal yaw."""

    def __init__(self, gains: ControllerGains):
        self.gains = gains
        self.goal: BaseState | None = None

    @property
    def active(self) -> bool:
        return self.goal is not None

    def set_goal(self, goal: BaseState) -> None:
        self.goal = goal

    def command(self, s: BaseState) -> tuple[float, float]:
        g = self.gains
        goal = self.goal
        dx, dy = goal.x - s.x, goal.y - s.y
        dist = math.hypot(dx, dy)
        if dist > g.pos_tol:
            heading = wrap_angle(math.atan2(dy, dx) - s.theta)
            direction = 1.0
            if abs(heading) > math.pi / 2:
                heading = wrap_angle(heading - math.pi)
                direction = -1.0
            w = _clamp(g.k_w * heading, g.w_max)
            if abs(heading) > g.heading_gate:
                return 0.0, w
            v = direction * min(g.k_v * dist, g.v_max) * math.cos(heading)
            return v, w
        yaw_err = wrap_angle(goal.theta - s.theta)
        if abs(yaw_err) > g.yaw_tol:
            return 0.0, _clamp(g.k_w * yaw_err, g.w_max)
        self.goal = None
        return 0.0, 0.0


def _clamp(value: float, limit: float) -> float:
    return max(-limit, min(limit, value))


class SimWorld:
    """Kinematic robot driven through the bus.

    Each :meth:`step` publishes the current state, drains pending inputs,
    integrates all motion over ``dt`` and finally lets the go-to-pose
    controller publish its next ``/cmd_vel``.  Time is virtual: the world
    owns the bus clock's progression, so identical inputs and seed give
    bit-identical trajectories.
    """

    def __init__(self, bus: Bus, dt: float = 0.05, noise: NoiseModel | None = None,
                 gains: ControllerGains | None = None, start: BaseState | None = None,
                 dump=None):
        if not isinstance(bus.clock, VirtualClock):
            raise TypeError("SimWorld needs a bus driven by a VirtualClock")
        if dt <= 0:
            raise ValueError("dt must be positive")
        self.bus = bus
        self.clock = bus.clock
        self.dt_ns = round(dt * 1e9)
        self.dt = self.dt_ns / 1e9
        self.noise = noise or NoiseModel()
        self.controller = GoToPose(gains or ControllerGains())
        self.base = start or BaseState()
        self.cmd = (0.0, 0.0)
        self.groups = {
            "arm_with_torso": ArmState({n: HOME_POSITIONS[n] for n in (TORSO_JOINT,) + ARM_JOINTS}, limits=JOINT_LIMITS),
            "head": ArmState({n: HOME_POSITIONS[n] for n in HEAD_JOINTS}, limits=JOINT_LIMITS),
            "gripper": ArmState({GRIPPER_JOINT: HOME_POSITIONS[GRIPPER_JOINT]}, limits=JOINT_LIMITS),
        }
        self.sinks: dict[str, list] = {t: [] for t in SINK_TOPICS}
        self.errors: list[str] = []
        self.steps = 0
        self.dump = dump

        for topic, type_name in {**INPUT_TOPICS, **SINK_TOPICS, **STATE_TOPICS}.items():
            bus.advertise(topic, type_name)
        self._subs = {t: bus.subscribe(t, maxsize=0) for t in {**INPUT_TOPICS, **SINK_TOPICS}}
        self.clock.add_hook(self.advance_to)

    # -- state -----------------------------------------------------------

    @property
    def time_ns(self) -> int:
        return self.clock.now_ns()

    @property
    def joints(self) -> dict:
        out = {}
        for g in self.groups.values():
            out.update(g.positions)
        return out

    @property
    def idle(self) -> bool:
        return (not self.controller.active and self.cmd == (0.0, 0.0)
                and not any(g.active for g in self.groups.values()))

    def group_for(self, topic: str) -> str:
        return {ARM_TORSO_GOAL: "arm_with_torso", TORSO_GOAL: "arm_with_torso",
                HEAD_TRAJ_GOAL: "head"}[topic]

    def close(self) -> None:
        self.clock.remove_hook(self.advance_to)
        for sub in self._subs.values():
            sub.close()

    # -- inputs ----------------------------------------------------------

    def _handle(self, topic: str, msg: m.TypedMessage, now: int) -> None:
        if topic == CMD_VEL:
            self.cmd = twist_components(msg)
        elif topic == WAYPOINT_GOAL:
            p = msg.payload["pose"]
            goal = BaseState(p["position"]["x"], p["position"]["y"], m.quaternion_yaw(p["orientation"]))
            self.controller.set_goal(goal)
        elif topic in (ARM_TORSO_GOAL, TORSO_GOAL, HEAD_TRAJ_GOAL):
            name = self.group_for(topic)
            self.groups[name] = accept_goal(self.groups[name], msg, now)
        elif topic == GRIPPER_GOAL:
            g = self.groups["gripper"]
            target = JOINT_LIMITS[GRIPPER_JOINT].clamp(msg.payload["position"])
            duration = max(abs(target - g.positions[GRIPPER_JOINT]) / GRIPPER_SPEED, self.dt)
            goal = m.joint_trajectory_goal([GRIPPER_JOINT], [([target], duration)])
            self.groups["gripper"] = accept_goal(g, goal, now)
        elif topic == HEAD_POINT_GOAL:
            self._point_head(msg.payload["target"], now)
        elif topic in self.sinks:
            self.sinks[topic].append((now, msg))

    def _point_head(self, target: dict, now: int) -> None:
        b = self.base
        dx, dy = target["x"] - b.x, target["y"] - b.y
        height = HEAD_HEIGHT + self.joints[TORSO_JOINT]
        pan = JOINT_LIMITS["head_pan_joint"].clamp(wrap_angle(math.atan2(dy, dx) - b.theta))
        tilt = JOINT_LIMITS["head_tilt_joint"].clamp(math.atan2(height - target["z"], math.hypot(dx, dy)))
        g = self.groups["head"]
        swing = max(abs(pan - g.positions["head_pan_joint"]), abs(tilt - g.positions["head_tilt_joint"]))
        duration = max(swing / HEAD_SPEED, self.dt)
        goal = m.joint_trajectory_goal(HEAD_JOINTS, [([pan, tilt], duration)])
        self.groups["head"] = accept_goal(g, goal, now)

    # -- stepping --------------------------------------------------------

    def publish_state(self) -> None:
        now = self.time_ns
        b = self.base
        self.bus.publish(ODOM, m.pose2d(b.x, b.y, b.theta))
        joints = self.joints
        self.bus.publish(JOINT_STATES, m.joint_state(ALL_JOINTS, [joints[n] for n in ALL_JOINTS], now))

    def step(self) -> None:
        now = self.time_ns
        self.publish_state()
        for topic in sorted(self._subs):
            for delivery in self._subs[topic].drain():
                try:
                    self._handle(topic, delivery.msg, now)
                except (MalformedGoal, KeyError, TypeError, ValueError) as exc:
                    self.errors.append(f"{topic}: {exc}")
                    logger.warning("rejected input on %s: %s", topic, exc)

        self.base = apply_twist(self.base, self.cmd, self.dt, self.noise)
        later = now + self.dt_ns
        for name, g in self.groups.items():
            self.groups[name] = apply_trajectory(g, later)
        self.clock.set_ns(later)
        self.steps += 1

        if self.controller.active:
            v, w = self.controller.command(self.base)
            self.bus.publish(CMD_VEL, m.twist(v, w))
        if self.dump is not None:
            self.dump.write(self.state_line() + "\n")

    def advance_to(self, t_ns: int) -> None:
        """Step while a whole step fits before ``t_ns``."""
        while self.time_ns + self.dt_ns <= t_ns:
            self.step()

    def run_for(self, seconds: float) -> None:
        self.advance_to(self.time_ns + round(seconds * 1e9))

    def run_until_idle(self, max_seconds: float = 120.0) -> bool:
        """Step until nothing is moving; the pending inputs are drained first."""
        deadline = self.time_ns + round(max_seconds * 1e9)
        while self.time_ns < deadline:
            pending = any(not s._queue.empty() for t, s in self._subs.items() if t in INPUT_TOPICS)
            if self.idle and not pending:
                return True
            self.step()
        return self.idle

    def reset(self, start: BaseState | None = None) -> None:
        self.base = start or BaseState()
        self.cmd = (0.0, 0.0)
        self.controller.goal = None
        for name, g in self.groups.items():
            self.groups[name] = replace(g, positions={n: HOME_POSITIONS[n] for n in g.positions}, goal=None)

    def state_line(self) -> str:
        b = self.base
        joints = self.joints
        return " ".join(
            [f"t={self.time_ns}", f"x={b.x!r}", f"y={b.y!r}", f"theta={b.theta!r}"]
            + [f"{n}={joints[n]!r}" for n in ALL_JOINTS]
        )
