"""Scripted kitting scenarios (pick, detour navigation, place) and the
actions their behavior trees call."""

from __future__ import annotations

import json
import math
import tempfile
from dataclasses import dataclass, field, replace
from pathlib import Path

from .. import btree
from .. import messages as m
from ..btree import FAILURE, RUNNING, SUCCESS, ActionRegistry, TickContext
from ..bus import Bus, VirtualClock
from ..recorder import Recorder
from ..replayer import ReplayReport, plan, replay
from ..store import DocStore, Query
from .kinematics import BaseState, NoiseModel
from .world import (
    ARM_JOINTS,
    ARM_TORSO_GOAL,
    CADDY_MARKER,
    DETOUR_PATH,
    GRASP_CLOUD,
    GRIPPER_GOAL,
    HEAD_POINT_GOAL,
    ODOM,
    OBSTACLE_CLOUD,
    RECOGNIZED_CLOUD,
    SOUND,
    TORSO_GOAL,
    TORSO_JOINT,
    WAYPOINT_GOAL,
    ControllerGains,
    SimWorld,
)

DATA_DIR = Path(__file__).parent / "data"
SCENARIOS = ("pick", "navigate", "place")

TORSO_SPEED = 0.1  # m/s
MIN_MOVE_TIME = 0.5  # s
GRIPPER_POSITIONS = {"open": 0.1, "closed": 0.02}


class UnknownScenario(Exception):
    pass


def load_config(name_or_path) -> dict:
    """Scenario config merged over its geometry file.

    ``name_or_path`` is a packaged scenario name or a path to a JSON config.
    """
    path = Path(name_or_path)
    if not path.suffix:
        if str(name_or_path) not in SCENARIOS:
            raise UnknownScenario(name_or_path)
        path = DATA_DIR / f"{name_or_path}.json"
    cfg = json.loads(path.read_text(encoding="utf-8"))
    geometry = cfg.pop("geometry", None)
    merged = json.loads((path.parent / geometry).read_text(encoding="utf-8")) if geometry else {}
    merged.update(cfg)
    if "tree" in merged:
        merged["tree"] = str(path.parent / merged["tree"])
    merged.setdefault("name", path.stem)
    return merged


def default_config() -> dict:
    cfg = json.loads((DATA_DIR / "world.json").read_text(encoding="utf-8"))
    cfg["name"] = "world"
    return cfg


def make_noise(cfg: dict, seed: int | None = None, enabled: bool | None = None) -> NoiseModel:
    spec = dict(cfg.get("noise", {}))
    spec.setdefault("seed", cfg.get("seed", 0))
    if seed is not None:
        spec["seed"] = seed
    if enabled is not None:
        spec["enabled"] = enabled
    return NoiseModel(**spec)


def make_world(cfg: dict, noise: NoiseModel | None = None, start: BaseState | None = None, dump=None):
    bus = Bus(VirtualClock())
    if start is None:
        start = BaseState(*cfg.get("start", (0.0, 0.0, 0.0)))
    world = SimWorld(
        bus,
        dt=cfg.get("dt", 0.05),
        noise=noise or make_noise(cfg),
        gains=ControllerGains(**cfg.get("gains", {})),
        start=start,
        dump=dump,
    )
    for name, value in cfg.get("initial_joints", {}).items():
        for gname, g in world.groups.items():
            if name in g.positions:
                world.groups[gname] = replace(g, positions={**g.positions, name: float(value)})
    return bus, world


# --------------------------------------------------------------------------
# actions


def _once(send, finished=None):
    """Handler that performs ``send`` once per run, then reports SUCCESS
    (immediately, or once ``finished`` holds).

    Completion is remembered on the blackboard so a reactive parent that
    re-ticks the action does not repeat it.
    """

    def handler(ctx: TickContext, node: btree.Action):
        key = f"done:{id(node)}"
        if ctx.blackboard.get(key):
            return SUCCESS
        if not node.state.get("sent"):
            send(ctx, node)
            node.state["sent"] = True
            if finished is None:
                ctx.blackboard[key] = True
                return SUCCESS
            return RUNNING
        if finished(ctx, node):
            ctx.blackboard[key] = True
            return SUCCESS
        return RUNNING

    return handler


def _grid(center, size, step=0.02):
    cx, cy, cz = center
    sx, sy = size
    nx, ny = max(int(round(sx / step)), 1), max(int(round(sy / step)), 1)
    return [
        (cx - sx / 2 + sx * (i + 0.5) / nx, cy - sy / 2 + sy * (j + 0.5) / ny, cz)
        for i in range(nx)
        for j in range(ny)
    ]


def _sphere(center, radius, rings=4, per_ring=12):
    cx, cy, cz = center
    pts = []
    for r in range(rings):
        polar = math.pi * (r + 0.5) / rings
        for k in range(per_ring):
            az = 2 * math.pi * k / per_ring
            pts.append((
                cx + radius * math.sin(polar) * math.cos(az),
                cy + radius * math.sin(polar) * math.sin(az),
                cz + radius * math.cos(polar),
            ))
    return pts


def build_registry(world: SimWorld, cfg: dict) -> ActionRegistry:
    """Actions bound to ``world``; geometry comes from ``cfg``."""
    bus = world.bus
    objects = cfg.get("objects", {})
    arm_speed = cfg.get("arm_speed", 0.8)
    reg = ActionRegistry()

    def now():
        return bus.now_ns()

    def group_idle(name):
        return lambda ctx, node: not world.groups[name].active

    def speak(ctx, node):
        bus.publish(SOUND, m.sound_request(node.params.get("text", "")))

    def move_torso(ctx, node):
        target = float(node.params["height"])
        current = world.joints[TORSO_JOINT]
        duration = max(abs(target - current) / TORSO_SPEED, MIN_MOVE_TIME)
        bus.publish(TORSO_GOAL, m.joint_trajectory_goal([TORSO_JOINT], [([target], duration)]))

    def point_head(ctx, node):
        x, y, z = objects[node.params["target"]]
        bus.publish(HEAD_POINT_GOAL, m.point_head_goal(x, y, z, stamp_ns=now()))

    def move_arm(ctx, node):
        target = cfg["arm_poses"][node.params["pose"]]
        names = (TORSO_JOINT,) + ARM_JOINTS
        current = world.joints
        swing = max(abs(t - current[n]) for n, t in zip(names, target))
        duration = max(swing / arm_speed, MIN_MOVE_TIME)
        mid = [current[n] + 0.5 * (t - current[n]) for n, t in zip(names, target)]
        goal = m.joint_trajectory_goal(names, [(mid, duration / 2), (target, duration)])
        bus.publish(ARM_TORSO_GOAL, goal)

    def gripper(ctx, node):
        pos = node.params.get("position", "open")
        value = GRIPPER_POSITIONS[pos] if pos in GRIPPER_POSITIONS else float(pos)
        bus.publish(GRIPPER_GOAL, m.gripper_goal(value, float(node.params.get("max_effort", 60.0))))

    def perceive(ctx, node):
        footprints = cfg.get("footprints", {})
        grasp = node.params["grasp"]
        pts = _grid(objects[grasp], footprints.get(grasp, (0.05, 0.05)))
        bus.publish(GRASP_CLOUD, m.point_cloud(pts, stamp_ns=now()))
        recognized = node.params.get("recognized", "").split()
        if recognized:
            pts = [p for name in recognized for p in _grid(objects[name], footprints.get(name, (0.05, 0.05)))]
            bus.publish(RECOGNIZED_CLOUD, m.point_cloud(pts, stamp_ns=now()))
        ctx.blackboard["grasp_target"] = grasp

    def detect_obstacle(ctx, node):
        name = node.params.get("obstacle", "obstacle")
        pts = _sphere(objects[name], cfg.get("obstacle_radius", 0.2))
        bus.publish(OBSTACLE_CLOUD, m.point_cloud(pts, stamp_ns=now()))
        ctx.blackboard["obstacle"] = name

    def plan_path(ctx, node):
        b = world.base
        poses = [(b.x, b.y, b.theta)] + [tuple(p) for p in cfg["route"]]
        bus.publish(DETOUR_PATH, m.path(poses, stamp_ns=now()))
        ctx.blackboard["route"] = [list(p) for p in cfg["route"]]

    def perceive_section(ctx, node):
        section = cfg["caddy_sections"][node.params["section"]]
        bus.publish(
            CADDY_MARKER,
            m.marker("cube", section["center"], section["size"], (1.0, 1.0, 1.0, 0.8), stamp_ns=now()),
        )
        ctx.blackboard["place_section"] = node.params["section"]

    def follow_path(ctx, node):
        key = f"done:{id(node)}"
        if ctx.blackboard.get(key):
            return SUCCESS
        route = ctx.blackboard.get("route") or [list(p) for p in cfg["route"]]
        i = node.state.get("index", 0)
        if node.state.get("sent"):
            if world.controller.active:
                return RUNNING
            i += 1
            node.state["sent"] = False
        if i >= len(route):
            ctx.blackboard[key] = True
            return SUCCESS
        x, y, yaw = route[i]
        bus.publish(WAYPOINT_GOAL, m.pose_stamped(x, y, yaw, stamp_ns=now()))
        node.state.update(index=i, sent=True)
        return RUNNING

    def wait(ctx, node):
        if "until" not in node.state:
            node.state["until"] = now() + round(float(node.params.get("seconds", 1.0)) * 1e9)
        return SUCCESS if now() >= node.state["until"] else RUNNING

    reg.register("Speak", _once(speak))
    reg.register("MoveTorso", _once(move_torso, group_idle("arm_with_torso")))
    reg.register("PointHead", _once(point_head, group_idle("head")))
    reg.register("MoveArm", _once(move_arm, group_idle("arm_with_torso")))
    reg.register("Gripper", _once(gripper, group_idle("gripper")))
    reg.register("Perceive", _once(perceive))
    reg.register("DetectObstacle", _once(detect_obstacle))
    reg.register("PlanPath", _once(plan_path))
    reg.register("PerceiveSection", _once(perceive_section))
    reg.register("FollowPath", follow_path)
    reg.register("Wait", wait)
    reg.register("AlwaysSuccess", lambda ctx, node: SUCCESS)
    reg.register("AlwaysFailure", lambda ctx, node: FAILURE)
    return reg


# --------------------------------------------------------------------------
# running


@dataclass
class ScenarioResult:
    name: str
    status: btree.Status
    world: SimWorld
    bus: Bus
    store: DocStore | None = None
    collection: str | None = None
    sessions: list = field(default_factory=list)
    diagnostics: list = field(default_factory=list)

    @property
    def session_ids(self) -> list[str]:
        return [s.session_id for s in self.sessions]

    @property
    def final_base(self) -> BaseState:
        return self.world.base


def run_tree(tree: btree.Node, cfg: dict, store: DocStore | None = None, collection: str = "default",
             noise: NoiseModel | None = None, dump=None, max_ticks: int = 20_000) -> ScenarioResult:
    """Tick ``tree`` against a fresh simulator until it finishes, one
    simulator step between ticks, then let the robot settle."""
    bus, world = make_world(cfg, noise=noise, dump=dump)
    recorder = Recorder(bus, store, collection) if store is not None else None
    ctx = TickContext(bus=bus, recorder=recorder, collection=collection, resources={"world": world})
    registry = build_registry(world, cfg)
    status = btree.run(tree, ctx, registry, between_ticks=world.step, max_ticks=max_ticks)
    world.run_until_idle()
    return ScenarioResult(cfg.get("name", ""), status, world, bus, store, collection,
                          list(ctx.sessions), list(ctx.diagnostics))


def run_scenario(name: str, record: bool = True, store: DocStore | None = None,
                 collection: str | None = None, seed: int | None = None,
                 noise: NoiseModel | None = None, dump=None) -> ScenarioResult:
    """Run a packaged scenario.  With ``record`` each RecordScope phase is
    stored (in a temporary store when none is given)."""
    if name not in SCENARIOS:
        raise UnknownScenario(name)
    cfg = load_config(name)
    if record and store is None:
        store = DocStore(tempfile.mkdtemp(prefix="replaykit-"))
    tree = btree.load_tree(cfg["tree"])
    noise = noise or make_noise(cfg, seed)
    return run_tree(tree, cfg, store if record else None, collection or name, noise=noise, dump=dump)


def initial_base(store: DocStore, collection: str, q: Query | None = None) -> BaseState | None:
    """First recorded ``/odom`` pose among the envelopes ``q`` selects
    (ignoring its topic filter)."""
    q = q or Query()
    odom = store.query(collection, replace(q, topics=frozenset({ODOM})))
    if not odom:
        return None
    p = odom[0].message().payload
    return BaseState(p["x"], p["y"], p["theta"])


def replay_on_sim(store: DocStore, collection: str, q: Query | None = None, cfg: dict | None = None,
                  noise: NoiseModel | None = None, rate: float = 1.0, start: BaseState | None = None,
                  settle_s: float = 120.0) -> tuple[ReplayReport, SimWorld]:
    """Replay selected envelopes onto a freshly reset simulator in virtual
    time and run it until it comes to rest."""
    cfg = cfg or default_config()
    if start is None:
        start = initial_base(store, collection, q)
    bus, world = make_world(cfg, noise=noise or make_noise(cfg, enabled=False), start=start)
    report = replay(plan(store, collection, q, rate), bus)
    world.run_until_idle(settle_s)
    return report, world
