"""Deterministic kinematic mobile manipulator and the kitting scenarios."""

from .kinematics import (
    ArmState,
    BaseState,
    MalformedGoal,
    NoiseModel,
    NonFiniteInput,
    accept_goal,
    apply_trajectory,
    apply_twist,
    wrap_angle,
)
from .scenarios import (
    SCENARIOS,
    ScenarioResult,
    UnknownScenario,
    load_config,
    replay_on_sim,
    run_scenario,
    run_tree,
)
from .world import BODY_TOPICS, ControllerGains, GoToPose, SimWorld

__all__ = [
    "ArmState", "BaseState", "MalformedGoal", "NoiseModel", "NonFiniteInput", "accept_goal",
    "apply_trajectory", "apply_twist", "wrap_angle", "SCENARIOS", "ScenarioResult",
    "UnknownScenario", "load_config", "replay_on_sim", "run_scenario", "run_tree",
    "BODY_TOPICS", "ControllerGains", "GoToPose", "SimWorld",
]
