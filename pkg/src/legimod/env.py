"""Block-reaching environments: scene construction, point-mass dynamics,
and success evaluation.

The dynamics are a velocity integrator: position += clip(action) * dt,
clamped to the workspace box. Boundary contact clamps rather than ending
the episode so that ambiguous, wall-hugging trajectories stay evaluable.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from .errors import DomainError, UsageError
from .geometry import Trajectory
from .ipf import GoalScene
from .qd import scene_from_dict, scene_to_dict

RUNNING = "running"
SUCCESS = "success"
TIMEOUT = "timeout"

# Default scene layouts. The two goals are adjacent and symmetric about
# the start's vertical axis, so either one may play the intended role.
_2D_DEFAULT = {
    "start": (0.5, 0.1),
    "goals": ((0.3, 0.9), (0.7, 0.9)),
    "bounds_min": (0.0, 0.0),
    "bounds_max": (1.0, 1.0),
}
_3D_DEFAULT = {
    "start": (0.5, 0.5, 0.1),
    "goals": ((0.3, 0.5, 0.9), (0.7, 0.5, 0.9)),
    "bounds_min": (0.0, 0.0, 0.0),
    "bounds_max": (1.0, 1.0, 1.0),
}


@dataclass
class EnvState:
    position: np.ndarray
    step_count: int = 0
    done: str = RUNNING

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float)
        if self.done not in (RUNNING, SUCCESS, TIMEOUT):
            raise DomainError(f"unknown done flag {self.done!r}")
        if self.step_count < 0:
            raise DomainError("step_count must be nonnegative")


def make_scene(variant: str = "2d_default", intended_index: int = 0, **params) -> GoalScene:
    """Build a reaching scene.

    ``2d_default`` and ``3d_default`` use the symmetric two-goal layouts
    above; ``custom`` takes explicit geometry through keyword params.
    """
    if variant == "2d_default":
        geo = dict(_2D_DEFAULT)
    elif variant == "3d_default":
        geo = dict(_3D_DEFAULT)
    elif variant == "custom":
        required = {"start", "goals", "bounds_min", "bounds_max"}
        missing = required - set(params)
        if missing:
            raise DomainError(f"custom scene missing parameters: {sorted(missing)}")
        geo = {k: params.pop(k) for k in required}
    else:
        raise DomainError(f"unknown scene variant {variant!r}")
    return GoalScene(
        start=np.array(geo["start"], dtype=float),
        goals=np.array(geo["goals"], dtype=float),
        intended_index=intended_index,
        bounds_min=np.array(geo["bounds_min"], dtype=float),
        bounds_max=np.array(geo["bounds_max"], dtype=float),
        **params,
    )


def reset(scene: GoalScene) -> EnvState:
    return EnvState(position=scene.start.copy(), step_count=0, done=RUNNING)


def step(state: EnvState, action: np.ndarray, scene: GoalScene) -> EnvState:
    """Apply one clipped velocity command; pure and deterministic."""
    if state.done != RUNNING:
        raise UsageError(f"cannot step an episode that ended with {state.done!r}")
    action = np.asarray(action, dtype=float)
    if action.shape != (scene.dim,):
        raise DomainError(f"action shape {action.shape} != ({scene.dim},)")
    a = np.clip(action, -scene.action_bound, scene.action_bound)
    position = np.clip(state.position + a * scene.dt, scene.bounds_min, scene.bounds_max)
    count = state.step_count + 1
    if np.linalg.norm(position - scene.g_star) <= scene.success_radius:
        done = SUCCESS
    elif count >= scene.max_steps:
        done = TIMEOUT
    else:
        done = RUNNING
    return EnvState(position=position, step_count=count, done=done)


def scripted_straight_line(scene: GoalScene, max_steps: int | None = None) -> tuple[Trajectory, str]:
    """Greedy agent heading straight for the intended goal at the speed
    bound; baseline for success-feasibility checks."""
    max_steps = scene.max_steps if max_steps is None else max_steps
    scene = replace(scene, max_steps=max_steps)
    state = reset(scene)
    states = [state.position.copy()]
    actions = []
    while state.done == RUNNING and state.step_count < max_steps:
        a = np.clip(
            (scene.g_star - state.position) / scene.dt, -scene.action_bound, scene.action_bound
        )
        state = step(state, a, scene)
        states.append(state.position.copy())
        actions.append(a)
    outcome = SUCCESS if state.done == SUCCESS else TIMEOUT
    traj = Trajectory(
        states=np.array(states),
        actions=np.array(actions).reshape(len(actions), scene.dim),
        dt=scene.dt,
    )
    return traj, outcome


def save_scene(scene: GoalScene, path) -> None:
    with open(path, "w") as fh:
        json.dump(scene_to_dict(scene), fh, indent=2)
        fh.write("\n")


def load_scene(path) -> GoalScene:
    with open(path) as fh:
        return scene_from_dict(json.load(fh))
