"""Stage 2: path-guided diffusion policy.

Conditioned on a short state history, the goal, and the Stage-1 path, the
policy denoises an H-step chunk of velocity commands. Execution is
receding-horizon: sample a chunk, run all H actions through the point-mass
dynamics, re-observe, repeat until the goal or the step budget.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, replace

import numpy as np

from . import env
from .diffusion import (
    AxisNorm,
    DenoiserNet,
    NoiseSchedule,
    load_checkpoint,
    sample,
    save_checkpoint,
    train_denoiser,
)
from .errors import DomainError
from .geometry import Path, Trajectory
from .ipf import GoalScene
from .qd import DatasetRecord

STAGE2_KIND = "guided-policy"

DEFAULT_N_OBS = 2
DEFAULT_HORIZON = 8


@dataclass
class Stage2Config:
    n_obs: int = DEFAULT_N_OBS
    horizon: int = DEFAULT_HORIZON
    hidden: int = 128
    n_blocks: int = 2
    temb_dim: int = 16
    num_steps: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.1
    train_steps: int = 12_000
    batch_size: int = 128
    lr: float = 2e-3
    seed: int = 0


@dataclass
class PolicyObservation:
    """What the policy sees at a replanning point."""

    history: np.ndarray  # (n_obs, d), oldest first
    goal: np.ndarray
    path: Path

    def vector(self) -> np.ndarray:
        return np.concatenate([self.history.ravel(), self.goal, self.path.waypoints.ravel()])


@dataclass
class ActionChunk:
    actions: np.ndarray  # (H, d)


def slice_chunks(traj: Trajectory, n_obs: int, horizon: int):
    """Cut a demonstration into (history, action-chunk) training pairs.

    Chunks start every ``horizon`` actions; the trailing partial chunk is
    padded by repeating the final action. The history at chunk start is
    the ``n_obs`` most recent states, front-padded with the initial state.
    """
    if traj.actions is None:
        raise DomainError("demonstration has no actions; run demo_rollout first")
    n_actions = traj.actions.shape[0]
    pairs = []
    for start in range(0, n_actions, horizon):
        chunk = traj.actions[start : start + horizon]
        if chunk.shape[0] < horizon:
            pad = np.repeat(chunk[-1:], horizon - chunk.shape[0], axis=0)
            chunk = np.concatenate([chunk, pad], axis=0)
        hist_idx = [max(0, start - (n_obs - 1) + i) for i in range(n_obs)]
        history = traj.states[hist_idx]
        pairs.append((history, chunk))
    return pairs


class Stage2Model:
    """A trained action-chunk denoiser plus its conditioning agreement."""

    def __init__(
        self,
        net: DenoiserNet,
        schedule: NoiseSchedule,
        action_norm: AxisNorm,
        n_obs: int,
        horizon: int,
        k: int,
        dim: int,
        action_bound: float,
        context_layout: list,
        seed: int,
        train_steps: int,
        final_loss: float = float("nan"),
    ):
        self.net = net
        self.schedule = schedule
        self.action_norm = action_norm
        self.n_obs = n_obs
        self.horizon = horizon
        self.k = k
        self.dim = dim
        self.action_bound = action_bound
        self.context_layout = context_layout
        self.seed = seed
        self.train_steps = train_steps
        self.final_loss = final_loss


def train_stage2(records: list[DatasetRecord], config: Stage2Config | None = None) -> Stage2Model:
    """Fit the policy on state-action demonstrations with their own paths
    as conditioning."""
    config = config or Stage2Config()
    if not records:
        raise DomainError("cannot train on an empty dataset")
    if any(r.trajectory.actions is None for r in records):
        raise DomainError("records must carry actions; generate the dataset with demos enabled")
    dim = records[0].scene.dim
    k = len(records[0].path)

    chunks = []
    conds = []
    for r in records:
        goal = r.scene.g_star
        for history, chunk in slice_chunks(r.trajectory, config.n_obs, config.horizon):
            obs = PolicyObservation(history=history, goal=goal, path=r.path)
            conds.append(obs.vector())
            chunks.append(chunk)
    chunks = np.stack(chunks)  # (M, H, d)
    conds = np.stack(conds)

    action_norm = AxisNorm.from_points(chunks.reshape(-1, dim))
    x0 = action_norm.encode(chunks).reshape(chunks.shape[0], config.horizon * dim)

    net = DenoiserNet(
        data_dim=config.horizon * dim,
        cond_dim=conds.shape[1],
        hidden=config.hidden,
        n_blocks=config.n_blocks,
        temb_dim=config.temb_dim,
        seed=config.seed,
    )
    schedule = NoiseSchedule.linear(config.num_steps, config.beta_start, config.beta_end)
    losses = train_denoiser(
        net,
        x0,
        conds,
        schedule,
        steps=config.train_steps,
        batch_size=config.batch_size,
        seed=config.seed,
        lr=config.lr,
    )
    layout = [
        ["history", config.n_obs * dim],
        ["goal", dim],
        ["path", k * dim],
        ["temb", config.temb_dim],
    ]
    return Stage2Model(
        net=net,
        schedule=schedule,
        action_norm=action_norm,
        n_obs=config.n_obs,
        horizon=config.horizon,
        k=k,
        dim=dim,
        action_bound=records[0].scene.action_bound,
        context_layout=layout,
        seed=config.seed,
        train_steps=config.train_steps,
        final_loss=float(losses[-100:].mean()),
    )


def act(model: Stage2Model, obs: PolicyObservation, rng) -> ActionChunk:
    """Sample one H-step chunk; actions are clipped to the training bound.
    ``rng`` may be a seed or a Generator."""
    if obs.history.shape != (model.n_obs, model.dim):
        raise DomainError(f"history shape {obs.history.shape} != ({model.n_obs}, {model.dim})")
    if not isinstance(rng, np.random.Generator):
        rng = np.random.default_rng(rng)
    flat = sample(model.net, obs.vector(), model.schedule, rng)
    actions = model.action_norm.decode(flat.reshape(model.horizon, model.dim))
    actions = np.clip(actions, -model.action_bound, model.action_bound)
    return ActionChunk(actions=actions)


@dataclass
class RolloutResult:
    trajectory: Trajectory
    outcome: str  # env.SUCCESS or env.TIMEOUT
    n_replans: int


def rollout(
    model: Stage2Model,
    scene: GoalScene,
    path: Path,
    max_steps: int | None = None,
    seed: int = 0,
) -> RolloutResult:
    """Receding-horizon execution of the policy along a Stage-1 path.

    Each replan re-conditions on the original path; all H actions of a
    chunk run before the next replan unless the episode ends mid-chunk.
    """
    max_steps = scene.max_steps if max_steps is None else int(max_steps)
    run_scene = replace(scene, max_steps=max(max_steps, 1))
    rng = np.random.default_rng(seed)
    state = env.reset(run_scene)
    states = [state.position.copy()]
    actions: list[np.ndarray] = []
    history = [state.position.copy()] * model.n_obs
    n_replans = 0
    while state.done == env.RUNNING and state.step_count < max_steps:
        obs = PolicyObservation(
            history=np.array(history[-model.n_obs :]), goal=run_scene.g_star, path=path
        )
        chunk = act(model, obs, rng)
        n_replans += 1
        for a in chunk.actions:
            if state.done != env.RUNNING or state.step_count >= max_steps:
                break
            state = env.step(state, a, run_scene)
            states.append(state.position.copy())
            actions.append(np.clip(a, -run_scene.action_bound, run_scene.action_bound))
            history.append(state.position.copy())
    outcome = env.SUCCESS if state.done == env.SUCCESS else env.TIMEOUT
    traj = Trajectory(
        states=np.array(states),
        actions=np.array(actions).reshape(len(actions), scene.dim),
        dt=scene.dt,
    )
    return RolloutResult(trajectory=traj, outcome=outcome, n_replans=n_replans)


def save_stage2(model: Stage2Model, path) -> None:
    save_checkpoint(
        path,
        model.net,
        model.schedule,
        norm_stats={
            "data": {"lo": model.action_norm.lo.tolist(), "hi": model.action_norm.hi.tolist()}
        },
        context_layout=model.context_layout,
        seed=model.seed,
        train_steps=model.train_steps,
        meta={
            "kind": STAGE2_KIND,
            "n_obs": model.n_obs,
            "horizon": model.horizon,
            "k": model.k,
            "dim": model.dim,
            "action_bound": model.action_bound,
            "final_loss": model.final_loss,
        },
    )


def load_stage2(path) -> Stage2Model:
    net, schedule, payload = load_checkpoint(path)
    meta = payload["meta"]
    if meta.get("kind") != STAGE2_KIND:
        raise DomainError(f"checkpoint is not a guided policy: {meta.get('kind')!r}")
    stats = payload["norm_stats"]["data"]
    return Stage2Model(
        net=net,
        schedule=schedule,
        action_norm=AxisNorm(lo=np.array(stats["lo"]), hi=np.array(stats["hi"])),
        n_obs=int(meta["n_obs"]),
        horizon=int(meta["horizon"]),
        k=int(meta["k"]),
        dim=int(meta["dim"]),
        action_bound=float(meta["action_bound"]),
        context_layout=payload["context_layout"],
        seed=payload["seed"],
        train_steps=payload["train_steps"],
        final_loss=float(meta.get("final_loss", float("nan"))),
    )


def save_trajectory(traj: Trajectory, path) -> None:
    """Line-delimited trajectory records: step index, state, action taken
    from that state (null on the final record)."""
    with open(path, "w") as fh:
        for t in range(len(traj)):
            action = None
            if traj.actions is not None and t < traj.actions.shape[0]:
                action = traj.actions[t].tolist()
            fh.write(
                json.dumps({"t": t, "state": traj.states[t].tolist(), "action": action}) + "\n"
            )


def load_trajectory(path, dt: float = 0.05) -> Trajectory:
    with open(path) as fh:
        rows = [json.loads(line) for line in fh.read().splitlines() if line.strip()]
    if not rows:
        raise DomainError(f"empty trajectory file: {path}")
    states = np.array([r["state"] for r in rows], dtype=float)
    acts = [r["action"] for r in rows[:-1]]
    if not acts or any(a is None for a in acts):
        actions = None
    else:
        actions = np.array(acts, dtype=float)
    return Trajectory(states=states, actions=actions, dt=dt)
