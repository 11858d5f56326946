"""Stage 1: intent-aware path diffuser.

Generates k-waypoint paths at a commanded legibility level. The denoiser
is conditioned on the start, the intended goal, a pooled encoding of the
scene's potential field, and the legibility label; the label is repeated
a few times so it is not drowned out by the field features.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

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
from .geometry import Path
from .ipf import GoalScene, IpfGrid, rasterize
from .qd import DatasetRecord

DEFAULT_POOL_2D = (8, 8)
DEFAULT_POOL_3D = (4, 4, 4)
ELL_REPEAT = 4
START_SNAP_RADIUS = 0.1
GOAL_MISS_RADIUS = 0.2

STAGE1_KIND = "path-diffuser"


@dataclass
class Stage1Config:
    grid_resolution: tuple[int, ...] | None = None
    pool: tuple[int, ...] | None = None
    sigma: float | None = None  # scene sigma when None
    hidden: int = 128
    n_blocks: int = 2
    temb_dim: int = 16
    num_steps: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.1
    train_steps: int = 12_000
    batch_size: int = 64
    lr: float = 2e-3
    seed: int = 0

    def resolved_pool(self, dim: int) -> tuple[int, ...]:
        if self.pool is not None:
            return tuple(int(p) for p in self.pool)
        return DEFAULT_POOL_2D if dim == 2 else DEFAULT_POOL_3D


def encode_ipf_features(grid: IpfGrid, pool: tuple[int, ...]) -> np.ndarray:
    """Average-pool the potential grid to ``pool`` resolution, flatten
    row-major, and scale by the grid's maximum so values land in [0, 1]."""
    pool = tuple(int(p) for p in pool)
    if grid.values.size == 0:
        raise DomainError("cannot encode an empty grid")
    if len(pool) != grid.values.ndim:
        raise DomainError(f"pool rank {len(pool)} != grid rank {grid.values.ndim}")
    shape = []
    for p, n in zip(pool, grid.resolution):
        if p < 1 or n % p != 0:
            raise DomainError(f"pool {pool} must evenly divide grid resolution {grid.resolution}")
        shape.extend([p, n // p])
    pooled = grid.values.reshape(shape)
    # Mean over every block axis (the odd positions of the reshape).
    pooled = pooled.mean(axis=tuple(range(1, 2 * len(pool), 2)))
    peak = float(grid.values.max())
    if peak <= 0.0:
        return np.zeros(pooled.size)
    return (pooled / peak).ravel()


@dataclass
class Stage1Context:
    """Conditioning bundle for one generation call."""

    start: np.ndarray
    goal: np.ndarray
    ipf_features: np.ndarray
    ell: float

    def __post_init__(self):
        self.ell = float(np.clip(self.ell, -1.0, 1.0))

    def vector(self) -> np.ndarray:
        return np.concatenate(
            [self.start, self.goal, self.ipf_features, np.full(ELL_REPEAT, self.ell)]
        )

    @staticmethod
    def layout(dim: int, n_features: int) -> list:
        return [["start", dim], ["goal", dim], ["ipf", n_features], ["ell", ELL_REPEAT]]


class Stage1Model:
    """A trained path diffuser plus everything needed to condition it."""

    def __init__(
        self,
        net: DenoiserNet,
        schedule: NoiseSchedule,
        norm: AxisNorm,
        k: int,
        dim: int,
        grid_resolution: tuple[int, ...],
        pool: tuple[int, ...],
        sigma: float | None,
        context_layout: list,
        seed: int,
        train_steps: int,
        final_loss: float = float("nan"),
    ):
        self.net = net
        self.schedule = schedule
        self.norm = norm
        self.k = k
        self.dim = dim
        self.grid_resolution = grid_resolution
        self.pool = pool
        self.sigma = sigma
        self.context_layout = context_layout
        self.seed = seed
        self.train_steps = train_steps
        self.final_loss = final_loss
        self._feature_cache: dict[bytes, np.ndarray] = {}

    def features_for(self, scene: GoalScene) -> np.ndarray:
        key = np.concatenate(
            [scene.goals.ravel(), scene.start, [scene.intended_index, scene.sigma]]
        ).tobytes()
        if key not in self._feature_cache:
            grid = rasterize(scene, self.grid_resolution, sigma=self.sigma)
            self._feature_cache[key] = encode_ipf_features(grid, self.pool)
        return self._feature_cache[key]

    def context_for(self, scene: GoalScene, ell: float) -> np.ndarray:
        ctx = Stage1Context(
            start=scene.start, goal=scene.g_star, ipf_features=self.features_for(scene), ell=ell
        )
        return ctx.vector()


@dataclass
class PathSample:
    """Generated plan plus generation diagnostics."""

    path: Path
    ell: float
    start_snapped: bool
    start_miss: bool
    goal_miss: bool


def train_stage1(records: list[DatasetRecord], config: Stage1Config | None = None) -> Stage1Model:
    """Fit the path diffuser on labeled dataset records."""
    config = config or Stage1Config()
    if not records:
        raise DomainError("cannot train on an empty dataset")
    dim = records[0].scene.dim
    k = len(records[0].path)
    if any(r.scene.dim != dim or len(r.path) != k for r in records):
        raise DomainError("all records must share dimension and waypoint count")
    grid_res = tuple(config.grid_resolution) if config.grid_resolution else None
    pool = config.resolved_pool(dim)

    waypoints = np.stack([r.path.waypoints for r in records])  # (N, k, d)
    norm = AxisNorm.from_points(waypoints.reshape(-1, dim))
    x0 = norm.encode(waypoints).reshape(len(records), k * dim)

    # One grid per distinct target in the dataset.
    cache: dict[int, np.ndarray] = {}
    contexts = []
    for r in records:
        ti = r.scene.intended_index
        if ti not in cache:
            grid = rasterize(r.scene, grid_res, sigma=config.sigma)
            cache[ti] = encode_ipf_features(grid, pool)
            grid_res = grid.resolution  # pin the default for the checkpoint
        ctx = Stage1Context(
            start=r.scene.start,
            goal=r.scene.g_star,
            ipf_features=cache[ti],
            ell=r.label.normalized,
        )
        contexts.append(ctx.vector())
    cond = np.stack(contexts)

    net = DenoiserNet(
        data_dim=k * dim,
        cond_dim=cond.shape[1],
        hidden=config.hidden,
        n_blocks=config.n_blocks,
        temb_dim=config.temb_dim,
        seed=config.seed,
    )
    schedule = NoiseSchedule.linear(config.num_steps, config.beta_start, config.beta_end)
    losses = train_denoiser(
        net,
        x0,
        cond,
        schedule,
        steps=config.train_steps,
        batch_size=config.batch_size,
        seed=config.seed,
        lr=config.lr,
    )
    n_features = cache[records[0].scene.intended_index].size
    return Stage1Model(
        net=net,
        schedule=schedule,
        norm=norm,
        k=k,
        dim=dim,
        grid_resolution=tuple(grid_res),
        pool=pool,
        sigma=config.sigma,
        context_layout=Stage1Context.layout(dim, n_features) + [["temb", config.temb_dim]],
        seed=config.seed,
        train_steps=config.train_steps,
        final_loss=float(losses[-100:].mean()),
    )


def generate_path(model: Stage1Model, scene: GoalScene, ell: float, seed: int) -> PathSample:
    """Sample one k-waypoint path at legibility level ``ell``.

    The first waypoint snaps to the scene start when it lands within 0.1
    workspace units; a final waypoint farther than 0.2 units from the
    intended goal raises only a ``goal_miss`` flag since downstream
    execution is goal-conditioned anyway.
    """
    if not -1.0 <= ell <= 1.0:
        raise DomainError(f"ell must be in [-1, 1], got {ell}")
    if scene.dim != model.dim:
        raise DomainError(f"scene dimension {scene.dim} != model dimension {model.dim}")
    cond = model.context_for(scene, ell)
    rng = np.random.default_rng(seed)
    flat = sample(model.net, cond, model.schedule, rng)
    waypoints = model.norm.decode(flat.reshape(model.k, model.dim))
    start_dist = float(np.linalg.norm(waypoints[0] - scene.start))
    start_snapped = start_dist <= START_SNAP_RADIUS
    if start_snapped:
        waypoints[0] = scene.start
    goal_miss = float(np.linalg.norm(waypoints[-1] - scene.g_star)) > GOAL_MISS_RADIUS
    return PathSample(
        path=Path(waypoints),
        ell=float(ell),
        start_snapped=start_snapped,
        start_miss=not start_snapped,
        goal_miss=goal_miss,
    )


def save_stage1(model: Stage1Model, path) -> None:
    save_checkpoint(
        path,
        model.net,
        model.schedule,
        norm_stats={"data": {"lo": model.norm.lo.tolist(), "hi": model.norm.hi.tolist()}},
        context_layout=model.context_layout,
        seed=model.seed,
        train_steps=model.train_steps,
        meta={
            "kind": STAGE1_KIND,
            "k": model.k,
            "dim": model.dim,
            "grid_resolution": list(model.grid_resolution),
            "pool": list(model.pool),
            "sigma": model.sigma,
            "final_loss": model.final_loss,
        },
    )


def load_stage1(path) -> Stage1Model:
    net, schedule, payload = load_checkpoint(path)
    meta = payload["meta"]
    if meta.get("kind") != STAGE1_KIND:
        raise DomainError(f"checkpoint is not a path diffuser: {meta.get('kind')!r}")
    stats = payload["norm_stats"]["data"]
    return Stage1Model(
        net=net,
        schedule=schedule,
        norm=AxisNorm(lo=np.array(stats["lo"]), hi=np.array(stats["hi"])),
        k=int(meta["k"]),
        dim=int(meta["dim"]),
        grid_resolution=tuple(meta["grid_resolution"]),
        pool=tuple(meta["pool"]),
        sigma=meta["sigma"],
        context_layout=payload["context_layout"],
        seed=payload["seed"],
        train_steps=payload["train_steps"],
        final_loss=float(meta.get("final_loss", float("nan"))),
    )
