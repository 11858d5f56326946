"""Quality-diversity trajectory dataset generation.

Candidate trajectories are cubic Beziers from the scene start to the
intended goal with uniformly sampled control points, resampled by arc
length. Each candidate is keyed by where it deviates most from the
straight chord and competes for that grid cell on its potential-based
legibility score, so the surviving archive spans geometric styles from
direct to strongly detouring, and with them the whole legibility range.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import CohortTooSmallError, ConsistencyError, DomainError, InfeasibleDemoError
from .geometry import (
    BezierCurve,
    DeviationDescriptor,
    Path,
    Trajectory,
    deviation_descriptor,
    resample_arclength,
    straight_line_curve,
    subsample_path,
)
from .ipf import GoalScene
from .scoring import DEFAULT_ALPHA, LegibilityLabel, rank_normalize, score_lp_eval, score_lp_train

DATASET_FORMAT = "legimod-dataset-v1"

DEFAULT_N_STATES = 100
DEFAULT_CELL_GRID_2D = (10, 10)
DEFAULT_CELL_GRID_3D = (6, 6, 6)
DEFAULT_BUDGET = 10_000

OUTCOME_NEW = "new_cell"
OUTCOME_IMPROVED = "improved"
OUTCOME_REJECTED = "rejected"
OUTCOME_OUT_OF_BOUNDS = "out_of_bounds"

# Display names for goal indices, matching the two-block convention.
_TARGET_LETTERS = "RGBYPC"


def target_name(index: int) -> str:
    if index < len(_TARGET_LETTERS):
        return _TARGET_LETTERS[index]
    return f"T{index}"


@dataclass
class QdConfig:
    """Knobs for dataset generation, all pinned for reproducibility."""

    cell_grid: tuple[int, ...] | None = None
    sigma: float | None = None
    alpha: float = DEFAULT_ALPHA
    k: int = 8
    seed: int = 0
    n_states: int = DEFAULT_N_STATES
    control_bounds: tuple | None = None  # (min, max) arrays; workspace bounds if None

    def resolved_cell_grid(self, dim: int) -> tuple[int, ...]:
        if self.cell_grid is not None:
            return tuple(int(c) for c in self.cell_grid)
        return DEFAULT_CELL_GRID_2D if dim == 2 else DEFAULT_CELL_GRID_3D


@dataclass
class ArchiveEntry:
    trajectory: Trajectory
    lp_raw: float
    descriptor: DeviationDescriptor
    seed: int


@dataclass
class InsertionEvent:
    iteration: int
    cell: tuple[int, ...] | None
    outcome: str
    lp_raw: float


class Archive:
    """MAP-Elites-style grid archive over deviation descriptors.

    Cells are addressed in array order (matching IpfGrid). A candidate
    claims an empty cell or strictly improves the incumbent's raw score;
    ties never replace.
    """

    def __init__(
        self,
        scene: GoalScene,
        cell_grid: tuple[int, ...],
        sigma: float | None = None,
        alpha: float = DEFAULT_ALPHA,
    ):
        cell_grid = tuple(int(c) for c in cell_grid)
        if len(cell_grid) != scene.dim or any(c < 1 for c in cell_grid):
            raise DomainError(f"cell grid {cell_grid} invalid for dimension {scene.dim}")
        self.scene = scene
        self.cell_grid = cell_grid
        self.sigma = scene.sigma if sigma is None else float(sigma)
        self.alpha = alpha
        self.cells: dict[tuple[int, ...], ArchiveEntry] = {}
        self.events: list[InsertionEvent] = []
        self.out_of_bounds_count = 0
        self._iteration = 0

    @property
    def fill_count(self) -> int:
        return len(self.cells)

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.cell_grid))

    @property
    def fill_rate(self) -> float:
        return self.fill_count / self.n_cells

    def cell_index(self, position: np.ndarray) -> tuple[int, ...] | None:
        """Array-order cell containing a workspace position, or None if the
        position is outside the workspace."""
        lo, hi = self.scene.bounds_min, self.scene.bounds_max
        if np.any(position < lo) or np.any(position > hi):
            return None
        counts = np.array(self.cell_grid[::-1])  # counts per workspace axis
        frac = (position - lo) / (hi - lo)
        idx = np.minimum((frac * counts).astype(int), counts - 1)
        return tuple(int(i) for i in idx[::-1])


def archive_insert(
    archive: Archive,
    traj: Trajectory,
    sigma: float | None = None,
    alpha: float | None = None,
    seed: int = -1,
) -> str:
    """Score ``traj``, find its descriptor cell, and apply the elitism rule.

    Returns one of ``new_cell``, ``improved``, ``rejected`` or
    ``out_of_bounds`` (descriptor landed outside the workspace; counted,
    not fatal).
    """
    scene = archive.scene
    sigma = archive.sigma if sigma is None else sigma
    alpha = archive.alpha if alpha is None else alpha
    desc = deviation_descriptor(traj, scene.start, scene.g_star)
    lp = score_lp_train(traj, scene, sigma=sigma, alpha=alpha)
    cell = archive.cell_index(desc.position)
    archive._iteration += 1
    if cell is None:
        archive.out_of_bounds_count += 1
        archive.events.append(InsertionEvent(archive._iteration, None, OUTCOME_OUT_OF_BOUNDS, lp))
        return OUTCOME_OUT_OF_BOUNDS
    incumbent = archive.cells.get(cell)
    if incumbent is None:
        outcome = OUTCOME_NEW
    elif lp > incumbent.lp_raw:
        outcome = OUTCOME_IMPROVED
    else:
        outcome = OUTCOME_REJECTED
    if outcome != OUTCOME_REJECTED:
        archive.cells[cell] = ArchiveEntry(trajectory=traj, lp_raw=lp, descriptor=desc, seed=seed)
    archive.events.append(InsertionEvent(archive._iteration, cell, outcome, lp))
    return outcome


def sample_candidate(
    scene: GoalScene,
    rng_seed: int,
    control_bounds: tuple | None = None,
    n_states: int = DEFAULT_N_STATES,
) -> Trajectory:
    """Draw one Bezier candidate from start to the intended goal with
    control points uniform in ``control_bounds`` (workspace bounds by
    default), resampled to ``n_states`` by arc length."""
    if control_bounds is None:
        lo, hi = scene.bounds_min, scene.bounds_max
    else:
        lo = np.asarray(control_bounds[0], dtype=float)
        hi = np.asarray(control_bounds[1], dtype=float)
        if np.any(lo < scene.bounds_min) or np.any(hi > scene.bounds_max):
            raise DomainError("control bounds must lie within the workspace bounds")
    rng = np.random.default_rng(rng_seed)
    c1 = rng.uniform(lo, hi)
    c2 = rng.uniform(lo, hi)
    curve = BezierCurve(p0=scene.start, p1=c1, p2=c2, p3=scene.g_star)
    return resample_arclength(curve, n_states, dt=scene.dt)


@dataclass
class DatasetRecord:
    scene: GoalScene
    trajectory: Trajectory
    path: Path
    label: LegibilityLabel
    descriptor: DeviationDescriptor
    seed: int


def generate_dataset(
    scene: GoalScene, budget: int, config: QdConfig | None = None
) -> list[DatasetRecord]:
    """Run ``budget`` sample/insert iterations, then label every surviving
    cell by rank within the cohort. Output is sorted by cell index and is
    byte-deterministic for a fixed seed."""
    config = config or QdConfig()
    if config.k < 2:
        raise DomainError(f"k must be >= 2, got {config.k}")
    cell_grid = config.resolved_cell_grid(scene.dim)
    archive = Archive(scene, cell_grid, sigma=config.sigma, alpha=config.alpha)
    if budget < archive.n_cells:
        raise DomainError(f"budget {budget} below cell count {archive.n_cells}")
    for i in range(budget):
        candidate_seed = config.seed + i
        traj = sample_candidate(
            scene, candidate_seed, control_bounds=config.control_bounds, n_states=config.n_states
        )
        archive_insert(archive, traj, seed=candidate_seed)
    return extract_records(archive, config)


def extract_records(archive: Archive, config: QdConfig) -> list[DatasetRecord]:
    """Rank-normalize the occupied cells of ``archive`` into records."""
    if archive.fill_count < 2:
        raise CohortTooSmallError(
            f"only {archive.fill_count} occupied cells; need at least 2 for rank labels"
        )
    cells = sorted(archive.cells)
    entries = [archive.cells[c] for c in cells]
    labels = rank_normalize([e.lp_raw for e in entries])
    _check_weighting_consistency(archive.scene, entries, config)
    return [
        DatasetRecord(
            scene=archive.scene,
            trajectory=e.trajectory,
            path=subsample_path(e.trajectory, config.k),
            label=lab,
            descriptor=e.descriptor,
            seed=e.seed,
        )
        for e, lab in zip(entries, labels)
    ]


def _check_weighting_consistency(scene, entries, config: QdConfig) -> None:
    # The training and evaluation weightings must agree on the extremes:
    # the best-raw-score trajectory has to look better under 1/t too.
    lps = [e.lp_raw for e in entries]
    best = entries[int(np.argmax(lps))]
    worst = entries[int(np.argmin(lps))]
    ev_best = score_lp_eval(best.trajectory, scene, sigma=config.sigma)
    ev_worst = score_lp_eval(worst.trajectory, scene, sigma=config.sigma)
    if not ev_best < ev_worst:
        raise ConsistencyError(
            f"weighting disagreement: eval score {ev_best} (best raw) !< {ev_worst} (worst raw)"
        )


def straight_line_label(scene: GoalScene, records: list[DatasetRecord], config: QdConfig) -> float:
    """Where the straight start-to-goal trajectory would land on the cohort's
    [-1, 1] scale. Recorded as dataset metadata; values outside the cohort's
    score range clip to the endpoints."""
    traj = resample_arclength(
        straight_line_curve(scene.start, scene.g_star), config.n_states, dt=scene.dt
    )
    raw = score_lp_train(traj, scene, sigma=config.sigma, alpha=config.alpha)
    cohort = np.sort([r.label.raw for r in records])
    rank = int(np.searchsorted(cohort, raw))
    n = cohort.size
    return float(np.clip(2.0 * rank / (n - 1) - 1.0, -1.0, 1.0))


def demo_rollout(traj: Trajectory, scene: GoalScene) -> tuple[Trajectory, int]:
    """Attach inverse-dynamics velocity actions to a state trajectory.

    action[t] = (x[t+1] - x[t]) / dt, clipped per axis to the scene's
    action bound. Returns the augmented trajectory and the number of
    clipped action components; raises if the clipped actions fail to
    reproduce the states within 1e-3.
    """
    if len(traj) < 2:
        raise DomainError("demonstration needs at least 2 states")
    deltas = np.diff(traj.states, axis=0)
    raw_actions = deltas / traj.dt
    actions = np.clip(raw_actions, -scene.action_bound, scene.action_bound)
    n_clipped = int(np.sum(np.abs(raw_actions) > scene.action_bound))
    # Replay through the same clamped integrator the environment uses.
    x = traj.states[0].copy()
    divergence = 0.0
    for t in range(actions.shape[0]):
        x = np.clip(x + actions[t] * traj.dt, scene.bounds_min, scene.bounds_max)
        divergence = max(divergence, float(np.linalg.norm(x - traj.states[t + 1])))
    if divergence > 1e-3:
        raise InfeasibleDemoError(
            f"replay diverged by {divergence} (> 1e-3); {n_clipped} clipped components"
        )
    return Trajectory(states=traj.states.copy(), actions=actions, dt=traj.dt), n_clipped


def generate_multi_target_dataset(
    scene: GoalScene,
    budget: int,
    config: QdConfig | None = None,
    targets: list[int] | None = None,
    with_actions: bool = True,
) -> tuple[list[DatasetRecord], dict]:
    """Generate one rank-normalized cohort per intended goal.

    Returns the concatenated records plus per-target metadata (fill rate
    and the straight line's position on the label scale).
    """
    config = config or QdConfig()
    if targets is None:
        targets = list(range(scene.goals.shape[0]))
    records: list[DatasetRecord] = []
    metadata: dict = {"targets": {}}
    for offset, ti in enumerate(targets):
        sub = scene.with_intended(ti)
        # Distinct seed stream per target so cohorts do not share candidates.
        sub_config = replace(config, seed=config.seed + offset * budget)
        cohort = generate_dataset(sub, budget, sub_config)
        if with_actions:
            cohort = [
                replace(r, trajectory=demo_rollout(r.trajectory, sub)[0]) for r in cohort
            ]
        metadata["targets"][target_name(ti)] = {
            "intended_index": ti,
            "cohort_size": len(cohort),
            "fill_rate": len(cohort) / np.prod(config.resolved_cell_grid(scene.dim)),
            "straight_line_ell": straight_line_label(sub, cohort, sub_config),
        }
        records.extend(cohort)
    return records, metadata


def scene_to_dict(scene: GoalScene) -> dict:
    return {
        "dim": scene.dim,
        "bounds": {"min": scene.bounds_min.tolist(), "max": scene.bounds_max.tolist()},
        "start": scene.start.tolist(),
        "goals": scene.goals.tolist(),
        "intended": scene.intended_index,
        "sigma": scene.sigma,
        "dt": scene.dt,
        "action_bound": scene.action_bound,
        "success_radius": scene.success_radius,
        "max_steps": scene.max_steps,
    }


def scene_from_dict(data: dict) -> GoalScene:
    return GoalScene(
        start=np.array(data["start"], dtype=float),
        goals=np.array(data["goals"], dtype=float),
        intended_index=int(data["intended"]),
        bounds_min=np.array(data["bounds"]["min"], dtype=float),
        bounds_max=np.array(data["bounds"]["max"], dtype=float),
        sigma=float(data["sigma"]),
        dt=float(data["dt"]),
        action_bound=float(data["action_bound"]),
        success_radius=float(data["success_radius"]),
        max_steps=int(data["max_steps"]),
    )


def save_dataset(
    records: list[DatasetRecord], path, config: QdConfig | None = None, metadata: dict | None = None
) -> None:
    """Write records as line-delimited JSON with a sidecar header line."""
    if not records:
        raise DomainError("refusing to write an empty dataset")
    config = config or QdConfig()
    base = records[0].scene
    header = {
        "format": DATASET_FORMAT,
        "scene": scene_to_dict(base),
        "config": {
            "cell_grid": list(config.resolved_cell_grid(base.dim)),
            "sigma": config.sigma,
            "alpha": config.alpha,
            "k": config.k,
            "seed": config.seed,
            "n_states": config.n_states,
        },
        "metadata": metadata or {},
    }
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for r in records:
            row = {
                "scene_id": target_name(r.scene.intended_index),
                "seed": r.seed,
                "states": r.trajectory.states.tolist(),
                "actions": None if r.trajectory.actions is None else r.trajectory.actions.tolist(),
                "path": r.path.waypoints.tolist(),
                "lp_raw": r.label.raw,
                "lp_rank": r.label.rank,
                "ell": r.label.normalized,
                "descriptor_pos": r.descriptor.position.tolist(),
                "descriptor_mag": r.descriptor.magnitude,
            }
            fh.write(json.dumps(row) + "\n")


def load_dataset(path) -> tuple[list[DatasetRecord], dict]:
    """Read a dataset file back into records plus its header dict."""
    with open(path) as fh:
        lines = [line for line in fh.read().splitlines() if line.strip()]
    if not lines:
        raise DomainError(f"empty dataset file: {path}")
    header = json.loads(lines[0])
    if header.get("format") != DATASET_FORMAT:
        raise DomainError(f"unrecognized dataset format tag: {header.get('format')!r}")
    base = scene_from_dict(header["scene"])
    cohort_sizes: dict[str, int] = {}
    rows = [json.loads(line) for line in lines[1:]]
    for row in rows:
        cohort_sizes[row["scene_id"]] = cohort_sizes.get(row["scene_id"], 0) + 1
    records = []
    for row in rows:
        intended = _index_for_name(row["scene_id"], base)
        scene = base.with_intended(intended)
        traj = Trajectory(
            states=np.array(row["states"], dtype=float),
            actions=None if row["actions"] is None else np.array(row["actions"], dtype=float),
            dt=scene.dt,
        )
        records.append(
            DatasetRecord(
                scene=scene,
                trajectory=traj,
                path=Path(np.array(row["path"], dtype=float)),
                label=LegibilityLabel(
                    raw=float(row["lp_raw"]),
                    normalized=float(row["ell"]),
                    rank=int(row["lp_rank"]),
                    cohort_size=cohort_sizes[row["scene_id"]],
                ),
                descriptor=DeviationDescriptor(
                    position=np.array(row["descriptor_pos"], dtype=float),
                    magnitude=float(row["descriptor_mag"]),
                ),
                seed=int(row["seed"]),
            )
        )
    return records, header


def _index_for_name(name: str, scene: GoalScene) -> int:
    for i in range(scene.goals.shape[0]):
        if target_name(i) == name:
            return i
    raise DomainError(f"scene_id {name!r} does not name a goal of the scene")
