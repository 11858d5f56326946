"""Experiment orchestration: the max-legible comparison, the legibility
sweep, the dataset-oracle baseline, and report emission.

Reports are a long-format CSV plus static SVG figures rendered with
matplotlib. Emission is byte-stable for identical inputs (fixed SVG hash
salt, no timestamps) and never leaves partial files behind: figures are
rendered to memory before anything touches the output directory.
"""
from __future__ import annotations

import csv
import io
import os
from dataclasses import dataclass

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np
from scipy.stats import spearmanr

from .errors import DomainError
from .geometry import Trajectory, resample_arclength, straight_line_curve
from .ipf import GoalScene
from .path_diffuser import Stage1Model, generate_path
from .policy import Stage2Model, rollout
from .qd import DEFAULT_N_STATES, DatasetRecord, target_name
from .scoring import score_ld, score_lp_eval

DEFAULT_SWEEP_LEVELS = (-1.0, -0.5, 0.0, 0.5, 1.0)
SVG_HASH_SALT = "legimod-report"

METRICS_FIELDS = ["section", "target", "ell", "metric", "value"]


def nearest_distractor(scene: GoalScene) -> np.ndarray:
    """The non-intended goal closest to the intended one."""
    d = scene.distractors
    dists = np.linalg.norm(d - scene.g_star, axis=1)
    return d[int(np.argmin(dists))]


def straight_line_trajectory(scene: GoalScene, n_states: int = DEFAULT_N_STATES) -> Trajectory:
    """The start-to-goal chord discretized like a dataset trajectory."""
    return resample_arclength(
        straight_line_curve(scene.start, scene.g_star), n_states, dt=scene.dt
    )


def straight_line_metrics(scene: GoalScene, n_states: int = DEFAULT_N_STATES) -> dict:
    traj = straight_line_trajectory(scene, n_states)
    return {
        "target": target_name(scene.intended_index),
        "lp_eval": score_lp_eval(traj, scene),
        "ld": score_ld(traj, nearest_distractor(scene)),
    }


def polyline_distances(points: np.ndarray, waypoints: np.ndarray) -> np.ndarray:
    """Distance from each point to the nearest segment of a waypoint
    polyline."""
    points = np.asarray(points, dtype=float)
    best = np.full(points.shape[0], np.inf)
    for a, b in zip(waypoints[:-1], waypoints[1:]):
        ab = b - a
        denom = float(ab @ ab)
        if denom < 1e-18:
            d = np.linalg.norm(points - a, axis=1)
        else:
            t = np.clip((points - a) @ ab / denom, 0.0, 1.0)
            proj = a + t[:, None] * ab
            d = np.linalg.norm(points - proj, axis=1)
        best = np.minimum(best, d)
    return best


@dataclass
class Episode:
    ell: float
    success: bool
    lp_eval: float
    ld: float
    states: np.ndarray
    goal_miss: bool
    n_steps: int


def _episode_seeds(seed: int, *key) -> tuple[int, int]:
    words = np.random.SeedSequence((seed, *key)).generate_state(2)
    return int(words[0]), int(words[1])


def run_episode(
    diffuser: Stage1Model,
    policy_model: Stage2Model,
    scene: GoalScene,
    ell: float,
    path_seed: int,
    rollout_seed: int,
) -> Episode:
    """Generate a path at level ``ell``, execute it, and score the executed
    trajectory."""
    from . import env

    ps = generate_path(diffuser, scene, ell, path_seed)
    result = rollout(policy_model, scene, ps.path, seed=rollout_seed)
    traj = result.trajectory
    return Episode(
        ell=float(ell),
        success=result.outcome == env.SUCCESS,
        lp_eval=score_lp_eval(traj, scene),
        ld=score_ld(traj, nearest_distractor(scene)),
        states=traj.states,
        goal_miss=ps.goal_miss,
        n_steps=len(traj) - 1,
    )


def _check_dims(diffuser: Stage1Model, policy_model: Stage2Model, scene: GoalScene) -> None:
    if diffuser.dim != scene.dim or policy_model.dim != scene.dim:
        raise DomainError(
            f"dimension mismatch: diffuser {diffuser.dim}, policy {policy_model.dim}, "
            f"scene {scene.dim}"
        )


@dataclass
class MaxLegibleResult:
    rows: list[dict]
    episodes: dict[str, list[Episode]]


def eval_max_legible(
    diffuser: Stage1Model,
    policy_model: Stage2Model,
    scene: GoalScene,
    n_episodes: int,
    seed: int = 0,
) -> MaxLegibleResult:
    """Run n episodes at the maximally legible setting for every goal of
    the scene, reporting success rate and both legibility metrics."""
    _check_dims(diffuser, policy_model, scene)
    if n_episodes < 1:
        raise DomainError("n_episodes must be >= 1")
    rows = []
    episodes: dict[str, list[Episode]] = {}
    for ti in range(scene.goals.shape[0]):
        sub = scene.with_intended(ti)
        name = target_name(ti)
        eps = []
        for e in range(n_episodes):
            ps, rs = _episode_seeds(seed, ti, e)
            eps.append(run_episode(diffuser, policy_model, sub, 1.0, ps, rs))
        episodes[name] = eps
        rows.append(
            {
                "target": name,
                "sr": float(np.mean([ep.success for ep in eps])),
                "ld_mean": float(np.mean([ep.ld for ep in eps])),
                "lp_mean": float(np.mean([ep.lp_eval for ep in eps])),
                "n": n_episodes,
            }
        )
    return MaxLegibleResult(rows=rows, episodes=episodes)


@dataclass
class SweepResult:
    target: str
    rows: list[dict]
    spearman: float
    pairs: list[tuple[float, float]]
    representatives: dict[float, np.ndarray]


def eval_sweep(
    diffuser: Stage1Model,
    policy_model: Stage2Model,
    scene: GoalScene,
    ell_levels=DEFAULT_SWEEP_LEVELS,
    n_per_level: int = 20,
    seed: int = 0,
) -> SweepResult:
    """Execute rollouts across commanded legibility levels and report the
    per-level statistics plus the rank correlation between the commanded
    level and the measured potential score."""
    _check_dims(diffuser, policy_model, scene)
    levels = [float(x) for x in ell_levels]
    if len(levels) < 3:
        raise DomainError("need at least 3 legibility levels for a sweep")
    if any(not -1.0 <= x <= 1.0 for x in levels):
        raise DomainError("legibility levels must lie in [-1, 1]")
    if n_per_level < 1:
        raise DomainError("n_per_level must be >= 1")
    rows = []
    pairs: list[tuple[float, float]] = []
    reps: dict[float, np.ndarray] = {}
    for li, ell in enumerate(levels):
        eps = []
        for e in range(n_per_level):
            ps, rs = _episode_seeds(seed, scene.intended_index, li, e)
            eps.append(run_episode(diffuser, policy_model, scene, ell, ps, rs))
        reps[ell] = eps[0].states
        pairs.extend((ell, ep.lp_eval) for ep in eps)
        rows.append(
            {
                "ell": ell,
                "lp_mean": float(np.mean([ep.lp_eval for ep in eps])),
                "lp_std": float(np.std([ep.lp_eval for ep in eps])),
                "sr": float(np.mean([ep.success for ep in eps])),
                "n": n_per_level,
            }
        )
    ells = [p[0] for p in pairs]
    lps = [p[1] for p in pairs]
    rho = float(spearmanr(ells, lps).statistic)
    return SweepResult(
        target=target_name(scene.intended_index),
        rows=rows,
        spearman=rho,
        pairs=pairs,
        representatives=reps,
    )


def oracle_baseline(records: list[DatasetRecord], scene: GoalScene) -> list[dict]:
    """Score the maximum-label dataset trajectory for every goal of the
    scene; the upper bound the generator is compared against."""
    rows = []
    for ti in range(scene.goals.shape[0]):
        cohort = [r for r in records if r.scene.intended_index == ti]
        if not cohort:
            raise DomainError(f"dataset has no cohort for target {target_name(ti)}")
        best = max(cohort, key=lambda r: r.label.normalized)
        if abs(best.label.normalized - 1.0) > 1e-12:
            raise DomainError(
                f"target {target_name(ti)} cohort has no maximally legible record"
            )
        sub = scene.with_intended(ti)
        rows.append(
            {
                "target": target_name(ti),
                "ell": 1.0,
                "lp_eval": score_lp_eval(best.trajectory, sub),
                "ld": score_ld(best.trajectory, nearest_distractor(sub)),
            }
        )
    return rows


@dataclass
class ReportTables:
    scene: GoalScene
    sweep: SweepResult | None = None
    max_legible: MaxLegibleResult | None = None
    oracle_rows: list[dict] | None = None
    straight_rows: list[dict] | None = None


def metrics_rows(tables: ReportTables) -> list[dict]:
    """Flatten result tables into long-format rows (section, target, ell,
    metric, value)."""
    rows: list[dict] = []

    def add(section, target, ell, metric, value):
        rows.append(
            {
                "section": section,
                "target": target,
                "ell": None if ell is None else float(ell),
                "metric": metric,
                "value": float(value),
            }
        )

    if tables.max_legible is not None:
        for r in tables.max_legible.rows:
            for metric in ("sr", "ld_mean", "lp_mean", "n"):
                add("max_legible", r["target"], 1.0, metric, r[metric])
    if tables.sweep is not None:
        for r in tables.sweep.rows:
            for metric in ("lp_mean", "lp_std", "sr", "n"):
                add("sweep", tables.sweep.target, r["ell"], metric, r[metric])
        add("sweep", tables.sweep.target, None, "spearman_lp", tables.sweep.spearman)
    for r in tables.oracle_rows or []:
        add("oracle", r["target"], r["ell"], "lp_eval", r["lp_eval"])
        add("oracle", r["target"], r["ell"], "ld", r["ld"])
    for r in tables.straight_rows or []:
        add("straight_line", r["target"], None, "lp_eval", r["lp_eval"])
        add("straight_line", r["target"], None, "ld", r["ld"])
    return rows


def render_metrics_csv(rows: list[dict]) -> str:
    if not rows:
        raise DomainError("no metrics rows to emit")
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_FIELDS)
    for r in rows:
        writer.writerow(
            [
                r["section"],
                r["target"],
                "" if r["ell"] is None else repr(r["ell"]),
                r["metric"],
                repr(r["value"]),
            ]
        )
    return buf.getvalue()


def parse_metrics_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        rows = []
        for rec in reader:
            rows.append(
                {
                    "section": rec["section"],
                    "target": rec["target"],
                    "ell": None if rec["ell"] == "" else float(rec["ell"]),
                    "metric": rec["metric"],
                    "value": float(rec["value"]),
                }
            )
    return rows


def _projection_axes(dim: int) -> tuple[int, int]:
    # Project 3D scenes onto the (x, z) plane where the goals separate.
    return (0, 1) if dim == 2 else (0, 2)


def _ell_color(ell: float):
    return plt.get_cmap("Reds")(0.3 + 0.6 * (ell + 1.0) / 2.0)


def _render_sweep_svg(sweep: SweepResult) -> bytes:
    with matplotlib.rc_context({"svg.hashsalt": SVG_HASH_SALT}):
        fig, ax = plt.subplots(figsize=(5.0, 3.5))
        x = np.array([r["ell"] for r in sweep.rows])
        y = np.array([r["lp_mean"] for r in sweep.rows])
        s = np.array([r["lp_std"] for r in sweep.rows])
        ax.fill_between(x, y - s, y + s, color="#d62728", alpha=0.18, linewidth=0)
        line = ax.plot(x, y, marker="o", color="#8b1a1a")[0]
        line.set_gid("sweep-lp-line")
        ax.set_xlabel("commanded legibility level")
        ax.set_ylabel("potential score (lower = more legible)")
        ax.set_title(
            f"target {sweep.target}: Spearman rho = {sweep.spearman:.3f}", fontsize=10
        )
        fig.tight_layout()
        buf = io.BytesIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    return buf.getvalue()


def _render_trajectories_svg(
    scene: GoalScene, curves: list[tuple[str, float, np.ndarray]]
) -> bytes:
    """One marked polyline per entry of ``curves`` (gid, ell, states)."""
    ax0, ax1 = _projection_axes(scene.dim)
    with matplotlib.rc_context({"svg.hashsalt": SVG_HASH_SALT}):
        fig, ax = plt.subplots(figsize=(4.6, 4.6))
        lo, hi = scene.bounds_min, scene.bounds_max
        ax.add_patch(
            plt.Rectangle(
                (lo[ax0], lo[ax1]),
                hi[ax0] - lo[ax0],
                hi[ax1] - lo[ax1],
                fill=False,
                edgecolor="0.6",
                linewidth=0.8,
            )
        )
        for gid, ell, states in curves:
            line = ax.plot(
                states[:, ax0],
                states[:, ax1],
                color=_ell_color(ell),
                linewidth=1.6,
                label=f"ell = {ell:+.2f}",
            )[0]
            line.set_gid(gid)
        ax.plot(*scene.start[[ax0, ax1]], marker="o", color="k", markersize=6)
        for gi, g in enumerate(scene.goals):
            marker = "*" if gi == scene.intended_index else "s"
            size = 14 if gi == scene.intended_index else 9
            ax.plot(
                g[ax0], g[ax1], marker=marker, color="#d62728" if gi == scene.intended_index else "0.4",
                markersize=size, linestyle="none",
            )
        margin = 0.05 * (hi - lo)
        ax.set_xlim(lo[ax0] - margin[ax0], hi[ax0] + margin[ax0])
        ax.set_ylim(lo[ax1] - margin[ax1], hi[ax1] + margin[ax1])
        ax.set_aspect("equal")
        ax.legend(fontsize=7, loc="lower right")
        ax.set_title(f"executed rollouts, target {target_name(scene.intended_index)}", fontsize=10)
        fig.tight_layout()
        buf = io.BytesIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    return buf.getvalue()


def emit_report(tables: ReportTables, out_dir) -> list[str]:
    """Write metrics.csv, sweep.svg and trajectories.svg for a sweep run.

    Everything is rendered in memory first; on any failure no file is
    written. Re-emitting identical tables is byte-identical.
    """
    if tables.sweep is None or not tables.sweep.rows:
        raise DomainError("report requires a nonempty sweep table")
    rows = metrics_rows(tables)
    csv_text = render_metrics_csv(rows)
    sweep_svg = _render_sweep_svg(tables.sweep)
    curves = [
        (f"traj-ell-{i}", ell, states)
        for i, (ell, states) in enumerate(sorted(tables.sweep.representatives.items()))
    ]
    traj_svg = _render_trajectories_svg(tables.scene, curves)
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for name, payload in [
        ("metrics.csv", csv_text.encode()),
        ("sweep.svg", sweep_svg),
        ("trajectories.svg", traj_svg),
    ]:
        target = os.path.join(out_dir, name)
        with open(target, "wb") as fh:
            fh.write(payload)
        paths.append(target)
    return paths


def emit_max_report(tables: ReportTables, out_dir) -> list[str]:
    """Write metrics.csv plus a trajectories figure for a max-legible run."""
    if tables.max_legible is None or not tables.max_legible.rows:
        raise DomainError("report requires a nonempty max-legible table")
    rows = metrics_rows(tables)
    csv_text = render_metrics_csv(rows)
    curves = []
    for i, (name, eps) in enumerate(sorted(tables.max_legible.episodes.items())):
        if eps:
            curves.append((f"traj-target-{name}", 1.0, eps[0].states))
    traj_svg = _render_trajectories_svg(tables.scene, curves)
    os.makedirs(out_dir, exist_ok=True)
    paths = []
    for name, payload in [("metrics.csv", csv_text.encode()), ("trajectories.svg", traj_svg)]:
        target = os.path.join(out_dir, name)
        with open(target, "wb") as fh:
            fh.write(payload)
        paths.append(target)
    return paths
