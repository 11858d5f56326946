"""Legibility scores and labels.

Two weightings of the same potential field are used on purpose: training
labels weight early states exponentially, while evaluation divides by the
step index so the score is comparable with the distance-based metric.
Raw training scores are only meaningful relative to a cohort, so they are
rank-normalized onto [-1, 1].
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import CohortTooSmallError, DomainError
from .geometry import Point, Trajectory, as_point
from .ipf import GoalScene, potential_many

DEFAULT_ALPHA = 0.05


@dataclass
class LegibilityLabel:
    raw: float
    normalized: float
    rank: int
    cohort_size: int

    def __post_init__(self):
        if not -1.0 <= self.normalized <= 1.0:
            raise DomainError(f"normalized label {self.normalized} outside [-1, 1]")
        if not 0 <= self.rank < self.cohort_size:
            raise DomainError(f"rank {self.rank} outside [0, {self.cohort_size})")


@dataclass
class WeightProfile:
    """Per-step weight f(t) over 1-based step indices."""

    kind: str  # "exponential" or "inverse_time"
    alpha: float = DEFAULT_ALPHA

    def __post_init__(self):
        if self.kind not in ("exponential", "inverse_time"):
            raise DomainError(f"unknown weight profile kind: {self.kind}")
        if self.alpha < 0:
            raise DomainError(f"alpha must be nonnegative, got {self.alpha}")

    def weights(self, n_steps: int) -> np.ndarray:
        t = np.arange(1, n_steps + 1, dtype=float)
        if self.kind == "exponential":
            return np.exp(-self.alpha * t)
        return -1.0 / t


def trajectory_potentials(traj: Trajectory, scene: GoalScene, sigma: float | None = None) -> np.ndarray:
    """phi at every trajectory state."""
    return potential_many(traj.states, scene, sigma)


def score_lp_train(
    traj: Trajectory,
    scene: GoalScene,
    sigma: float | None = None,
    alpha: float = DEFAULT_ALPHA,
) -> float:
    """Training-time potential score: -sum_t exp(-alpha t) phi(x_t).

    Larger is more legible. t is the 1-based state index.
    """
    if alpha < 0:
        raise DomainError(f"alpha must be nonnegative, got {alpha}")
    phi = trajectory_potentials(traj, scene, sigma)
    w = WeightProfile("exponential", alpha).weights(len(traj))
    return float(-np.dot(w, phi))


def score_lp_eval(traj: Trajectory, scene: GoalScene, sigma: float | None = None) -> float:
    """Evaluation-time potential score: sum_t phi(x_t) / t. Lower is more
    legible, matching the sign convention of the distance metric."""
    phi = trajectory_potentials(traj, scene, sigma)
    t = np.arange(1, len(traj) + 1, dtype=float)
    return float(np.sum(phi / t))


def score_ld(traj: Trajectory, distractor: Point) -> float:
    """Distance-based score: sum_t ||g_minus - x_t||^2 / t. Higher means
    clearer separation from the distractor."""
    distractor = as_point(distractor, traj.dim)
    sq = np.sum((traj.states - distractor) ** 2, axis=1)
    t = np.arange(1, len(traj) + 1, dtype=float)
    return float(np.sum(sq / t))


def rank_normalize(raw_scores) -> list[LegibilityLabel]:
    """Map N raw scores onto evenly spaced labels in [-1, 1] by ascending
    rank: the minimum score gets -1, the maximum +1. Ties break by input
    order (earlier input ranks lower)."""
    raw = np.asarray(raw_scores, dtype=float)
    n = raw.size
    if n < 2:
        raise CohortTooSmallError(f"need at least 2 scores to rank, got {n}")
    if not np.all(np.isfinite(raw)):
        raise DomainError("raw scores must all be finite")
    order = np.argsort(raw, kind="stable")
    ranks = np.empty(n, dtype=int)
    ranks[order] = np.arange(n)
    return [
        LegibilityLabel(
            raw=float(raw[i]),
            normalized=2.0 * ranks[i] / (n - 1) - 1.0,
            rank=int(ranks[i]),
            cohort_size=n,
        )
        for i in range(n)
    ]
