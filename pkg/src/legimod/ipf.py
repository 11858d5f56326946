"""Information Potential Field over a goal scene.

The field value at a workspace configuration x is the negative log of the
posterior probability that x was produced while heading for the intended
goal, under isotropic Gaussian likelihoods centered on each goal:

    P(x | g)   ~ N(g, sigma^2 I)
    P(g* | x)  = P(x | g*) / sum_g P(x | g)
    phi(x|g*)  = -log P(g* | x)

phi is small where x supports the intended goal and large where the scene
is ambiguous. Grids rasterize phi at cell centers for use as conditioning
features and for fast lookups.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DomainError
from .geometry import Point, as_point

GRID_FORMAT = "legimod-ipf-v1"

# Fraction of the nearest goal spacing used when sigma is not given.
DEFAULT_SIGMA_SPACING = 0.2

DEFAULT_RESOLUTION_2D = (64, 64)
DEFAULT_RESOLUTION_3D = (32, 32, 32)


def default_sigma(goals: np.ndarray) -> float:
    """0.2 x distance between the two nearest goals."""
    n = goals.shape[0]
    best = np.inf
    for i in range(n):
        for j in range(i + 1, n):
            best = min(best, float(np.linalg.norm(goals[i] - goals[j])))
    return DEFAULT_SIGMA_SPACING * best


@dataclass
class GoalScene:
    """A start state, a finite goal set with one intended goal, and the
    axis-aligned workspace the task lives in.

    Dynamics parameters (dt, per-axis action bound, success radius, step
    budget) ride along so a single record fully describes an episode.
    """

    start: Point
    goals: np.ndarray
    intended_index: int
    bounds_min: Point
    bounds_max: Point
    sigma: float | None = None
    dt: float = 0.05
    action_bound: float = 1.5
    success_radius: float = 0.05
    max_steps: int = 200

    def __post_init__(self):
        self.start = as_point(self.start)
        self.goals = np.asarray(self.goals, dtype=float)
        if self.goals.ndim != 2 or self.goals.shape[0] < 2:
            raise DomainError(f"need at least 2 goals, got array of shape {self.goals.shape}")
        if self.goals.shape[1] != self.start.size:
            raise DomainError("goal dimension does not match start dimension")
        self.bounds_min = as_point(self.bounds_min, self.start.size)
        self.bounds_max = as_point(self.bounds_max, self.start.size)
        if not np.all(self.bounds_max > self.bounds_min):
            raise DomainError("workspace bounds must have positive extent on every axis")
        if not 0 <= self.intended_index < self.goals.shape[0]:
            raise DomainError(f"intended_index {self.intended_index} out of range")
        for i in range(self.goals.shape[0]):
            for j in range(i + 1, self.goals.shape[0]):
                if np.linalg.norm(self.goals[i] - self.goals[j]) <= 1e-6:
                    raise DomainError(f"goals {i} and {j} coincide")
        for name, p in [("start", self.start)] + [
            (f"goal {i}", g) for i, g in enumerate(self.goals)
        ]:
            if np.any(p < self.bounds_min) or np.any(p > self.bounds_max):
                raise DomainError(f"{name} lies outside workspace bounds")
        if self.sigma is None:
            self.sigma = default_sigma(self.goals)
        self.sigma = float(self.sigma)
        if self.sigma <= 0:
            raise DomainError(f"sigma must be positive, got {self.sigma}")
        if self.dt <= 0 or self.action_bound <= 0 or self.success_radius <= 0:
            raise DomainError("dt, action_bound and success_radius must be positive")
        if self.max_steps < 0:
            raise DomainError("max_steps must be nonnegative")

    @property
    def dim(self) -> int:
        return self.start.size

    @property
    def g_star(self) -> Point:
        return self.goals[self.intended_index]

    @property
    def distractors(self) -> np.ndarray:
        mask = np.arange(self.goals.shape[0]) != self.intended_index
        return self.goals[mask]

    def with_intended(self, index: int) -> "GoalScene":
        return replace(self, intended_index=index)


def likelihood(x: Point, g: Point, sigma: float) -> float:
    """Isotropic Gaussian density of observing configuration ``x`` while
    aiming for ``g``."""
    if sigma <= 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    x = as_point(x)
    g = as_point(g, x.size)
    d = x.size
    sq = float(np.sum((x - g) ** 2))
    norm = (2.0 * np.pi * sigma**2) ** (-d / 2.0)
    return float(norm * np.exp(-sq / (2.0 * sigma**2)))


def _log_odds_matrix(points: np.ndarray, scene: GoalScene, sigma: float) -> np.ndarray:
    """For each point, log P(x|g) - log P(x|g*) for every non-intended g.

    Shape (N, n_goals - 1). The Gaussian normalizer cancels.
    """
    diff = points[:, None, :] - scene.goals[None, :, :]
    sq = np.sum(diff * diff, axis=2)
    log_lik = -sq / (2.0 * sigma**2)
    star = log_lik[:, scene.intended_index]
    mask = np.arange(scene.goals.shape[0]) != scene.intended_index
    return log_lik[:, mask] - star[:, None]


def potential_many(points: np.ndarray, scene: GoalScene, sigma: float | None = None) -> np.ndarray:
    """Vectorized phi(x|g*) for an (N, d) array of points.

    Computed as log(1 + sum_g exp(log-odds)) with a max shift, which is
    exactly nonnegative and finite for finite inputs.
    """
    sigma = scene.sigma if sigma is None else float(sigma)
    if sigma <= 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    points = np.asarray(points, dtype=float)
    odds = _log_odds_matrix(points, scene, sigma)
    m = np.max(odds, axis=1)
    lse = m + np.log(np.sum(np.exp(odds - m[:, None]), axis=1))
    return np.logaddexp(0.0, lse)


def potential(x: Point, scene: GoalScene, sigma: float | None = None) -> float:
    """Negative log-posterior of the intended goal at configuration ``x``."""
    x = as_point(x, scene.dim)
    return float(potential_many(x[None, :], scene, sigma)[0])


def posterior(x: Point, scene: GoalScene, sigma: float | None = None) -> float:
    """Posterior probability of the intended goal at configuration ``x``."""
    return float(np.exp(-potential(x, scene, sigma)))


def posterior_all(x: Point, scene: GoalScene, sigma: float | None = None) -> np.ndarray:
    """Posterior over every goal at ``x`` (sums to 1)."""
    sigma = scene.sigma if sigma is None else float(sigma)
    if sigma <= 0:
        raise DomainError(f"sigma must be positive, got {sigma}")
    x = as_point(x, scene.dim)
    sq = np.sum((scene.goals - x) ** 2, axis=1)
    log_lik = -sq / (2.0 * sigma**2)
    log_lik -= np.max(log_lik)
    w = np.exp(log_lik)
    return w / np.sum(w)


@dataclass
class IpfGrid:
    """Rasterized potential over the workspace.

    ``values`` follows image conventions: shape (H, W) in 2D and (D, H, W)
    in 3D, where W runs along the first workspace axis (x), H along the
    second (y) and D along the third (z). Values are sampled at cell
    centers, not corners.
    """

    bounds_min: Point
    bounds_max: Point
    values: np.ndarray
    sigma: float
    goals: np.ndarray
    intended_index: int

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.bounds_min = as_point(self.bounds_min)
        self.bounds_max = as_point(self.bounds_max, self.bounds_min.size)
        self.goals = np.asarray(self.goals, dtype=float)
        if self.values.ndim != self.bounds_min.size:
            raise DomainError(
                f"values rank {self.values.ndim} does not match dimension {self.bounds_min.size}"
            )
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise DomainError("grid values must be finite and nonnegative")
        self.sigma = float(self.sigma)

    @property
    def dim(self) -> int:
        return self.bounds_min.size

    @property
    def resolution(self) -> tuple[int, ...]:
        return self.values.shape

    def _axis_counts(self) -> np.ndarray:
        # Cell count per workspace axis (x first); array axes are reversed.
        return np.array(self.values.shape[::-1])

    def cell_center(self, index: tuple[int, ...]) -> Point:
        """Workspace coordinates of the center of ``index`` (array order)."""
        counts = self._axis_counts()
        extent = self.bounds_max - self.bounds_min
        coords = np.array(index[::-1], dtype=float)
        return self.bounds_min + (coords + 0.5) * extent / counts

    def sample(self, x: Point) -> float:
        """Multilinear interpolation between cell centers, clamped at the
        border band where no neighbor exists."""
        x = as_point(x, self.dim)
        counts = self._axis_counts()
        extent = self.bounds_max - self.bounds_min
        # Fractional cell-center coordinate along each workspace axis.
        f = (x - self.bounds_min) / extent * counts - 0.5
        i0 = np.floor(f).astype(int)
        w = f - i0
        for ax in range(self.dim):
            if i0[ax] < 0:
                i0[ax], w[ax] = 0, 0.0
            elif i0[ax] > counts[ax] - 2:
                i0[ax], w[ax] = counts[ax] - 2, 1.0
        total = 0.0
        for corner in range(2**self.dim):
            weight = 1.0
            idx = []
            for ax in range(self.dim):
                bit = (corner >> ax) & 1
                weight *= w[ax] if bit else 1.0 - w[ax]
                idx.append(i0[ax] + bit)
            total += weight * self.values[tuple(idx[::-1])]
        return float(total)


def rasterize(
    scene: GoalScene,
    resolution: tuple[int, ...] | None = None,
    sigma: float | None = None,
) -> IpfGrid:
    """Evaluate the potential at every cell center of a regular grid.

    ``resolution`` is given in array order ((H, W) or (D, H, W)); defaults
    are 64x64 in 2D and 32x32x32 in 3D.
    """
    if resolution is None:
        resolution = DEFAULT_RESOLUTION_2D if scene.dim == 2 else DEFAULT_RESOLUTION_3D
    resolution = tuple(int(r) for r in resolution)
    if len(resolution) != scene.dim:
        raise DomainError(f"resolution rank {len(resolution)} does not match scene dim {scene.dim}")
    if any(r < 2 for r in resolution):
        raise DomainError(f"every resolution axis must be >= 2, got {resolution}")
    sigma = scene.sigma if sigma is None else float(sigma)
    axes = []
    for ws_axis in range(scene.dim):
        n = resolution[len(resolution) - 1 - ws_axis]
        lo, hi = scene.bounds_min[ws_axis], scene.bounds_max[ws_axis]
        axes.append(lo + (np.arange(n) + 0.5) * (hi - lo) / n)
    # meshgrid over array axes (slowest first), which are reversed workspace axes
    mesh = np.meshgrid(*axes[::-1], indexing="ij")
    points = np.stack([m.ravel() for m in mesh[::-1]], axis=1)
    values = potential_many(points, scene, sigma).reshape(resolution)
    return IpfGrid(
        bounds_min=scene.bounds_min.copy(),
        bounds_max=scene.bounds_max.copy(),
        values=values,
        sigma=sigma,
        goals=scene.goals.copy(),
        intended_index=scene.intended_index,
    )


def save_grid(grid: IpfGrid, path) -> None:
    """Write a grid as line-delimited JSON: one header record, then one
    ``values`` record per row (rows in plane-major order for 3D)."""
    header = {
        "format": GRID_FORMAT,
        "dim": grid.dim,
        "bounds_min": grid.bounds_min.tolist(),
        "bounds_max": grid.bounds_max.tolist(),
        "resolution": list(grid.resolution),
        "sigma": grid.sigma,
        "goals": grid.goals.tolist(),
        "intended": grid.intended_index,
    }
    width = grid.resolution[-1]
    rows = grid.values.reshape(-1, width)
    with open(path, "w") as fh:
        fh.write(json.dumps(header) + "\n")
        for row in rows:
            fh.write(json.dumps({"values": row.tolist()}) + "\n")


def load_grid(path) -> IpfGrid:
    with open(path) as fh:
        lines = [line for line in fh.read().splitlines() if line.strip()]
    if not lines:
        raise DomainError(f"empty grid file: {path}")
    header = json.loads(lines[0])
    if header.get("format") != GRID_FORMAT:
        raise DomainError(f"unrecognized grid format tag: {header.get('format')!r}")
    resolution = tuple(header["resolution"])
    values = np.array(
        [json.loads(line)["values"] for line in lines[1:]], dtype=float
    ).reshape(resolution)
    return IpfGrid(
        bounds_min=np.array(header["bounds_min"], dtype=float),
        bounds_max=np.array(header["bounds_max"], dtype=float),
        values=values,
        sigma=float(header["sigma"]),
        goals=np.array(header["goals"], dtype=float),
        intended_index=int(header["intended"]),
    )
