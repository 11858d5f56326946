"""Workspace geometry: points, cubic Bezier curves, arc-length resampling,
deviation descriptors, and the Trajectory/Path data model.

All positions are plain float64 numpy vectors of length 2 or 3. Every
operation here is a pure function over immutable inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateGeometryError, DomainError, InsufficientLengthError

# Number of uniform parameter samples in the cumulative chord-length table
# used to invert arc length.
CHORD_TABLE_SAMPLES = 4096

# Resampling refines until consecutive chord lengths agree to this relative
# spread (5x margin under the 1e-3 contract) or the iteration cap.
CHORD_EQUALIZE_TOL = 1e-4
CHORD_EQUALIZE_MAX_ITERS = 300

# Chords or curves shorter than this are treated as degenerate.
DEGENERATE_LENGTH = 1e-9

Point = np.ndarray


def as_point(value, dim: int | None = None) -> Point:
    """Coerce ``value`` to a finite float64 vector of length 2 or 3."""
    p = np.asarray(value, dtype=float)
    if p.ndim != 1 or p.size not in (2, 3):
        raise DomainError(f"point must be a vector of length 2 or 3, got shape {p.shape}")
    if not np.all(np.isfinite(p)):
        raise DomainError(f"point has non-finite components: {p}")
    if dim is not None and p.size != dim:
        raise DomainError(f"point has dimension {p.size}, expected {dim}")
    return p


@dataclass
class BezierCurve:
    """Cubic Bezier curve from ``p0`` to ``p3`` with control points ``p1``, ``p2``."""

    p0: Point
    p1: Point
    p2: Point
    p3: Point

    def __post_init__(self):
        self.p0 = as_point(self.p0)
        self.p1 = as_point(self.p1, self.p0.size)
        self.p2 = as_point(self.p2, self.p0.size)
        self.p3 = as_point(self.p3, self.p0.size)

    @property
    def dim(self) -> int:
        return self.p0.size

    def control_array(self) -> np.ndarray:
        return np.stack([self.p0, self.p1, self.p2, self.p3])


@dataclass
class Trajectory:
    """Dense state sequence, optionally with the actions that produced it.

    ``states`` has shape (T, d); ``actions``, when present, has shape
    (T-1, d) and replaying ``actions[i]`` from ``states[i]`` under the
    owning scene's dynamics must reproduce ``states[i+1]`` within 1e-6.
    """

    states: np.ndarray
    actions: np.ndarray | None = None
    dt: float = 0.05

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=float)
        if self.states.ndim != 2 or self.states.shape[0] < 1:
            raise DomainError(f"states must be a (T, d) array with T >= 1, got {self.states.shape}")
        if self.states.shape[1] not in (2, 3):
            raise DomainError(f"state dimension must be 2 or 3, got {self.states.shape[1]}")
        if not np.all(np.isfinite(self.states)):
            raise DomainError("states contain non-finite values")
        if self.actions is not None:
            self.actions = np.asarray(self.actions, dtype=float)
            expected = (len(self) - 1, self.dim)
            if self.actions.shape != expected:
                raise DomainError(f"actions must have shape {expected}, got {self.actions.shape}")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise DomainError(f"dt must be positive, got {self.dt}")

    def __len__(self) -> int:
        return self.states.shape[0]

    @property
    def dim(self) -> int:
        return self.states.shape[1]


@dataclass
class Path:
    """Subsampled k-waypoint plan, shape (k, d)."""

    waypoints: np.ndarray

    def __post_init__(self):
        self.waypoints = np.asarray(self.waypoints, dtype=float)
        if self.waypoints.ndim != 2 or self.waypoints.shape[0] < 1:
            raise DomainError(f"waypoints must be a (k, d) array, got {self.waypoints.shape}")
        if not np.all(np.isfinite(self.waypoints)):
            raise DomainError("waypoints contain non-finite values")

    def __len__(self) -> int:
        return self.waypoints.shape[0]

    @property
    def dim(self) -> int:
        return self.waypoints.shape[1]


@dataclass
class DeviationDescriptor:
    """Location and size of a trajectory's largest deviation from the
    straight start-to-goal chord."""

    position: Point
    magnitude: float

    def __post_init__(self):
        self.position = as_point(self.position)
        self.magnitude = float(self.magnitude)
        if not (np.isfinite(self.magnitude) and self.magnitude >= 0):
            raise DomainError(f"magnitude must be nonnegative, got {self.magnitude}")


def _bezier_points(curve: BezierCurve, us: np.ndarray) -> np.ndarray:
    """Evaluate the cubic Bernstein form at each parameter in ``us``."""
    u = np.asarray(us, dtype=float)[:, None]
    v = 1.0 - u
    return (
        v**3 * curve.p0
        + 3.0 * v**2 * u * curve.p1
        + 3.0 * v * u**2 * curve.p2
        + u**3 * curve.p3
    )


def evaluate_bezier(curve: BezierCurve, u: float) -> Point:
    """Evaluate ``curve`` at parameter ``u`` in [0, 1]."""
    u = float(u)
    if not (0.0 <= u <= 1.0):
        raise DomainError(f"curve parameter must be in [0, 1], got {u}")
    return _bezier_points(curve, np.array([u]))[0]


def arc_length(curve: BezierCurve, subdivisions: int = CHORD_TABLE_SAMPLES - 1) -> float:
    """Chord-length approximation of the curve's total arc length."""
    pts = _bezier_points(curve, np.linspace(0.0, 1.0, subdivisions + 1))
    return float(np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)))


def resample_arclength(curve: BezierCurve, n_points: int, dt: float = 0.05) -> Trajectory:
    """Resample ``curve`` into ``n_points`` states with equal consecutive
    chord lengths (within 1e-3 relative). Endpoints are exact.

    A cumulative chord-length table over uniform parameters gives the
    arc-length initialization; a fixed-point pass then re-spaces the
    samples along their own polyline until the chords agree, which matters
    wherever curvature concentrates.
    """
    if n_points < 2:
        raise DomainError(f"n_points must be >= 2, got {n_points}")
    us = np.linspace(0.0, 1.0, CHORD_TABLE_SAMPLES)
    pts = _bezier_points(curve, us)
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total < DEGENERATE_LENGTH:
        raise DegenerateGeometryError(f"curve arc length {total} below {DEGENERATE_LENGTH}")
    u = np.interp(np.linspace(0.0, total, n_points), cum, us)
    states = _bezier_points(curve, u)
    for _ in range(CHORD_EQUALIZE_MAX_ITERS):
        chords = np.linalg.norm(np.diff(states, axis=0), axis=1)
        mean = chords.mean()
        if mean < DEGENERATE_LENGTH or np.abs(chords - mean).max() / mean <= CHORD_EQUALIZE_TOL:
            break
        cum_chord = np.concatenate([[0.0], np.cumsum(chords)])
        u = np.interp(np.linspace(0.0, cum_chord[-1], n_points), cum_chord, u)
        states = _bezier_points(curve, u)
    states[0] = curve.p0
    states[-1] = curve.p3
    return Trajectory(states=states, actions=None, dt=dt)


def deviation_descriptor(traj: Trajectory, start: Point, goal: Point) -> DeviationDescriptor:
    """Find the trajectory state farthest (perpendicularly) from the chord
    ``start`` -> ``goal``. Ties break toward the earliest index."""
    start = as_point(start, traj.dim)
    goal = as_point(goal, traj.dim)
    chord = goal - start
    length = float(np.linalg.norm(chord))
    if length < DEGENERATE_LENGTH:
        raise DegenerateGeometryError("start and goal coincide; chord is degenerate")
    direction = chord / length
    rel = traj.states - start
    proj = rel @ direction
    perp = rel - np.outer(proj, direction)
    dist = np.linalg.norm(perp, axis=1)
    idx = int(np.argmax(dist))  # argmax returns the first maximum
    return DeviationDescriptor(position=traj.states[idx].copy(), magnitude=float(dist[idx]))


def subsample_path(traj: Trajectory, k: int) -> Path:
    """Pick ``k`` states at indices as evenly spaced as possible over
    [0, T-1], always including the final state."""
    if k < 1:
        raise DomainError(f"k must be positive, got {k}")
    t = len(traj)
    if k > t:
        raise InsufficientLengthError(f"cannot subsample {k} waypoints from {t} states")
    if k == 1:
        indices = np.array([t - 1])
    else:
        # Half-up rounding of the even-spacing rule; spacing >= 1 when T >= k
        # so indices are strictly increasing.
        indices = np.floor(np.arange(k) * (t - 1) / (k - 1) + 0.5).astype(int)
    return Path(waypoints=traj.states[indices].copy())


def straight_line_curve(start: Point, goal: Point) -> BezierCurve:
    """Degenerate Bezier whose control points sit on the chord, giving the
    straight start-to-goal segment."""
    start = as_point(start)
    goal = as_point(goal, start.size)
    return BezierCurve(
        p0=start,
        p1=start + (goal - start) / 3.0,
        p2=start + 2.0 * (goal - start) / 3.0,
        p3=goal,
    )
