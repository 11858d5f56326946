"""legimod: controllable-legibility motion generation.

Score trajectories for intent-expressiveness with an information potential
field, synthesize a quality-diversity trajectory dataset, train a two-stage
conditional diffusion generator, and evaluate controllable legibility on
block-reaching tasks.
"""

from . import diffusion, env, eval_harness, geometry, ipf, path_diffuser, policy, qd, scoring
from .errors import (
    CohortTooSmallError,
    ConsistencyError,
    DegenerateGeometryError,
    DomainError,
    InfeasibleDemoError,
    InsufficientLengthError,
    LegimodError,
    SamplingDivergenceError,
    TrainingDivergenceError,
    UsageError,
)
from .geometry import (
    BezierCurve,
    DeviationDescriptor,
    Path,
    Trajectory,
    deviation_descriptor,
    evaluate_bezier,
    resample_arclength,
    subsample_path,
)
from .ipf import GoalScene, IpfGrid, likelihood, posterior, potential, rasterize
from .qd import Archive, DatasetRecord, QdConfig, generate_dataset
from .scoring import LegibilityLabel, rank_normalize, score_ld, score_lp_eval, score_lp_train

__version__ = "0.1.0"
