"""Hybrid structure-based / structure-less camera localization with
numpy: minimal solvers, dual-modality scoring, local refinement, the
adaptive RANSAC loop, and a synthetic benchmark."""

from .errors import (
    CheiralityAmbiguous,
    CheiralityViolation,
    DegenerateResidual,
    DegenerateSample,
    GenerationFailed,
    GeometryError,
    InsufficientConstraints,
    PureRotation,
    ScaleUnobservable,
)
from .estimators import EstimatorConfig, PoseResult, oracle, ransac_adaptive, ransac_e5p1, ransac_p3p, select
from .geometry import (
    Correspondence2D2D,
    Correspondence2D3D,
    Database,
    Intrinsics,
    Matches2D,
    Matches3D,
    Pose,
    essential_from_relative,
    fundamental_from_essential,
    project,
    relative_pose,
    reprojection_error,
    sampson_error,
)
from .metrics import PoseError, pose_error, recall
from .refine import Provenance, RefineConfig, RefineStrategy, refine
from .scene import (
    CorruptionModel,
    Layout,
    SceneSpec,
    SparsityConfig,
    SyntheticScene,
    corrupt,
    filter_points,
    generate_matches,
    generate_scene,
    retrieve,
    sparsify,
)
from .scoring import MatchScoreStats, ScoringFunction, evaluate_hypothesis, score
from .solvers import decompose_essential, solve_e5p1, solve_five_point, solve_p3p

__version__ = "0.1.0"
