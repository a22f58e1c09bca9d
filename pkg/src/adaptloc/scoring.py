"""Hypothesis evaluation over both match sets and the five pose scores."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .geometry import Database, Intrinsics, Matches2D, Matches3D, Pose, fundamentals_for_query, reprojection_errors, sampson_errors


class ScoringFunction(enum.Enum):
    SUM_INLIERS = "sum_inliers"
    MULT_INLIERS = "mult_inliers"
    SUM_INLIER_RATIOS = "sum_inlier_ratios"
    SUM_MSAC = "sum_msac"
    MULT_MSAC = "mult_msac"

    @property
    def maximize(self) -> bool:
        return self in (ScoringFunction.SUM_INLIERS, ScoringFunction.MULT_INLIERS, ScoringFunction.SUM_INLIER_RATIOS)


@dataclass(frozen=True)
class MatchScoreStats:
    i3d: int
    i2d: int
    n3d: int
    n2d: int
    m3d: float
    m2d: float
    inlier_mask_3d: np.ndarray
    inlier_mask_2d: np.ndarray

    @classmethod
    def failed(cls, n3d=0, n2d=0) -> "MatchScoreStats":
        return cls(0, 0, n3d, n2d, 0.0, 0.0, np.zeros(n3d, bool), np.zeros(n2d, bool))


def residuals_3d(pose: Pose, K_q: Intrinsics, m3d: Matches3D) -> np.ndarray:
    """Squared reprojection errors (px^2); ``inf`` behind the camera."""
    return reprojection_errors(pose, K_q, m3d) ** 2


def residuals_2d(pose: Pose, K_q: Intrinsics, m2d: Matches2D, db: Database) -> np.ndarray:
    """Squared Sampson errors (px^2) against each match's database image.

    One fundamental matrix is built per distinct database image.
    """
    if len(m2d) == 0:
        return np.zeros(0)
    images, inverse = np.unique(m2d.db_index, return_inverse=True)
    F, valid = fundamentals_for_query(pose, K_q, db, images)
    e2 = sampson_errors(F[inverse], m2d.query_px, m2d.db_px)
    e2[~valid[inverse]] = np.inf
    return e2


def stats_from_residuals(e2_3d, e2_2d, t3d: float, t2d: float) -> MatchScoreStats:
    t3 = t3d * t3d
    t2 = t2d * t2d
    mask3 = e2_3d < t3
    mask2 = e2_2d < t2
    return MatchScoreStats(
        i3d=int(mask3.sum()),
        i2d=int(mask2.sum()),
        n3d=len(e2_3d),
        n2d=len(e2_2d),
        m3d=float(np.minimum(e2_3d, t3).sum()),
        m2d=float(np.minimum(e2_2d, t2).sum()),
        inlier_mask_3d=mask3,
        inlier_mask_2d=mask2,
    )


def evaluate_hypothesis(pose: Pose, K_q: Intrinsics, m3d: Matches3D, m2d: Matches2D, db: Database, t3d: float, t2d: float) -> MatchScoreStats:
    """Inlier counts and truncated (MSAC) sums of one pose on both match sets.

    A 2D-3D match is an inlier when its reprojection error is below ``t3d``;
    a 2D-2D match when its squared Sampson error is below ``t2d**2``.
    """
    if t3d <= 0 or t2d <= 0:
        raise ValueError("thresholds must be positive")
    return stats_from_residuals(residuals_3d(pose, K_q, m3d), residuals_2d(pose, K_q, m2d, db), t3d, t2d)


def score(stats: MatchScoreStats, f: ScoringFunction, t3d: float, t2d: float) -> float:
    """Scalar score of ``stats``; compare with :func:`better`.

    A modality without matches is neutral: it adds 0 to sums and
    contributes a factor of 1 to products.
    """
    if f is ScoringFunction.SUM_INLIERS:
        return float(stats.i3d + stats.i2d)
    if f is ScoringFunction.SUM_INLIER_RATIOS:
        r3 = stats.i3d / stats.n3d if stats.n3d else 0.0
        r2 = stats.i2d / stats.n2d if stats.n2d else 0.0
        return r3 + r2
    if f is ScoringFunction.MULT_INLIERS:
        a = stats.i3d if stats.n3d else 1
        b = stats.i2d if stats.n2d else 1
        return float(a * b)
    if f is ScoringFunction.SUM_MSAC:
        return stats.m3d / (t3d * t3d) + stats.m2d / (t2d * t2d)
    if f is ScoringFunction.MULT_MSAC:
        a = stats.m3d if stats.n3d else 1.0
        b = stats.m2d if stats.n2d else 1.0
        return a * b
    raise ValueError(f"unknown scoring function {f!r}")


def worst_score(f: ScoringFunction) -> float:
    return -np.inf if f.maximize else np.inf


def better(a: float, b: float, f: ScoringFunction) -> bool:
    """True when ``a`` strictly improves on incumbent ``b`` under ``f``."""
    return a > b if f.maximize else a < b
