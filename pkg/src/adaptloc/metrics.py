"""Pose-error metrics and recall aggregation."""

from __future__ import annotations

from typing import NamedTuple, Sequence

import numpy as np

from .geometry import Pose, rotation_angle

DEFAULT_THRESHOLDS = ((0.10, 1.0), (0.25, 2.0), (0.5, 5.0), (5.0, 10.0))


class PoseError(NamedTuple):
    translation_m: float
    rotation_deg: float

    def absolute(self) -> float:
        """max(position error in cm, orientation error in degrees)."""
        return max(100.0 * self.translation_m, self.rotation_deg)


FAILED = PoseError(np.inf, np.inf)


def pose_error(est: Pose, gt: Pose) -> PoseError:
    """Camera-centre distance and relative rotation angle (degrees)."""
    dt = float(np.linalg.norm(est.center - gt.center))
    dr = np.degrees(rotation_angle(est.R @ gt.R.T))
    return PoseError(dt, float(min(dr, 180.0)))


def recall(errors: Sequence[PoseError], max_t: float, max_r_deg: float) -> float:
    if len(errors) == 0:
        return 0.0
    hits = sum(1 for e in errors if e.translation_m <= max_t and e.rotation_deg <= max_r_deg)
    return hits / len(errors)


def recalls(errors, thresholds=DEFAULT_THRESHOLDS):
    """Recall at each (meters, degrees) pair, in the given order."""
    return [recall(errors, t, r) for t, r in thresholds]


def median_errors(errors):
    """Median translation and rotation; failures count as infinite."""
    if len(errors) == 0:
        return np.nan, np.nan
    tr = np.array([e.translation_m for e in errors])
    rot = np.array([e.rotation_deg for e in errors])
    return float(np.median(tr)), float(np.median(rot))
