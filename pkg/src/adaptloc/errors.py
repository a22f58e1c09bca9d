"""Exception types raised by the geometry, solver and simulation layers."""


class GeometryError(ValueError):
    """Base class for recoverable geometric failures."""


class CheiralityViolation(GeometryError):
    """A point lies on or behind the camera plane."""


class DegenerateResidual(GeometryError):
    """Residual denominator vanished (both epipolar gradients are zero)."""


class PureRotation(GeometryError):
    """Relative translation is too small to define an essential matrix."""


class DegenerateSample(GeometryError):
    """Minimal sample does not determine a finite set of solutions."""


class CheiralityAmbiguous(GeometryError):
    """No essential-matrix decomposition places enough points in front."""


class ScaleUnobservable(GeometryError):
    """The +1 match cannot fix the translation scale."""


class InsufficientConstraints(GeometryError):
    """Too few inliers to run a refinement."""


class GenerationFailed(RuntimeError):
    """Synthetic scene generation could not satisfy its visibility quotas."""
