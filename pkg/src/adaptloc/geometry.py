"""Rigid-body and pinhole-camera primitives.

Poses map world to camera coordinates, ``x_cam = R @ x_world + t``.  Every
function here is pure; arrays handed in are never modified.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple, Sequence

import numpy as np

from .errors import CheiralityViolation, DegenerateResidual, PureRotation

_ORTHO_TOL = 1e-9


def skew(v):
    """Cross-product matrix ``[v]x`` so that ``skew(a) @ b == cross(a, b)``."""
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def so3_exp(w):
    """Rodrigues map from an axis-angle vector to a rotation matrix."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    W = skew(w)
    if theta < 1e-8:
        # second-order Taylor keeps tiny LM steps exact to ~1e-24
        return np.eye(3) + W + 0.5 * W @ W
    return (
        np.eye(3)
        + (np.sin(theta) / theta) * W
        + ((1.0 - np.cos(theta)) / theta**2) * W @ W
    )


def so3_log(R):
    """Inverse of :func:`so3_exp` for angles in [0, pi]."""
    cos = np.clip((np.trace(R) - 1.0) / 2.0, -1.0, 1.0)
    theta = np.arccos(cos)
    if theta < 1e-8:
        return 0.5 * np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    if np.pi - theta < 1e-6:
        # near pi the antisymmetric part vanishes; use the symmetric part
        B = 0.5 * (R + np.eye(3))
        axis = np.sqrt(np.clip(np.diag(B), 0.0, None))
        k = int(np.argmax(axis))
        axis[(k + 1) % 3] = np.copysign(axis[(k + 1) % 3], B[k, (k + 1) % 3])
        axis[(k + 2) % 3] = np.copysign(axis[(k + 2) % 3], B[k, (k + 2) % 3])
        return theta * axis / np.linalg.norm(axis)
    w = np.array([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    return theta / (2.0 * np.sin(theta)) * w


def rotation_angle(R):
    """Geodesic angle of a rotation matrix in radians.

    Uses atan2 of the antisymmetric and symmetric parts; arccos of the
    trace alone loses precision below ~1e-8 rad.
    """
    R = np.asarray(R, dtype=float)
    s = 0.5 * np.linalg.norm([R[2, 1] - R[1, 2], R[0, 2] - R[2, 0], R[1, 0] - R[0, 1]])
    c = 0.5 * (np.trace(R) - 1.0)
    return float(np.arctan2(s, c))


def orthonormalize(R):
    """Closest rotation matrix in the Frobenius sense."""
    U, _, Vt = np.linalg.svd(R)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


def quat_to_rotation(q_wxyz):
    """Unit quaternion (w, x, y, z) to rotation matrix, re-orthonormalized."""
    w, x, y, z = np.asarray(q_wxyz, dtype=float) / np.linalg.norm(q_wxyz)
    R = np.array(
        [
            [1 - 2 * (y * y + z * z), 2 * (x * y - z * w), 2 * (x * z + y * w)],
            [2 * (x * y + z * w), 1 - 2 * (x * x + z * z), 2 * (y * z - x * w)],
            [2 * (x * z - y * w), 2 * (y * z + x * w), 1 - 2 * (x * x + y * y)],
        ]
    )
    return orthonormalize(R)


def rotation_to_quat(R):
    """Rotation matrix to unit quaternion (w, x, y, z) with w >= 0."""
    m = np.asarray(R, dtype=float)
    tr = np.trace(m)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
    elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
        q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
    elif m[1, 1] > m[2, 2]:
        s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
        q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
        q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
    q = np.array(q)
    q /= np.linalg.norm(q)
    return q if q[0] >= 0 else -q


@dataclass(frozen=True)
class Pose:
    """World-to-camera rigid transform."""

    R: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        R = np.array(self.R, dtype=float).reshape(3, 3)
        t = np.array(self.t, dtype=float).reshape(3)
        R.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls) -> "Pose":
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_center(cls, R, center) -> "Pose":
        R = np.asarray(R, dtype=float)
        return cls(R, -R @ np.asarray(center, dtype=float))

    @classmethod
    def from_quaternion(cls, q_wxyz, t) -> "Pose":
        return cls(quat_to_rotation(q_wxyz), t)

    @property
    def center(self) -> np.ndarray:
        return -self.R.T @ self.t

    def quaternion(self) -> np.ndarray:
        return rotation_to_quat(self.R)

    def inverse(self) -> "Pose":
        return Pose(self.R.T, -self.R.T @ self.t)

    def compose(self, other: "Pose") -> "Pose":
        """``self ∘ other``: apply ``other`` first, then ``self``."""
        return Pose(self.R @ other.R, self.R @ other.t + self.t)

    def transform(self, X):
        """Map world points of shape (3,) or (n, 3) into this camera frame."""
        return np.asarray(X, dtype=float) @ self.R.T + self.t

    def is_valid(self, tol=_ORTHO_TOL) -> bool:
        return bool(
            np.allclose(self.R.T @ self.R, np.eye(3), atol=tol)
            and abs(np.linalg.det(self.R) - 1.0) < tol
        )


@dataclass(frozen=True)
class Intrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int = 640
    height: int = 480

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    @property
    def K_inv(self) -> np.ndarray:
        return np.array(
            [
                [1.0 / self.fx, 0.0, -self.cx / self.fx],
                [0.0, 1.0 / self.fy, -self.cy / self.fy],
                [0.0, 0.0, 1.0],
            ]
        )

    def normalize(self, uv):
        """Pixels (n, 2) to normalized image coordinates (n, 2)."""
        uv = np.asarray(uv, dtype=float)
        return np.stack([(uv[..., 0] - self.cx) / self.fx, (uv[..., 1] - self.cy) / self.fy], axis=-1)

    def bearings(self, uv):
        """Unit-norm viewing rays (n, 3) for pixels (n, 2)."""
        xy = self.normalize(uv)
        b = np.concatenate([xy, np.ones(xy.shape[:-1] + (1,))], axis=-1)
        return b / np.linalg.norm(b, axis=-1, keepdims=True)

    def in_image(self, uv, margin=0.0):
        uv = np.asarray(uv)
        return (
            (uv[..., 0] >= margin)
            & (uv[..., 0] < self.width - margin)
            & (uv[..., 1] >= margin)
            & (uv[..., 1] < self.height - margin)
        )


class Correspondence2D3D(NamedTuple):
    query_pixel: np.ndarray
    world_point: np.ndarray


class Correspondence2D2D(NamedTuple):
    query_pixel: np.ndarray
    db_pixel: np.ndarray
    db_image_id: int


@dataclass(frozen=True)
class Matches3D:
    """Columnar set of 2D-3D matches: ``query_px`` (n, 2), ``world`` (n, 3)."""

    query_px: np.ndarray
    world: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "query_px", np.asarray(self.query_px, dtype=float).reshape(-1, 2))
        object.__setattr__(self, "world", np.asarray(self.world, dtype=float).reshape(-1, 3))
        if len(self.query_px) != len(self.world):
            raise ValueError("query_px and world must have the same length")

    @classmethod
    def empty(cls) -> "Matches3D":
        return cls(np.zeros((0, 2)), np.zeros((0, 3)))

    @classmethod
    def from_list(cls, items: Sequence[Correspondence2D3D]) -> "Matches3D":
        if not items:
            return cls.empty()
        return cls(np.array([m.query_pixel for m in items]), np.array([m.world_point for m in items]))

    def __len__(self):
        return len(self.query_px)

    def __getitem__(self, idx) -> "Matches3D":
        return Matches3D(self.query_px[idx], self.world[idx])

    def to_list(self):
        return [Correspondence2D3D(q, X) for q, X in zip(self.query_px, self.world)]


@dataclass(frozen=True)
class Matches2D:
    """Columnar set of 2D-2D matches against database images.

    ``db_index`` refers to positions in a :class:`Database`, not to ids.
    """

    query_px: np.ndarray
    db_px: np.ndarray
    db_index: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "query_px", np.asarray(self.query_px, dtype=float).reshape(-1, 2))
        object.__setattr__(self, "db_px", np.asarray(self.db_px, dtype=float).reshape(-1, 2))
        object.__setattr__(self, "db_index", np.asarray(self.db_index, dtype=np.int64).reshape(-1))
        if not (len(self.query_px) == len(self.db_px) == len(self.db_index)):
            raise ValueError("match columns must have equal length")

    @classmethod
    def empty(cls) -> "Matches2D":
        return cls(np.zeros((0, 2)), np.zeros((0, 2)), np.zeros(0, dtype=np.int64))

    def __len__(self):
        return len(self.query_px)

    def __getitem__(self, idx) -> "Matches2D":
        return Matches2D(self.query_px[idx], self.db_px[idx], self.db_index[idx])


@dataclass
class Database:
    """Posed, calibrated database images addressed by position.

    ``ids`` holds the external identifier of each entry; matches refer to
    entries by position so residual evaluation can gather arrays directly.
    """

    ids: list
    poses: list
    intrinsics: list
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not (len(self.ids) == len(self.poses) == len(self.intrinsics)):
            raise ValueError("database columns must have equal length")
        self._cache = {}

    def __len__(self):
        return len(self.ids)

    def index_of(self, db_id) -> int:
        if "index" not in self._cache:
            self._cache["index"] = {i: k for k, i in enumerate(self.ids)}
        return self._cache["index"][db_id]

    def _stack(self):
        if "R" not in self._cache:
            n = len(self.ids)
            self._cache["R"] = np.array([p.R for p in self.poses]).reshape(n, 3, 3)
            self._cache["t"] = np.array([p.t for p in self.poses]).reshape(n, 3)
            self._cache["K_inv"] = np.array([k.K_inv for k in self.intrinsics]).reshape(n, 3, 3)
            self._cache["centers"] = -np.einsum("nji,nj->ni", self._cache["R"], self._cache["t"])
        return self._cache

    @property
    def R(self):
        return self._stack()["R"]

    @property
    def t(self):
        return self._stack()["t"]

    @property
    def K_inv(self):
        return self._stack()["K_inv"]

    @property
    def centers(self):
        return self._stack()["centers"]


def project(pose: Pose, K: Intrinsics, X) -> np.ndarray:
    """Project a single world point; raises on points behind the camera."""
    x, y, z = pose.transform(X)
    if not z > 0:
        raise CheiralityViolation(f"point depth {z} is not positive")
    return np.array([K.fx * x / z + K.cx, K.fy * y / z + K.cy])


def project_points(pose: Pose, K: Intrinsics, X):
    """Vectorized projection. Returns (pixels (n, 2), depth (n,))."""
    Xc = pose.transform(X)
    z = Xc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        uv = np.stack([K.fx * Xc[:, 0] / z + K.cx, K.fy * Xc[:, 1] / z + K.cy], axis=1)
    return uv, z


def backproject(pose: Pose, K: Intrinsics, uv, depth) -> np.ndarray:
    """World point(s) seen at pixel ``uv`` with camera-frame depth ``depth``."""
    uv = np.asarray(uv, dtype=float)
    xy = K.normalize(uv)
    depth = np.asarray(depth, dtype=float)
    Xc = np.concatenate([xy, np.ones(xy.shape[:-1] + (1,))], axis=-1) * depth[..., None]
    return (Xc - pose.t) @ pose.R


def reprojection_error(pose: Pose, K: Intrinsics, m: Correspondence2D3D) -> float:
    try:
        uv = project(pose, K, m.world_point)
    except CheiralityViolation:
        return np.inf
    return float(np.hypot(*(uv - np.asarray(m.query_pixel, dtype=float))))


def reprojection_errors(pose: Pose, K: Intrinsics, matches: Matches3D) -> np.ndarray:
    """Per-match reprojection error in pixels; ``inf`` behind the camera."""
    if len(matches) == 0:
        return np.zeros(0)
    uv, z = project_points(pose, K, matches.world)
    e = np.linalg.norm(uv - matches.query_px, axis=1)
    e[~(z > 0)] = np.inf
    return e


def relative_pose(query: Pose, db: Pose) -> Pose:
    """Transform taking query-camera coordinates into db-camera coordinates."""
    R_rel = db.R @ query.R.T
    return Pose(R_rel, db.t - R_rel @ query.t)


def essential_from_relative(rel: Pose) -> np.ndarray:
    """Unit-Frobenius essential matrix with ``x_db^T E x_q = 0``."""
    if np.linalg.norm(rel.t) < 1e-12:
        raise PureRotation("relative translation vanishes")
    E = skew(rel.t) @ rel.R
    return E / np.linalg.norm(E)


def fundamental_from_essential(E, K_q: Intrinsics, K_db: Intrinsics) -> np.ndarray:
    return K_db.K_inv.T @ E @ K_q.K_inv


def _homogeneous(p):
    p = np.asarray(p, dtype=float)
    return p if p.shape[-1] == 3 else np.concatenate([p, np.ones(p.shape[:-1] + (1,))], axis=-1)


def sampson_error(F, q, d) -> float:
    """Squared Sampson distance of the pair (q in query, d in db)."""
    q = _homogeneous(q)
    d = _homogeneous(d)
    Fq = F @ q
    Ftd = F.T @ d
    denom = Fq[0] ** 2 + Fq[1] ** 2 + Ftd[0] ** 2 + Ftd[1] ** 2
    num = float(d @ Fq) ** 2
    if denom < np.finfo(float).tiny or not np.isfinite(denom):
        raise DegenerateResidual("epipolar gradient vanishes")
    return num / denom


def sampson_errors(F, q, d) -> np.ndarray:
    """Vectorized squared Sampson distances.

    ``F`` is (3, 3) or one matrix per match (n, 3, 3); ``q`` and ``d`` are
    (n, 2) pixels. Degenerate denominators yield ``inf``.
    """
    q = _homogeneous(q)
    d = _homogeneous(d)
    if F.ndim == 2:
        Fq = q @ F.T
        Ftd = d @ F
    else:
        Fq = np.einsum("nij,nj->ni", F, q)
        Ftd = np.einsum("nji,nj->ni", F, d)
    num = np.einsum("ni,ni->n", d, Fq) ** 2
    denom = Fq[:, 0] ** 2 + Fq[:, 1] ** 2 + Ftd[:, 0] ** 2 + Ftd[:, 1] ** 2
    out = np.full(len(q), np.inf)
    ok = denom > np.finfo(float).tiny
    out[ok] = num[ok] / denom[ok]
    return out


def fundamentals_for_query(pose: Pose, K_q: Intrinsics, db: Database, indices=None):
    """Pixel-domain fundamental matrices from a query pose to db entries.

    Returns ``(F, valid)`` with ``F`` of shape (m, 3, 3) for the requested
    entries; entries coinciding with the query centre are flagged invalid.
    """
    if indices is None:
        indices = np.arange(len(db))
    R_db = db.R[indices]
    t_db = db.t[indices]
    R_rel = R_db @ pose.R.T
    t_rel = t_db - R_rel @ pose.t
    norms = np.linalg.norm(t_rel, axis=1)
    valid = norms > 1e-12
    tx = np.zeros((len(indices), 3, 3))
    tx[:, 0, 1], tx[:, 0, 2] = -t_rel[:, 2], t_rel[:, 1]
    tx[:, 1, 0], tx[:, 1, 2] = t_rel[:, 2], -t_rel[:, 0]
    tx[:, 2, 0], tx[:, 2, 1] = -t_rel[:, 1], t_rel[:, 0]
    E = tx @ R_rel
    E[valid] /= norms[valid, None, None]
    F = np.transpose(db.K_inv[indices], (0, 2, 1)) @ E @ K_q.K_inv
    return F, valid
