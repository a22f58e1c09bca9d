"""Local optimization of a pose on truncated reprojection / Sampson costs.

The whole transform is updated on the left, ``R <- exp(w) R`` and
``t <- exp(w) t + dt``, so rotation increments act about the camera
centre; the 6-vector ``(w, dt)`` is the local parameterization throughout.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from .errors import InsufficientConstraints
from .geometry import Database, Intrinsics, Matches2D, Matches3D, Pose, skew, so3_exp


class RefineStrategy(enum.Enum):
    HYBRID = "hybrid"
    SPLIT = "split"


class Provenance(enum.Enum):
    P3P = "P3P"
    E5P1 = "E5p1"
    ADAPTIVE = "Adaptive"


@dataclass(frozen=True)
class RefineConfig:
    strategy: RefineStrategy = RefineStrategy.HYBRID
    max_iterations: int = 25
    relative_cost_tolerance: float = 1e-8
    initial_damping: float = 1e-4

    def __post_init__(self):
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be >= 1")
        if self.relative_cost_tolerance <= 0 or self.initial_damping <= 0:
            raise ValueError("tolerances must be positive")


def perturb(pose: Pose, delta) -> Pose:
    delta = np.asarray(delta, dtype=float)
    dR = so3_exp(delta[:3])
    return Pose(dR @ pose.R, dR @ pose.t + delta[3:])


def reprojection_residuals(pose: Pose, K: Intrinsics, m3d: Matches3D, jacobian=False):
    """Pixel residuals (n, 2) and optionally their Jacobian (n, 2, 6)."""
    Xc = m3d.world @ pose.R.T + pose.t
    z = Xc[:, 2]
    with np.errstate(divide="ignore", invalid="ignore"):
        u = K.fx * Xc[:, 0] / z + K.cx
        v = K.fy * Xc[:, 1] / z + K.cy
    r = np.stack([u, v], axis=1) - m3d.query_px
    r[~(z > 0)] = np.inf
    if not jacobian:
        return r
    n = len(m3d)
    dproj = np.zeros((n, 2, 3))
    with np.errstate(divide="ignore", invalid="ignore"):
        dproj[:, 0, 0] = K.fx / z
        dproj[:, 0, 2] = -K.fx * Xc[:, 0] / z**2
        dproj[:, 1, 1] = K.fy / z
        dproj[:, 1, 2] = -K.fy * Xc[:, 1] / z**2
    dXc = np.zeros((n, 3, 6))
    # d(Xc)/dw = -[Xc]x
    dXc[:, 0, 1], dXc[:, 0, 2] = Xc[:, 2], -Xc[:, 1]
    dXc[:, 1, 0], dXc[:, 1, 2] = -Xc[:, 2], Xc[:, 0]
    dXc[:, 2, 0], dXc[:, 2, 1] = Xc[:, 1], -Xc[:, 0]
    dXc[:, 0, 3] = dXc[:, 1, 4] = dXc[:, 2, 5] = 1.0
    return r, dproj @ dXc


def _skew_batch(v):
    """Stack of cross-product matrices for vectors ``v`` (..., 3)."""
    S = np.zeros(v.shape[:-1] + (3, 3))
    S[..., 0, 1], S[..., 0, 2] = -v[..., 2], v[..., 1]
    S[..., 1, 0], S[..., 1, 2] = v[..., 2], -v[..., 0]
    S[..., 2, 0], S[..., 2, 1] = -v[..., 1], v[..., 0]
    return S


def sampson_setup(K_q: Intrinsics, m2d: Matches2D, db: Database):
    """Pose-independent parts of the Sampson residuals: normalized coordinates
    of both sides and the focal scalings, reused across LM iterations."""
    n = len(m2d)
    images, inv = np.unique(m2d.db_index, return_inverse=True)
    Kd_inv = db.K_inv[images][inv]
    sd = np.stack([Kd_inv[:, 0, 0], Kd_inv[:, 1, 1]], axis=1)  # 1/fx, 1/fy of the db image
    Kq_inv = K_q.K_inv
    sq = np.array([Kq_inv[0, 0], Kq_inv[1, 1]])
    qn = m2d.query_px @ Kq_inv[:2, :2].T + Kq_inv[:2, 2]
    qn = np.column_stack([qn, np.ones(n)])
    dn = np.einsum("nij,nj->ni", Kd_inv[:, :2, :2], m2d.db_px) + Kd_inv[:, :2, 2]
    dn = np.column_stack([dn, np.ones(n)])
    return images, inv, qn, dn, sd, sq


def sampson_residuals(pose: Pose, K_q: Intrinsics, m2d: Matches2D, db: Database, jacobian=False, setup=None):
    """Signed Sampson distances (n,) in pixels and optionally d/dparams (n, 6).

    Squaring the residual gives the Sampson error used for scoring. Work
    is done in normalized coordinates; with zero-skew intrinsics the
    first two components of ``F q`` and ``F^T d`` are scaled copies of
    ``E q'`` and ``E^T d'``. ``setup`` is the result of
    :func:`sampson_setup` for the same matches.
    """
    n = len(m2d)
    if n == 0:
        return (np.zeros(0), np.zeros((0, 6))) if jacobian else np.zeros(0)
    images, inv, qn, dn, sd, sq = setup if setup is not None else sampson_setup(K_q, m2d, db)
    R_rel = db.R[images] @ pose.R.T
    t_rel = db.t[images] - R_rel @ pose.t
    E = (_skew_batch(t_rel) @ R_rel)[inv]

    Eq = np.einsum("nij,nj->ni", E, qn)
    Etd = np.einsum("nji,nj->ni", E, dn)
    num = np.einsum("ni,ni->n", dn, Eq)
    a = Eq[:, :2] * sd
    b = Etd[:, :2] * sq
    D = np.einsum("ni,ni->n", a, a) + np.einsum("ni,ni->n", b, b)
    ok = D > np.finfo(float).tiny
    r = np.full(n, np.inf)
    sqrtD = np.sqrt(D[ok])
    r[ok] = num[ok] / sqrtD
    if not jacobian:
        return r

    # columns k of d(Eq)/dparam and d(E^T d)/dparam
    Rn = R_rel[inv]
    dEq = np.empty((n, 3, 6))
    dEtd = np.empty((n, 3, 6))
    dEq[:, :, :3] = E @ _skew_batch(qn)
    dEtd[:, :, :3] = -_skew_batch(Etd)
    dEq[:, :, 3:] = _skew_batch(np.einsum("nij,nj->ni", Rn, qn)) @ Rn
    dEtd[:, :, 3:] = -np.transpose(Rn, (0, 2, 1)) @ _skew_batch(dn) @ Rn
    dnum = np.einsum("ni,nik->nk", dn, dEq)
    dD = 2.0 * (
        np.einsum("ni,nik->nk", a * sd, dEq[:, :2])
        + np.einsum("ni,nik->nk", b * sq, dEtd[:, :2])
    )
    J = np.zeros((n, 6))
    J[ok] = dnum[ok] / sqrtD[:, None] - (num[ok] / (2.0 * D[ok] * sqrtD))[:, None] * dD[ok]
    return r, J


def _uses(strategy: RefineStrategy, provenance: Provenance):
    if strategy is RefineStrategy.HYBRID or provenance is Provenance.ADAPTIVE:
        return True, True
    return provenance is Provenance.P3P, provenance is Provenance.E5P1


def objective(pose, K_q, m3d, m2d, db, t3d, t2d, use3d=True, use2d=True, setup=None) -> float:
    """Sum of truncated squared residuals, each modality scaled by 1/t^2."""
    cost = 0.0
    if use3d and len(m3d):
        e2 = np.sum(reprojection_residuals(pose, K_q, m3d) ** 2, axis=1)
        cost += np.minimum(e2, t3d * t3d).sum() / (t3d * t3d)
    if use2d and len(m2d):
        e2 = sampson_residuals(pose, K_q, m2d, db, setup=setup) ** 2
        cost += np.minimum(e2, t2d * t2d).sum() / (t2d * t2d)
    return float(cost)


def _normal_equations(pose, K_q, m3d, m2d, db, t3d, t2d, use3d, use2d, setup=None):
    H = np.zeros((6, 6))
    g = np.zeros(6)
    if use3d and len(m3d):
        r, J = reprojection_residuals(pose, K_q, m3d, jacobian=True)
        active = np.sum(r**2, axis=1) < t3d * t3d
        r = r[active].reshape(-1) / t3d
        J = J[active].reshape(-1, 6) / t3d
        H += J.T @ J
        g += J.T @ r
    if use2d and len(m2d):
        r, J = sampson_residuals(pose, K_q, m2d, db, jacobian=True, setup=setup)
        active = r**2 < t2d * t2d
        r = r[active] / t2d
        J = J[active] / t2d
        H += J.T @ J
        g += J.T @ r
    return H, g


def levenberg_marquardt(pose, K_q, m3d, m2d, db, t3d, t2d, cfg: RefineConfig, use3d=True, use2d=True):
    """Damped Gauss-Newton on the truncated objective.

    Returns ``(pose, costs)``; ``costs`` lists the objective after every
    accepted step, starting with the initial value, and never increases.
    """
    setup = sampson_setup(K_q, m2d, db) if use2d and len(m2d) else None
    args = (K_q, m3d, m2d, db, t3d, t2d, use3d, use2d, setup)
    cost = objective(pose, *args)
    costs = [cost]
    if not np.isfinite(cost) or cost == 0.0:
        return pose, costs
    lam = cfg.initial_damping
    for _ in range(cfg.max_iterations):
        H, g = _normal_equations(pose, *args)
        if not np.any(g):
            break
        diag = np.diag(H).copy()
        diag += 1e-9 * max(diag.max(), 1e-12)
        accepted = False
        while lam < 1e12:
            try:
                step = np.linalg.solve(H + lam * np.diag(diag), -g)
            except np.linalg.LinAlgError:
                lam *= 10.0
                continue
            candidate = perturb(pose, step)
            new_cost = objective(candidate, *args)
            if np.isfinite(new_cost) and new_cost < cost:
                accepted = True
                lam = max(lam / 10.0, 1e-12)
                break
            lam *= 10.0
        if not accepted:
            break
        decrease = cost - new_cost
        pose, cost = candidate, new_cost
        costs.append(cost)
        if decrease <= cfg.relative_cost_tolerance * costs[-2] or cost == 0.0:
            break
    return pose, costs


def refine(
    pose: Pose,
    provenance: Provenance,
    inliers3d: Matches3D,
    inliers2d: Matches2D,
    db: Database,
    K_q: Intrinsics,
    cfg: RefineConfig,
    t3d: float,
    t2d: float,
) -> Pose:
    """Refine ``pose`` on fixed inlier sets.

    Hybrid refinement uses both modalities. Split refinement uses only the
    modality of the solver that produced the hypothesis.
    """
    use3d, use2d = _uses(cfg.strategy, provenance)
    n = (len(inliers3d) if use3d else 0) + (len(inliers2d) if use2d else 0)
    if n < 3:
        raise InsufficientConstraints(f"only {n} inliers for the selected cost")
    refined, _ = levenberg_marquardt(pose, K_q, inliers3d, inliers2d, db, t3d, t2d, cfg, use3d, use2d)
    return refined
