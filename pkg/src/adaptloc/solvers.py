"""Minimal pose solvers: P3P, the five-point essential solver and E5+1."""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from .errors import CheiralityAmbiguous, DegenerateSample, ScaleUnobservable
from .geometry import Database, Intrinsics, Pose

COLLINEAR_TOL = 1e-8
LAMBDA_COEFF_TOL = 1e-12
# below this parallax (rad) the +1 rays are numerically parallel
MIN_PARALLAX = 1e-8
ROOT_IMAG_TOL = 1e-8


def _cross(a, b):
    return np.array([a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]])


def _root_is_real(z):
    return abs(z.imag) < ROOT_IMAG_TOL * (1.0 + abs(z.real))


def _kabsch(P, Q):
    """Rotation and translation with ``Q ≈ R @ P + t`` for point rows."""
    p0 = P.mean(axis=0)
    q0 = Q.mean(axis=0)
    H = (P - p0).T @ (Q - q0)
    U, _, Vt = np.linalg.svd(H)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(Vt.T @ U.T))])
    R = Vt.T @ D @ U.T
    return R, q0 - R @ p0


# ---------------------------------------------------------------------------
# P3P
# ---------------------------------------------------------------------------


def _polish_depths(s, cosines, dist2, iters=5):
    """Newton iterations on the three law-of-cosines equations."""
    pairs = ((0, 1), (0, 2), (1, 2))
    for _ in range(iters):
        f = np.empty(3)
        J = np.zeros((3, 3))
        for r, (i, j) in enumerate(pairs):
            c = cosines[r]
            f[r] = s[i] ** 2 + s[j] ** 2 - 2.0 * s[i] * s[j] * c - dist2[r]
            J[r, i] = 2.0 * s[i] - 2.0 * s[j] * c
            J[r, j] = 2.0 * s[j] - 2.0 * s[i] * c
        try:
            step = np.linalg.solve(J, f)
        except np.linalg.LinAlgError:
            break
        s = s - step
        if np.max(np.abs(step)) <= 1e-15 * np.max(np.abs(s)):
            break
    return s


def solve_p3p(query_px, world, K: Intrinsics):
    """Absolute pose from three 2D-3D matches.

    Grunert's quartic in the depth ratio, followed by Newton polishing of
    the depths and a Kabsch alignment. Returns up to four :class:`Pose`
    candidates, each with all three points in front of the camera.
    """
    world = np.asarray(world, dtype=float).reshape(3, 3)
    f = K.bearings(np.asarray(query_px, dtype=float).reshape(3, 2))

    e1 = world[1] - world[0]
    e2 = world[2] - world[0]
    n1, n2 = np.linalg.norm(e1), np.linalg.norm(e2)
    if n1 == 0 or n2 == 0 or np.linalg.norm(_cross(e1, e2)) / (n1 * n2) < COLLINEAR_TOL:
        raise DegenerateSample("world points are collinear")
    for i, j in ((0, 1), (0, 2), (1, 2)):
        if np.linalg.norm(_cross(f[i], f[j])) < COLLINEAR_TOL:
            raise DegenerateSample("bearing vectors coincide")

    a2 = np.sum((world[1] - world[2]) ** 2)
    b2 = np.sum((world[0] - world[2]) ** 2)
    c2 = np.sum((world[0] - world[1]) ** 2)
    ca = f[1] @ f[2]
    cb = f[0] @ f[2]
    cg = f[0] @ f[1]

    amc = (a2 - c2) / b2
    apc = (a2 + c2) / b2
    coeffs = [
        (amc - 1.0) ** 2 - 4.0 * c2 / b2 * ca**2,
        4.0 * (amc * (1.0 - amc) * cb - (1.0 - apc) * ca * cg + 2.0 * c2 / b2 * ca**2 * cb),
        2.0
        * (
            amc**2
            - 1.0
            + 2.0 * amc**2 * cb**2
            + 2.0 * (b2 - c2) / b2 * ca**2
            - 4.0 * apc * ca * cb * cg
            + 2.0 * (b2 - a2) / b2 * cg**2
        ),
        4.0 * (-amc * (1.0 + amc) * cb + 2.0 * a2 / b2 * cg**2 * cb - (1.0 - apc) * ca * cg),
        (1.0 + amc) ** 2 - 4.0 * a2 / b2 * cg**2,
    ]
    roots = np.roots(coeffs) if abs(coeffs[0]) > 1e-14 else np.roots(coeffs[1:])

    cosines = np.array([cg, cb, ca])
    dist2 = np.array([c2, b2, a2])
    poses = []
    for z in roots:
        # near-double roots come back with ~sqrt(eps) imaginary parts
        if abs(z.imag) > 1e-6 * (1.0 + abs(z.real)):
            continue
        v = z.real
        if v <= 0:
            continue
        denom = 2.0 * (cg - v * ca)
        if abs(denom) < 1e-14:
            continue
        u = ((amc - 1.0) * v * v - 2.0 * amc * cb * v + 1.0 + amc) / denom
        if u <= 0:
            continue
        q = 1.0 + v * v - 2.0 * v * cb
        if q <= 0:
            continue
        s1 = np.sqrt(b2 / q)
        s = _polish_depths(np.array([s1, u * s1, v * s1]), cosines, dist2)
        if np.any(s <= 0):
            continue
        resid = np.array([
            s[0] ** 2 + s[1] ** 2 - 2 * s[0] * s[1] * cg - c2,
            s[0] ** 2 + s[2] ** 2 - 2 * s[0] * s[2] * cb - b2,
            s[1] ** 2 + s[2] ** 2 - 2 * s[1] * s[2] * ca - a2,
        ])
        if np.max(np.abs(resid)) > 1e-6 * max(a2, b2, c2):
            continue
        R, t = _kabsch(world, s[:, None] * f)
        pose = Pose(R, t)
        if any(np.allclose(pose.R, p.R, atol=1e-10) and np.allclose(pose.t, p.t, atol=1e-10) for p in poses):
            continue
        poses.append(pose)
    return poses[:4]


# ---------------------------------------------------------------------------
# Five-point essential matrix
# ---------------------------------------------------------------------------

# monomials of degree <= 3 in (x, y, z); the first ten (cubic) are eliminated
_MONOMIALS = [
    (3, 0, 0), (2, 1, 0), (2, 0, 1), (1, 2, 0), (1, 1, 1), (1, 0, 2),
    (0, 3, 0), (0, 2, 1), (0, 1, 2), (0, 0, 3),
    (2, 0, 0), (1, 1, 0), (1, 0, 1), (0, 2, 0), (0, 1, 1), (0, 0, 2),
    (1, 0, 0), (0, 1, 0), (0, 0, 1), (0, 0, 0),
]
_MONO_INDEX = {m: k for k, m in enumerate(_MONOMIALS)}
_BASIS = _MONOMIALS[10:]


def _triple_product_map():
    # coefficient slot 0,1,2 -> x,y,z; slot 3 -> constant
    P = np.zeros((64, 20))
    for a, b, c in itertools.product(range(4), repeat=3):
        e = [0, 0, 0]
        for s in (a, b, c):
            if s < 3:
                e[s] += 1
        P[16 * a + 4 * b + c, _MONO_INDEX[tuple(e)]] = 1.0
    return P


_P64 = _triple_product_map()
_LEVI = np.zeros((3, 3, 3))
for _i, _j, _k in itertools.permutations(range(3)):
    _LEVI[_i, _j, _k] = np.linalg.det(np.eye(3)[[_i, _j, _k]])


def _action_matrix_x(G):
    """Multiplication-by-x matrix on the quotient basis, given GJ rows."""
    M = np.zeros((10, 10))
    for r, (i, j, k) in enumerate(_BASIS):
        target = (i + 1, j, k)
        col = _MONO_INDEX[target]
        if col < 10:
            M[r] = -G[col]
        else:
            M[r, col - 10] = 1.0
    return M


def _constraint_matrix(basis):
    """10x20 coefficients of det(E)=0 and the trace constraint."""
    Ec = np.moveaxis(basis.reshape(4, 3, 3), 0, -1)  # (3, 3, 4)
    det = np.einsum("ijk,ia,jb,kc->abc", _LEVI, Ec[0], Ec[1], Ec[2]).reshape(64)
    EEt = np.einsum("ika,lkb->ilab", Ec, Ec)
    T = np.einsum("ilab,ljc->ijabc", EEt, Ec)
    tr = np.einsum("iiab->ab", EEt)
    C = 2.0 * T - np.einsum("ab,ijc->ijabc", tr, Ec)
    rows = np.vstack([det[None, :], C.reshape(9, 64)])
    return rows @ _P64


_EXP = np.array(_MONOMIALS, dtype=float)  # (20, 3)
_EXP_DOWN = [np.maximum(_EXP - np.eye(3)[a], 0.0) for a in range(3)]


def _monomial_values(xyz):
    """Monomials of each row of ``xyz`` (r, 3) -> (r, 20)."""
    return np.prod(xyz[:, None, :] ** _EXP, axis=2)


def _monomial_jacobian(xyz):
    """d(monomials)/d(x, y, z) for each row -> (r, 20, 3)."""
    return np.stack(
        [_EXP[:, a] * np.prod(xyz[:, None, :] ** _EXP_DOWN[a], axis=2) for a in range(3)], axis=2
    )


def _polish_roots(C, xyz, iters=3):
    """Gauss-Newton on all ten constraints, every root at once."""
    for _ in range(iters):
        r = _monomial_values(xyz) @ C.T  # (r, 10)
        J = np.einsum("kp,rpa->rka", C, _monomial_jacobian(xyz))
        JtJ = np.einsum("rka,rkb->rab", J, J)
        Jtr = np.einsum("rka,rk->ra", J, r)
        try:
            step = np.linalg.solve(JtJ, Jtr[..., None])[..., 0]
        except np.linalg.LinAlgError:
            break
        xyz = xyz - step
        if np.max(np.abs(step)) < 1e-15 * (1.0 + np.max(np.abs(xyz))):
            break
    return xyz


def solve_five_point(q_bearings, d_bearings):
    """Essential matrices with ``d^T E q = 0`` for five bearing pairs.

    Returns a list of at most ten unit-Frobenius essential matrices.
    """
    q = np.asarray(q_bearings, dtype=float).reshape(5, 3)
    d = np.asarray(d_bearings, dtype=float).reshape(5, 3)
    q = q / np.linalg.norm(q, axis=1, keepdims=True)
    d = d / np.linalg.norm(d, axis=1, keepdims=True)
    A = np.einsum("ni,nj->nij", d, q).reshape(5, 9)
    _, S, Vt = np.linalg.svd(A)
    if S[4] < 1e-10 * S[0]:
        raise DegenerateSample("epipolar constraint matrix is rank deficient")
    basis = Vt[5:]  # X, Y, Z, W

    C = _constraint_matrix(basis)
    C1, C2 = C[:, :10], C[:, 10:]
    if np.linalg.cond(C1) > 1e13:
        raise DegenerateSample("elimination template is singular")
    G = np.linalg.solve(C1, C2)
    M = _action_matrix_x(G)
    vals, vecs = np.linalg.eig(M)

    keep = [
        k for k in range(10)
        if _root_is_real(vals[k]) and abs(vecs[9, k]) >= 1e-12 * np.max(np.abs(vecs[:, k]))
    ]
    if not keep:
        return []
    v = (vecs[:, keep] / vecs[9, keep]).real
    xyz = _polish_roots(C, np.column_stack([vals[keep].real, v[7], v[8]]))
    E = np.einsum("ra,aj->rj", np.column_stack([xyz, np.ones(len(xyz))]), basis).reshape(-1, 3, 3)
    E /= np.linalg.norm(E, axis=(1, 2), keepdims=True)
    return list(E)


def decompose_essential(E, q_bearings, d_bearings):
    """Pick (R, unit t) among the four decompositions by cheirality vote."""
    q = np.asarray(q_bearings, dtype=float).reshape(-1, 3)
    d = np.asarray(d_bearings, dtype=float).reshape(-1, 3)
    U, _, Vt = np.linalg.svd(E)
    if np.linalg.det(U) < 0:
        U = -U
    if np.linalg.det(Vt) < 0:
        Vt = -Vt
    W = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 1.0]])
    R1 = U @ W @ Vt
    R2 = U @ W.T @ Vt
    t = U[:, 2]
    Rs = np.stack([R1, R1, R2, R2])
    ts = np.stack([t, -t, t, -t])
    # depths for all four configurations at once
    a = np.einsum("cij,nj->cni", Rs, q)
    aa = np.einsum("cni,cni->cn", a, a)
    dd = np.einsum("ni,ni->n", d, d)[None]
    ad = np.einsum("cni,ni->cn", a, d)
    at = np.einsum("cni,ci->cn", a, ts)
    dt = np.einsum("ni,ci->cn", d, ts)
    det = aa * dd - ad * ad
    with np.errstate(divide="ignore", invalid="ignore"):
        lq = (-at * dd + ad * dt) / det
        ld = (aa * dt - ad * at) / det
    counts = np.sum((lq > 0) & (ld > 0), axis=1)
    best = int(np.argmax(counts))
    if counts[best] < 3:
        raise CheiralityAmbiguous("no decomposition places three points in front")
    return Rs[best], ts[best]


# ---------------------------------------------------------------------------
# E5+1
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class E5p1Solution:
    pose: Pose
    essential: np.ndarray
    scale: float


def _pure_rotation(q, d, tol=1e-10):
    R, _ = _kabsch(np.vstack([q, np.zeros(3)]), np.vstack([d, np.zeros(3)]))
    return float(np.max(np.linalg.norm(d - q @ R.T, axis=1))) < tol


def solve_e5p1(
    five_query_px,
    five_db_px,
    db_a: int,
    one_query_px,
    one_db_px,
    db_b: int,
    db: Database,
    K_q: Intrinsics,
    lambda_tol: float = LAMBDA_COEFF_TOL,
    min_parallax: float = MIN_PARALLAX,
):
    """Absolute query pose from five matches to image A and one to image B.

    The five-point relative pose to A fixes rotation and the translation
    direction; the scale is the unique value making the query ray and the
    B ray of the sixth match coplanar with the query-B baseline.
    """
    if db_a == db_b:
        raise DegenerateSample("the +1 match must come from a second image")
    K_a = db.intrinsics[db_a]
    K_b = db.intrinsics[db_b]
    pose_a = db.poses[db_a]
    pose_b = db.poses[db_b]

    q = K_q.bearings(np.asarray(five_query_px, dtype=float).reshape(5, 2))
    d = K_a.bearings(np.asarray(five_db_px, dtype=float).reshape(5, 2))
    if _pure_rotation(q, d):
        raise ScaleUnobservable("query and database image differ by a pure rotation")

    q6 = K_q.bearings(np.asarray(one_query_px, dtype=float).reshape(1, 2))[0]
    r_b = pose_b.R.T @ K_b.bearings(np.asarray(one_db_px, dtype=float).reshape(1, 2))[0]
    c_a = pose_a.center
    c_b = pose_b.center

    solutions = []
    unobservable = 0
    for E in solve_five_point(q, d):
        try:
            R, t_hat = decompose_essential(E, q, d)
        except CheiralityAmbiguous:
            continue
        w = pose_a.R.T @ t_hat
        r_q = pose_a.R.T @ (R @ q6)
        n = _cross(r_q, r_b)
        coeff = w @ n
        if abs(coeff) < lambda_tol or np.linalg.norm(n) < min_parallax:
            unobservable += 1
            continue
        lam = -((c_a - c_b) @ n) / coeff
        if not lam > 0:
            continue
        c_q = c_a + lam * w
        # sixth-match cheirality: c_q + alpha r_q = c_b + beta r_b
        # least squares on [r_q, -r_b] [alpha, beta]^T = c_b - c_q
        rhs = c_b - c_q
        qq, bb, qb = r_q @ r_q, r_b @ r_b, r_q @ r_b
        det = qq * bb - qb * qb
        alpha = (bb * (r_q @ rhs) - qb * (r_b @ rhs)) / det
        beta = (qb * (r_q @ rhs) - qq * (r_b @ rhs)) / det
        if alpha <= 0 or beta <= 0:
            continue
        R_q = R.T @ pose_a.R
        solutions.append(E5p1Solution(Pose.from_center(R_q, c_q), E, float(lam)))
    if not solutions and unobservable:
        raise ScaleUnobservable("coplanarity equation does not constrain the scale")
    return solutions
