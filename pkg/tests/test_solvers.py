import numpy as np
import pytest

from adaptloc.errors import DegenerateSample, ScaleUnobservable
from adaptloc.geometry import Database, Pose, project_points, rotation_angle, skew
from adaptloc.solvers import decompose_essential, solve_e5p1, solve_five_point, solve_p3p
from synth import K, nearby_pose, points_in_front, random_pose, random_rotation


def _bearings(X):
    return X / np.linalg.norm(X, axis=1, keepdims=True)


def _relative_sample(rng, n=5, forward=False):
    R = random_rotation(rng, 0.3)
    t = np.array([0.0, 0.0, 1.0]) + (rng.normal(size=3) * 1e-3 if forward else rng.normal(size=3))
    Xq = np.column_stack([rng.uniform(-2, 2, n), rng.uniform(-2, 2, n), rng.uniform(4, 8, n)])
    Xd = Xq @ R.T + t
    return R, t, _bearings(Xq), _bearings(Xd)


def test_p3p_recovers_ground_truth():
    rng = np.random.default_rng(0)
    for _ in range(200):
        pose = random_pose(rng)
        X = points_in_front(pose, rng, 3)
        uv, _ = project_points(pose, K, X)
        sols = solve_p3p(uv, X, K)
        assert 1 <= len(sols) <= 4
        assert min(rotation_angle(s.R @ pose.R.T) for s in sols) < 1e-8
        for s in sols:
            re, _ = project_points(s, K, X)
            assert np.max(np.linalg.norm(re - uv, axis=1)) < 1e-6


def test_p3p_collinear_world_points():
    uv = np.array([[320.0, 240.0], [330.0, 240.0], [340.0, 240.0]])
    with pytest.raises(DegenerateSample):
        solve_p3p(uv, [[0, 0, 5], [0, 0, 6], [0, 0, 7]], K)


def test_five_point_recovers_essential():
    rng = np.random.default_rng(1)
    for _ in range(200):
        R, t, q, d = _relative_sample(rng)
        Es = solve_five_point(q, d)
        assert 1 <= len(Es) <= 10
        gt = skew(t) @ R
        gt /= np.linalg.norm(gt)
        assert min(min(np.linalg.norm(E - gt), np.linalg.norm(E + gt)) for E in Es) < 1e-6
        for E in Es:
            assert abs(np.linalg.det(E / np.linalg.norm(E))) < 1e-8
            assert np.max(np.abs(np.einsum("ni,ij,nj->n", d, E, q))) < 1e-9


def test_five_point_planar_scene():
    rng = np.random.default_rng(2)
    for _ in range(50):
        R = random_rotation(rng, 0.3)
        t = rng.normal(size=3)
        xy = rng.uniform(-2, 2, (5, 2))
        Xq = np.column_stack([xy, 6.0 + 0.3 * xy[:, 0] - 0.2 * xy[:, 1]])
        Xd = Xq @ R.T + t
        Es = solve_five_point(_bearings(Xq), _bearings(Xd))
        gt = skew(t) @ R
        gt /= np.linalg.norm(gt)
        assert min(min(np.linalg.norm(E - gt), np.linalg.norm(E + gt)) for E in Es) < 1e-6


@pytest.mark.parametrize("forward", [False, True])
def test_decompose_essential(forward):
    rng = np.random.default_rng(3)
    for _ in range(50):
        R, t, q, d = _relative_sample(rng, forward=forward)
        E = skew(t) @ R
        for sign in (1.0, -1.0):
            R_est, t_est = decompose_essential(sign * E, q, d)
            assert rotation_angle(R_est @ R.T) < 1e-8
            np.testing.assert_allclose(t_est, t / np.linalg.norm(t), atol=1e-8)


def _e5p1_problem(rng):
    gt = random_pose(rng)
    pa = nearby_pose(gt, rng, shift=1.0)
    pb = nearby_pose(gt, rng, shift=1.0)
    db = Database([7, 9], [pa, pb], [K, K])
    X = points_in_front(gt, rng, 6)
    q, _ = project_points(gt, K, X)
    da, za = project_points(pa, K, X[:5])
    dbp, zb = project_points(pb, K, X[5:])
    return gt, db, q, da, dbp, (za > 0).all() and (zb > 0).all()


def test_e5p1_recovers_absolute_pose():
    rng = np.random.default_rng(4)
    done = 0
    while done < 200:
        gt, db, q, da, dbp, front = _e5p1_problem(rng)
        if not front:
            continue
        sols = solve_e5p1(q[:5], da, 0, q[5], dbp[0], 1, db, K)
        best = min(np.linalg.norm(s.pose.center - gt.center) for s in sols)
        assert best < 1e-7
        for s in sols:
            assert s.scale > 0
        done += 1


def test_e5p1_pure_rotation():
    rng = np.random.default_rng(5)
    gt = random_pose(rng)
    pa = Pose.from_center(random_rotation(rng, 0.2) @ gt.R, gt.center)
    pb = nearby_pose(gt, rng)
    db = Database([0, 1], [pa, pb], [K, K])
    X = points_in_front(gt, rng, 6)
    q, _ = project_points(gt, K, X)
    da, _ = project_points(pa, K, X[:5])
    dbp, _ = project_points(pb, K, X[5:])
    with pytest.raises(ScaleUnobservable):
        solve_e5p1(q[:5], da, 0, q[5], dbp[0], 1, db, K)


def _single_candidate(q, d):
    count = 0
    for E in solve_five_point(q, d):
        try:
            decompose_essential(E, q, d)
            count += 1
        except Exception:
            pass
    return count == 1


def test_e5p1_far_sixth_point():
    # only samples where the five-point stage leaves one candidate, so the
    # scale equation of the true rotation is the only one evaluated
    rng = np.random.default_rng(6)
    tried = 0
    while tried < 20:
        gt, db, q, da, dbp, front = _e5p1_problem(rng)
        qb = K.bearings(q[:5])
        if not front or not _single_candidate(qb, K.bearings(da)):
            continue
        baseline = np.linalg.norm(db.poses[1].center - gt.center)
        direction = gt.R.T @ np.array([0.05, -0.02, 1.0])
        X6 = gt.center + direction / np.linalg.norm(direction) * 1e9 * baseline
        q6, _ = project_points(gt, K, X6[None])
        d6, zb = project_points(db.poses[1], K, X6[None])
        if zb[0] <= 0:
            continue
        with pytest.raises(ScaleUnobservable):
            solve_e5p1(q[:5], da, 0, q6[0], d6[0], 1, db, K)
        tried += 1


def test_e5p1_same_image_rejected():
    rng = np.random.default_rng(7)
    gt, db, q, da, dbp, _ = _e5p1_problem(rng)
    with pytest.raises(DegenerateSample):
        solve_e5p1(q[:5], da, 0, q[5], dbp[0], 0, db, K)
