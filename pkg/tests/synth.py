"""Small synthetic problems shared by the unit tests."""

import numpy as np

from adaptloc.geometry import Database, Intrinsics, Matches2D, Matches3D, Pose, project_points, so3_exp

K = Intrinsics(500.0, 520.0, 320.0, 240.0, 640, 480)


def random_rotation(rng, scale=np.pi):
    w = rng.normal(size=3)
    return so3_exp(w / np.linalg.norm(w) * rng.uniform(0.0, scale))


def random_pose(rng, spread=2.0):
    return Pose.from_center(random_rotation(rng), rng.normal(size=3) * spread)


def points_in_front(pose, rng, n, near=3.0, far=10.0, half=1.5):
    """World points projecting inside the image at depths in [near, far]."""
    z = rng.uniform(near, far, n)
    xy = rng.uniform(-half, half, (n, 2)) * z[:, None] / 3.0
    Xc = np.column_stack([xy, z])
    return (Xc - pose.t) @ pose.R


def nearby_pose(pose, rng, rot_deg=10.0, shift=1.0):
    w = rng.normal(size=3)
    R = so3_exp(w / np.linalg.norm(w) * np.radians(rng.uniform(0, rot_deg))) @ pose.R
    c = pose.center + rng.normal(size=3) * shift
    return Pose.from_center(R, c)


def problem(rng, n3d=100, n2d_per_image=40, num_db=4, sigma=0.0, outliers=0.0):
    """A query with 2D-3D matches and 2D-2D matches to ``num_db`` posed images.

    Returns ``(gt, m3d, m2d, db)``; the first ``round(outliers * n)`` matches
    of each set (after a shuffle) are replaced by random pixels.
    """
    gt = random_pose(rng)
    X = points_in_front(gt, rng, n3d)
    uv, _ = project_points(gt, K, X)
    uv = uv + rng.normal(0.0, sigma, uv.shape)
    n_out = int(round(outliers * n3d))
    uv[:n_out] = rng.uniform([0, 0], [640, 480], (n_out, 2))
    m3d = Matches3D(uv, X)

    poses, q_px, d_px, index = [], [], [], []
    for j in range(num_db):
        db_pose = nearby_pose(gt, rng, rot_deg=8.0, shift=0.8)
        poses.append(db_pose)
        Y = points_in_front(gt, rng, 4 * n2d_per_image)
        uq, zq = project_points(gt, K, Y)
        ud, zd = project_points(db_pose, K, Y)
        ok = (zq > 0) & (zd > 0) & K.in_image(ud) & K.in_image(uq)
        uq, ud = uq[ok][:n2d_per_image], ud[ok][:n2d_per_image]
        q_px.append(uq + rng.normal(0.0, sigma, uq.shape))
        d_px.append(ud + rng.normal(0.0, sigma, ud.shape))
        index.append(np.full(len(uq), j))
    q_px, d_px, index = np.vstack(q_px), np.vstack(d_px), np.concatenate(index)
    n_out = int(round(outliers * len(q_px)))
    d_px[:n_out] = rng.uniform([0, 0], [640, 480], (n_out, 2))
    db = Database(list(range(100, 100 + num_db)), poses, [K] * num_db)
    return gt, m3d, Matches2D(q_px, d_px, index), db
