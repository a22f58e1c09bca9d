"""Two minimal solvers on one noise-free query.

P3P needs three 2D-3D matches. E5+1 needs five 2D-2D matches to one
posed database image, which fix the rotation and the direction of
travel, plus a single match to a second image that fixes the scale.
"""

import numpy as np

from adaptloc.geometry import Database, Intrinsics, Pose, project_points, rotation_angle, so3_exp
from adaptloc.solvers import solve_e5p1, solve_p3p

rng = np.random.default_rng(7)
K = Intrinsics(500.0, 500.0, 320.0, 240.0, 640, 480)

query = Pose.from_center(so3_exp([0.05, -0.2, 0.02]), np.array([0.0, 0.0, 0.0]))
db_a = Pose.from_center(so3_exp([0.0, -0.1, 0.0]), np.array([1.2, 0.1, -0.3]))
db_b = Pose.from_center(so3_exp([0.02, -0.3, 0.0]), np.array([-0.8, 0.0, 0.4]))

# scene points in front of the query camera
Xc = np.column_stack([rng.uniform(-2, 2, 6), rng.uniform(-1.5, 1.5, 6), rng.uniform(4, 9, 6)])
X = (Xc - query.t) @ query.R
uv, _ = project_points(query, K, X)


def report(name, poses):
    print(f"{name}: {len(poses)} candidate poses")
    for p in poses:
        dr = np.degrees(rotation_angle(p.R @ query.R.T))
        dc = np.linalg.norm(p.center - query.center)
        print(f"    rotation error {dr:.2e} deg, centre error {dc:.2e}")


# structure-based: three points with known world coordinates
report("P3P", solve_p3p(uv[:3], X[:3], K))

# structure-less: pixels only, plus poses of the database images
db = Database(["a", "b"], [db_a, db_b], [K, K])
pa, _ = project_points(db_a, K, X[:5])
pb, _ = project_points(db_b, K, X[5:6])
sols = solve_e5p1(uv[:5], pa, 0, uv[5], pb[0], 1, db, K)
report("E5+1", [s.pose for s in sols])
print("scale of the A baseline per candidate:", ", ".join(f"{s.scale:.4f}" for s in sols))
print("true A baseline length:", f"{np.linalg.norm(db_a.center - query.center):.4f}")
