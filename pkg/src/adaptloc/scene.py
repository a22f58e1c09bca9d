"""Synthetic localization scenes.

A scene holds posed database cameras, ground-truth world points with
surface normals, a possibly corrupted copy of those points, and query
cameras. Matches are synthesized per query against a retrieved subset
of reference views; 2D-3D matches come from lifting the 2D-2D matches
through the reference view's geometry.
"""

from __future__ import annotations

import enum
import hashlib
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import GenerationFailed
from .geometry import Database, Intrinsics, Matches2D, Matches3D, Pose, backproject, project_points


class Layout(enum.Enum):
    STREET = "street"
    ROOM = "room"


@dataclass(frozen=True)
class SceneSpec:
    num_db: int = 200
    num_points: int = 4000
    num_queries: int = 200
    layout: Layout = Layout.STREET
    seed: int = 0
    # camera model shared by every image
    focal: float = 500.0
    width: int = 640
    height: int = 480
    # visibility and matchability
    near: float = 1.0
    far: float = 40.0
    max_incidence_deg: float = 75.0
    max_scale_change: float = 1.6
    max_view_change_deg: float = 35.0
    max_matches_per_pair: int = 40
    # street geometry
    db_spacing: float = 0.5
    street_half_width: float = 6.0
    facade_height: float = 10.0

    def __post_init__(self):
        if min(self.num_db, self.num_points, self.num_queries) < 1:
            raise ValueError("scene counts must be >= 1")


@dataclass(frozen=True)
class CorruptionModel:
    pixel_sigma: float = 0.0
    outlier_ratio: float = 0.0
    point_noise: float = 0.0
    depth_bias: float = 0.0  # sigma of log depth factor per database image
    drop_3d_fraction: float = 0.0
    outlier_ratio_3d: float = 0.0  # lifted points replaced by a wrong scene point

    def __post_init__(self):
        for name in ("outlier_ratio", "drop_3d_fraction", "outlier_ratio_3d"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if min(self.pixel_sigma, self.point_noise, self.depth_bias) < 0:
            raise ValueError("sigmas must be non-negative")


@dataclass(frozen=True)
class SparsityConfig:
    keep_every_n: int = 1

    def __post_init__(self):
        if self.keep_every_n < 1:
            raise ValueError("keep_every_n must be >= 1")


@dataclass(frozen=True)
class DbImage:
    id: int
    pose: Pose
    K: Intrinsics
    capture_index: int


@dataclass(frozen=True)
class QueryImage:
    pose: Pose
    K: Intrinsics
    capture_index: int


@dataclass(frozen=True)
class SyntheticScene:
    spec: SceneSpec
    db_images: tuple
    points_gt: np.ndarray
    normals: np.ndarray
    points_obs: np.ndarray
    point_available: np.ndarray
    queries: tuple
    # visibility as parallel arrays: (point id, db position, gt pixel)
    obs_point: np.ndarray
    obs_image: np.ndarray
    obs_px: np.ndarray
    depth_bias: np.ndarray = None

    def __post_init__(self):
        if self.depth_bias is None:
            object.__setattr__(self, "depth_bias", np.ones(len(self.db_images)))

    @property
    def num_db(self):
        return len(self.db_images)

    def database(self) -> Database:
        return Database(
            [im.id for im in self.db_images],
            [im.pose for im in self.db_images],
            [im.K for im in self.db_images],
        )

    def observations(self, db_position):
        sel = self.obs_image == db_position
        return self.obs_point[sel], self.obs_px[sel]


# ---------------------------------------------------------------------------
# generation
# ---------------------------------------------------------------------------


def look_rotation(forward, up=(0.0, 0.0, 1.0)):
    """World-to-camera rotation for a camera looking along ``forward``.

    Camera axes: x right, y down, z forward.
    """
    f = np.asarray(forward, dtype=float)
    f = f / np.linalg.norm(f)
    right = np.cross(f, up)
    right /= np.linalg.norm(right)
    down = np.cross(f, right)
    return np.stack([right, down, f])


def visible_mask(pose: Pose, K: Intrinsics, points, normals, spec: SceneSpec):
    """Points inside the frustum, within range, and facing the camera."""
    uv, z = project_points(pose, K, points)
    inside = (z > spec.near) & (z < spec.far) & K.in_image(uv, margin=2.0)
    to_cam = pose.center - points
    dist = np.linalg.norm(to_cam, axis=1)
    cos_inc = np.einsum("ij,ij->i", to_cam, normals) / np.maximum(dist, 1e-12)
    inside &= cos_inc > np.cos(np.radians(spec.max_incidence_deg))
    return inside, uv


def matchable_mask(center_a, center_b, points, spec: SceneSpec):
    """Viewpoint change small enough for a feature to match across views."""
    va = center_a - points
    vb = center_b - points
    da = np.linalg.norm(va, axis=1)
    db = np.linalg.norm(vb, axis=1)
    ratio = np.maximum(da, db) / np.maximum(np.minimum(da, db), 1e-12)
    cos = np.einsum("ij,ij->i", va, vb) / np.maximum(da * db, 1e-12)
    return (ratio <= spec.max_scale_change) & (cos >= np.cos(np.radians(spec.max_view_change_deg)))


def _street(spec: SceneSpec, rng):
    K = Intrinsics(spec.focal, spec.focal, spec.width / 2.0, spec.height / 2.0, spec.width, spec.height)
    length = spec.num_db * spec.db_spacing
    W, H = spec.street_half_width, spec.facade_height

    xs = np.arange(spec.num_db) * spec.db_spacing + rng.uniform(-0.1, 0.1, spec.num_db) * spec.db_spacing
    ys = 0.8 * np.sin(xs / 25.0) + rng.normal(0.0, 0.15, spec.num_db)
    zs = 1.6 + rng.normal(0.0, 0.05, spec.num_db)
    db = []
    for i in range(spec.num_db):
        yaw = np.radians(rng.uniform(-12.0, 12.0))
        pitch = np.radians(rng.uniform(-3.0, 3.0))
        fwd = np.array([np.cos(yaw) * np.cos(pitch), np.sin(yaw) * np.cos(pitch), np.sin(pitch)])
        db.append(DbImage(i, Pose.from_center(look_rotation(fwd), [xs[i], ys[i], zs[i]]), K, i))

    # facade points on both sides of the street
    n = spec.num_points
    x_lo, x_hi = -spec.far * 0.25, length + spec.far
    side = rng.integers(0, 2, n) * 2 - 1
    px = rng.uniform(x_lo, x_hi, n)
    pz = rng.uniform(0.0, H, n)
    py = side * (W + rng.normal(0.0, 0.3, n))
    points = np.column_stack([px, py, pz])
    normals = np.column_stack([np.zeros(n), -side.astype(float), np.zeros(n)])

    margin = min(2.0, 0.25 * (xs[-1] - xs[0]))

    def sample_query(j):
        x = rng.uniform(xs[0] + margin, xs[-1] - margin)
        y = 0.8 * np.sin(x / 25.0) + rng.uniform(-1.5, 1.5)
        z = 1.6 + rng.normal(0.0, 0.1)
        yaw = np.radians(rng.uniform(-20.0, 20.0))
        pitch = np.radians(rng.uniform(-5.0, 5.0))
        fwd = np.array([np.cos(yaw) * np.cos(pitch), np.sin(yaw) * np.cos(pitch), np.sin(pitch)])
        return Pose.from_center(look_rotation(fwd), [x, y, z])

    return K, db, points, normals, sample_query


def _room(spec: SceneSpec, rng):
    K = Intrinsics(spec.focal, spec.focal, spec.width / 2.0, spec.height / 2.0, spec.width, spec.height)
    radius = 5.0
    angles = np.linspace(0.0, 2 * np.pi, spec.num_db, endpoint=False) + rng.normal(0.0, 0.01, spec.num_db)
    db = []
    for i, a in enumerate(angles):
        c = np.array([radius * np.cos(a), radius * np.sin(a), 1.5 + rng.normal(0.0, 0.1)])
        target = rng.normal(0.0, 0.3, 3) + np.array([0.0, 0.0, 1.0])
        db.append(DbImage(i, Pose.from_center(look_rotation(target - c), c), K, i))

    # points on the surface of a central box
    n = spec.num_points
    half = np.array([1.5, 1.5, 1.0])
    face = rng.integers(0, 6, n)
    pts = rng.uniform(-1.0, 1.0, (n, 3))
    axis = face // 2
    sign = np.where(face % 2 == 0, 1.0, -1.0)
    pts[np.arange(n), axis] = sign
    normals = np.zeros((n, 3))
    normals[np.arange(n), axis] = sign
    points = pts * half + np.array([0.0, 0.0, 1.0])

    def sample_query(j):
        a = rng.uniform(0.0, 2 * np.pi)
        r = radius + rng.uniform(-1.0, 0.5)
        c = np.array([r * np.cos(a), r * np.sin(a), 1.5 + rng.normal(0.0, 0.2)])
        target = rng.normal(0.0, 0.3, 3) + np.array([0.0, 0.0, 1.0])
        return Pose.from_center(look_rotation(target - c), c)

    return K, db, points, normals, sample_query


def generate_scene(spec: SceneSpec, max_attempts: int = 50) -> SyntheticScene:
    """Build a scene; every query sees >= 30 points in >= 3 db images."""
    rng = np.random.default_rng(spec.seed)
    builder = _street if spec.layout is Layout.STREET else _room
    K, db, points, normals, sample_query = builder(spec, rng)

    obs_point, obs_image, obs_px = [], [], []
    for im in db:
        mask, uv = visible_mask(im.pose, im.K, points, normals, spec)
        ids = np.flatnonzero(mask)
        obs_point.append(ids)
        obs_image.append(np.full(len(ids), im.id))
        obs_px.append(uv[ids])
    obs_point = np.concatenate(obs_point)
    obs_image = np.concatenate(obs_image)
    obs_px = np.concatenate(obs_px).reshape(-1, 2)

    vis_db = np.zeros((len(db), len(points)), dtype=bool)
    vis_db[obs_image, obs_point] = True

    queries = []
    for j in range(spec.num_queries):
        for _ in range(max_attempts):
            pose = sample_query(j)
            mask, _ = visible_mask(pose, K, points, normals, spec)
            shared = (vis_db & mask[None, :]).sum(axis=1)
            if np.sum(shared >= 30) >= 3:
                queries.append(pose)
                break
        else:
            raise GenerationFailed(f"query {j}: visibility quota not met after {max_attempts} attempts")

    # capture order: queries are a later traversal, ordered along the path
    if spec.layout is Layout.STREET:
        order = np.argsort([p.center[0] for p in queries], kind="stable")
    else:
        order = np.argsort([np.arctan2(p.center[1], p.center[0]) for p in queries], kind="stable")
    queries = tuple(QueryImage(queries[k], K, len(db) + rank) for rank, k in enumerate(order))

    seen = np.bincount(obs_point, minlength=len(points)) >= 2
    return SyntheticScene(
        spec=spec,
        db_images=tuple(db),
        points_gt=points,
        normals=normals,
        points_obs=points.copy(),
        point_available=seen,
        queries=queries,
        obs_point=obs_point,
        obs_image=obs_image,
        obs_px=obs_px,
    )


# ---------------------------------------------------------------------------
# sparsification and corruption
# ---------------------------------------------------------------------------


def sparsify(scene: SyntheticScene, cfg: SparsityConfig) -> SyntheticScene:
    """Keep db images whose capture index is a multiple of N.

    Points seen by fewer than two kept images lose their 3D position, as
    they could not have been triangulated.
    """
    N = cfg.keep_every_n
    if N == 1:
        return scene
    keep = [k for k, im in enumerate(scene.db_images) if im.capture_index % N == 0]
    remap = -np.ones(len(scene.db_images), dtype=np.int64)
    remap[keep] = np.arange(len(keep))
    sel = remap[scene.obs_image] >= 0
    obs_point = scene.obs_point[sel]
    obs_image = remap[scene.obs_image[sel]]
    db_images = tuple(replace(scene.db_images[k], id=scene.db_images[k].id) for k in keep)
    counts = np.bincount(obs_point, minlength=len(scene.points_gt))
    return replace(
        scene,
        db_images=db_images,
        point_available=scene.point_available & (counts >= 2),
        obs_point=obs_point,
        obs_image=obs_image,
        obs_px=scene.obs_px[sel],
        depth_bias=scene.depth_bias[keep],
    )


def corrupt(scene: SyntheticScene, model: CorruptionModel, seed: int) -> SyntheticScene:
    """Perturb stored 3D points and draw per-image depth-scale factors.

    Ground-truth poses and pixels are left untouched.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0]))
    noise = rng.normal(0.0, 1.0, scene.points_gt.shape)
    bias = np.exp(rng.normal(0.0, 1.0, len(scene.db_images)) * model.depth_bias)
    if model.point_noise == 0.0:
        points_obs = scene.points_gt.copy()
    else:
        points_obs = scene.points_gt + model.point_noise * noise
    if model.depth_bias == 0.0:
        bias = np.ones(len(scene.db_images))
    return replace(scene, points_obs=points_obs, depth_bias=bias)


# ---------------------------------------------------------------------------
# retrieval and matching
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ReferenceView:
    """A posed image usable for retrieval and matching.

    ``pose`` is the pose the localizer believes (estimated for images
    added during continuous localization); ``true_pose`` is used only to
    decide which features can physically match. ``lift`` gives the 3D
    point associated with each observation (NaN when none).
    """

    id: object
    pose: Pose
    true_pose: Pose
    K: Intrinsics
    point_ids: np.ndarray
    pixels: np.ndarray
    lift: np.ndarray
    visible_ids: np.ndarray  # points visible from ``pose``, used for retrieval
    noisy: bool = False  # pixels already carry measurement noise


def db_views(scene: SyntheticScene):
    """Reference views for the database images, lifting through points_obs."""
    views = []
    for pos, im in enumerate(scene.db_images):
        ids, px = scene.observations(pos)
        X = scene.points_obs[ids]
        c = im.pose.center
        X = c + scene.depth_bias[pos] * (X - c)
        X[~scene.point_available[ids]] = np.nan
        views.append(ReferenceView(im.id, im.pose, im.pose, im.K, ids, px, X, ids))
    return views


def _visible_ids(pose, K, scene):
    mask, uv = visible_mask(pose, K, scene.points_gt, scene.normals, scene.spec)
    return np.flatnonzero(mask), uv


def retrieve(scene: SyntheticScene, query_index: int, k: int, views=None):
    """Rank reference views by shared visible points with the query.

    Visibility of each view is evaluated from its believed pose; ties go
    to the nearer camera centre. Returns positions into ``views``.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if views is None:
        views = db_views(scene)
    q = scene.queries[query_index]
    q_ids, _ = _visible_ids(q.pose, q.K, scene)
    q_mask = np.zeros(len(scene.points_gt), dtype=bool)
    q_mask[q_ids] = True
    keys = []
    for pos, v in enumerate(views):
        shared = int(q_mask[v.visible_ids].sum())
        dist = float(np.linalg.norm(v.pose.center - q.pose.center))
        keys.append((-shared, dist, pos))
    keys.sort()
    return [pos for _, _, pos in keys[: min(k, len(views))]]


@dataclass(frozen=True)
class QueryMatches:
    """Matches of one query against its retrieved views.

    ``m2d.db_index`` indexes ``database`` (retrieval rank order).
    ``feature_2d``/``feature_3d`` are query feature ids (GT point ids);
    ``outlier_2d``/``outlier_3d`` flag synthetic outliers.
    """

    m2d: Matches2D
    m3d: Matches3D
    database: Database
    feature_2d: np.ndarray
    feature_3d: np.ndarray
    outlier_2d: np.ndarray
    outlier_3d: np.ndarray
    query_features: dict = field(default_factory=dict)

    def with_3d(self, keep) -> "QueryMatches":
        keep = np.asarray(keep)
        return replace(self, m3d=self.m3d[keep], feature_3d=self.feature_3d[keep], outlier_3d=self.outlier_3d[keep])

    def buffer_digest(self) -> str:
        h = hashlib.sha256()
        for a in (self.m2d.query_px, self.m2d.db_px, self.m2d.db_index, self.m3d.query_px, self.m3d.world):
            h.update(np.ascontiguousarray(a).tobytes())
        return h.hexdigest()[:16]


def generate_matches(
    scene: SyntheticScene,
    query_index: int,
    retrieved,
    model: CorruptionModel,
    seed: int,
    views=None,
) -> QueryMatches:
    """Synthesize 2D-2D matches to the retrieved views and lift them to 2D-3D.

    ``retrieved`` lists positions into ``views`` (database views by
    default) in rank order. Exactly ``round(outlier_ratio * n)`` 2D-2D
    matches get a random database pixel. Each query feature keeps the
    lifting from its highest-ranked view that has one.
    """
    if len(retrieved) == 0:
        raise ValueError("retrieved must not be empty")
    if views is None:
        views = db_views(scene)
    spec = scene.spec
    rng = np.random.default_rng(np.random.SeedSequence([seed, query_index, 0x3A7C]))
    q = scene.queries[query_index]
    q_ids, q_uv = _visible_ids(q.pose, q.K, scene)
    q_px = {int(p): q_uv[p] + model.pixel_sigma * rng.normal(0.0, 1.0, 2) for p in q_ids}
    q_mask = np.zeros(len(scene.points_gt), dtype=bool)
    q_mask[q_ids] = True

    qp, dp, di, feat, lifts, depth = [], [], [], [], [], []
    refs = [views[r] for r in retrieved]
    for rank, v in enumerate(refs):
        sel = np.flatnonzero(q_mask[v.point_ids])
        if len(sel):
            ok = matchable_mask(q.pose.center, v.true_pose.center, scene.points_gt[v.point_ids[sel]], spec)
            sel = sel[ok]
        if len(sel) > spec.max_matches_per_pair:
            sel = np.sort(rng.choice(sel, size=spec.max_matches_per_pair, replace=False))
        if len(sel) == 0:
            continue
        ids = v.point_ids[sel]
        px = v.pixels[sel]
        if not v.noisy and model.pixel_sigma > 0:
            px = px + model.pixel_sigma * rng.normal(0.0, 1.0, px.shape)
        qp.append(np.array([q_px[int(p)] for p in ids]))
        dp.append(px)
        di.append(np.full(len(ids), rank))
        feat.append(ids)
        lifts.append(v.lift[sel])
        depth.append(v.true_pose.transform(scene.points_gt[ids])[:, 2])

    database = Database([v.id for v in refs], [v.pose for v in refs], [v.K for v in refs])
    if not qp:
        empty = np.zeros(0, dtype=np.int64)
        return QueryMatches(Matches2D.empty(), Matches3D.empty(), database, empty, empty,
                            np.zeros(0, bool), np.zeros(0, bool), q_px)

    qp = np.concatenate(qp)
    dp = np.concatenate(dp)
    di = np.concatenate(di)
    feat = np.concatenate(feat)
    lifts = np.concatenate(lifts)
    depth = np.concatenate(depth)

    n = len(qp)
    outlier = np.zeros(n, dtype=bool)
    n_out = int(round(model.outlier_ratio * n))
    if n_out:
        idx = rng.permutation(n)[:n_out]
        outlier[idx] = True
        for i in idx:
            K = refs[di[i]].K
            dp[i] = [rng.uniform(0, K.width), rng.uniform(0, K.height)]
            # a random pixel lifts to whatever surface lies at a similar depth
            lifts[i] = backproject(refs[di[i]].true_pose, K, dp[i], depth[i])

    # one lifting per query feature, from the highest-ranked view
    has_lift = np.all(np.isfinite(lifts), axis=1)
    order = np.lexsort((di, feat))
    chosen = {}
    for i in order:
        if has_lift[i] and int(feat[i]) not in chosen:
            chosen[int(feat[i])] = i
    lifted = np.array(sorted(chosen.values()), dtype=np.int64)
    if len(lifted) and model.drop_3d_fraction > 0:
        n_drop = int(round(model.drop_3d_fraction * len(lifted)))
        drop = rng.permutation(len(lifted))[:n_drop]
        lifted = np.delete(lifted, drop)
    lifted = np.sort(lifted)
    world = lifts[lifted]
    outlier_3d = outlier[lifted]
    n_bad = int(round(model.outlier_ratio_3d * len(lifted)))
    if n_bad:
        # gross lifting errors: the feature is attached to another visible surface point
        bad = rng.permutation(len(lifted))[:n_bad]
        others = rng.choice(q_ids, size=n_bad)
        same = others == feat[lifted[bad]]
        others[same] = q_ids[(np.searchsorted(q_ids, others[same]) + 1) % len(q_ids)]
        world[bad] = scene.points_obs[others]
        outlier_3d[bad] = True

    m2d = Matches2D(qp, dp, di)
    m3d = Matches3D(qp[lifted], world)
    return QueryMatches(m2d, m3d, database, feat, feat[lifted], outlier, outlier_3d, q_px)


def filter_points(matches: QueryMatches, re_thr: float, min_count: int, rel_thr: float | None = None) -> QueryMatches:
    """Drop 2D-3D matches whose 3D point is inconsistent across views.

    Each lifted point is projected into every retrieved view where its
    query feature was matched; it survives when it reprojects within
    ``re_thr`` pixels in at least ``min_count`` of them and, if given, in
    at least ``rel_thr`` of those views.
    """
    if re_thr <= 0:
        raise ValueError("re_thr must be positive")
    m2d, db = matches.m2d, matches.database
    keep = np.zeros(len(matches.m3d), dtype=bool)
    by_feature = {}
    for i, f in enumerate(matches.feature_2d):
        by_feature.setdefault(int(f), []).append(i)
    for j, (f, X) in enumerate(zip(matches.feature_3d, matches.m3d.world)):
        rows = np.array(by_feature.get(int(f), []), dtype=np.int64)
        if len(rows) == 0:
            continue
        count = 0
        for r in rows:
            pose = db.poses[m2d.db_index[r]]
            uv, z = project_points(pose, db.intrinsics[m2d.db_index[r]], X[None, :])
            if z[0] > 0 and np.linalg.norm(uv[0] - m2d.db_px[r]) < re_thr:
                count += 1
        ok = count >= min_count
        if rel_thr is not None:
            ok &= count >= rel_thr * len(rows)
        keep[j] = ok
    return matches.with_3d(np.flatnonzero(keep))
