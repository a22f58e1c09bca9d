from dataclasses import replace

import numpy as np
import pytest

from adaptloc.errors import GenerationFailed
from adaptloc.geometry import project_points, reprojection_errors
from adaptloc.scene import (
    CorruptionModel,
    Layout,
    SceneSpec,
    SparsityConfig,
    corrupt,
    db_views,
    filter_points,
    generate_matches,
    generate_scene,
    retrieve,
    sparsify,
    visible_mask,
)
from adaptloc.scoring import residuals_2d

SMALL = SceneSpec(num_db=60, num_points=1500, num_queries=12, seed=3)


@pytest.fixture(scope="module")
def scene():
    return generate_scene(SMALL)


def test_deterministic(scene):
    again = generate_scene(SMALL)
    np.testing.assert_array_equal(again.points_gt, scene.points_gt)
    np.testing.assert_array_equal(again.obs_px, scene.obs_px)
    for a, b in zip(again.queries, scene.queries):
        np.testing.assert_array_equal(a.pose.R, b.pose.R)
        np.testing.assert_array_equal(a.pose.t, b.pose.t)


def test_street_advances_along_path():
    s = generate_scene(SceneSpec(num_db=100, num_points=1500, num_queries=5, seed=1))
    x = [im.pose.center[0] for im in s.db_images]
    assert np.all(np.diff(x) > 0)


def test_visibility_reprojects(scene):
    for pos, im in enumerate(scene.db_images):
        ids, px = scene.observations(pos)
        Xc = scene.points_gt[ids] @ im.pose.R.T + im.pose.t
        u = im.K.fx * Xc[:, 0] / Xc[:, 2] + im.K.cx
        v = im.K.fy * Xc[:, 1] / Xc[:, 2] + im.K.cy
        assert np.max(np.abs(np.column_stack([u, v]) - px), initial=0.0) < 1e-9


def test_query_visibility_quota(scene):
    for q in scene.queries:
        _, z = project_points(q.pose, q.K, scene.points_gt)
        shared = 0
        for pos in range(scene.num_db):
            ids, _ = scene.observations(pos)
            uv, zq = project_points(q.pose, q.K, scene.points_gt[ids])
            shared += np.sum((zq > 1) & q.K.in_image(uv)) >= 30
        assert shared >= 3


def test_room_layout():
    s = generate_scene(SceneSpec(num_db=40, num_points=1500, num_queries=5, layout=Layout.ROOM, seed=2))
    assert s.num_db == 40 and len(s.queries) == 5


def test_generation_failure():
    with pytest.raises(GenerationFailed):
        generate_scene(SceneSpec(num_db=5, num_points=10, num_queries=1, seed=0), max_attempts=3)


def test_sparsify_identity(scene):
    assert sparsify(scene, SparsityConfig(1)) is scene


def test_sparsify_keeps_every_nth():
    s = generate_scene(SceneSpec(num_db=231, num_points=2000, num_queries=3, seed=4))
    kept = sparsify(s, SparsityConfig(50))
    assert [im.capture_index for im in kept.db_images] == [0, 50, 100, 150, 200]


def test_available_points_non_increasing(scene):
    counts = [sparsify(scene, SparsityConfig(n)).point_available.sum() for n in (1, 2, 5, 10, 20)]
    assert all(b <= a for a, b in zip(counts, counts[1:]))
    assert counts[-1] < counts[0]


def test_corrupt_zero_model(scene):
    c = corrupt(scene, CorruptionModel(), seed=0)
    np.testing.assert_array_equal(c.points_obs, c.points_gt)


def test_point_noise_chi_mean():
    s = generate_scene(SceneSpec(num_db=60, num_points=10000, num_queries=3, seed=5))
    c = corrupt(s, CorruptionModel(point_noise=0.05), seed=1)
    mean = np.linalg.norm(c.points_obs - c.points_gt, axis=1).mean()
    assert mean == pytest.approx(0.05 * np.sqrt(8 / np.pi), rel=0.05)


def test_depth_bias_lifts_differ(scene):
    c = corrupt(scene, CorruptionModel(depth_bias=0.1), seed=0)
    views = db_views(c)
    a, b = views[0], views[1]
    common = np.intersect1d(a.point_ids, b.point_ids)
    common = common[c.point_available[common]][:1]
    Xa = a.lift[np.searchsorted(a.point_ids, common)]
    Xb = b.lift[np.searchsorted(b.point_ids, common)]
    assert np.linalg.norm(Xa - Xb) > 1e-6


def test_retrieve_colocated_first(scene):
    qi = 0
    pos = int(np.argmin([np.linalg.norm(im.pose.center - scene.queries[qi].pose.center) for im in scene.db_images]))
    # place a copy of the query camera into the database
    moved = list(scene.db_images)
    moved[pos] = replace(moved[pos], pose=scene.queries[qi].pose)
    s2 = generate_like(scene, moved)
    assert retrieve(s2, qi, 5)[0] == pos


def generate_like(scene, db_images):
    """Scene with new db poses; visibility recomputed from ground truth."""
    pts, img, px = [], [], []
    for pos, im in enumerate(db_images):
        mask, uv = visible_mask(im.pose, im.K, scene.points_gt, scene.normals, scene.spec)
        ids = np.flatnonzero(mask)
        pts.append(ids)
        img.append(np.full(len(ids), pos))
        px.append(uv[ids])
    return replace(scene, db_images=tuple(db_images), obs_point=np.concatenate(pts),
                   obs_image=np.concatenate(img), obs_px=np.concatenate(px))


def test_retrieve_all_when_k_large(scene):
    assert sorted(retrieve(scene, 1, 10**6)) == list(range(scene.num_db))


def test_retrieve_matches_brute_force(scene):
    for qi in range(3):
        q = scene.queries[qi]
        uv, z = project_points(q.pose, q.K, scene.points_gt)
        to_cam = q.pose.center - scene.points_gt
        cos = np.sum(to_cam * scene.normals, axis=1) / np.linalg.norm(to_cam, axis=1)
        spec = scene.spec
        seen = (z > spec.near) & (z < spec.far) & q.K.in_image(uv, 2.0) & (cos > np.cos(np.radians(spec.max_incidence_deg)))
        scores = []
        for pos, im in enumerate(scene.db_images):
            ids, _ = scene.observations(pos)
            shared = sum(1 for p in ids if seen[p])
            scores.append((-shared, np.linalg.norm(im.pose.center - q.pose.center), pos))
        expect = [p for _, _, p in sorted(scores)[:10]]
        assert retrieve(scene, qi, 10) == expect


def test_zero_noise_matches_are_exact(scene):
    qi = 2
    m = generate_matches(scene, qi, retrieve(scene, qi, 10), CorruptionModel(), seed=0)
    gt = scene.queries[qi].pose
    assert len(m.m2d) > 0 and len(m.m3d) > 0
    np.testing.assert_allclose(m.m3d.world, scene.points_gt[m.feature_3d], atol=1e-12)
    assert np.max(reprojection_errors(gt, scene.queries[qi].K, m.m3d)) < 1e-9
    assert np.max(residuals_2d(gt, scene.queries[qi].K, m.m2d, m.database)) < 1e-12


def test_outlier_count_is_exact(scene):
    qi = 3
    m = generate_matches(scene, qi, retrieve(scene, qi, 20), CorruptionModel(outlier_ratio=0.3), seed=0)
    assert m.outlier_2d.sum() == round(0.3 * len(m.m2d))


def test_drop_all_3d(scene):
    qi = 4
    r = retrieve(scene, qi, 10)
    full = generate_matches(scene, qi, r, CorruptionModel(), seed=0)
    none = generate_matches(scene, qi, r, CorruptionModel(drop_3d_fraction=1.0), seed=0)
    assert len(none.m3d) == 0
    np.testing.assert_array_equal(none.m2d.query_px, full.m2d.query_px)
    np.testing.assert_array_equal(none.m2d.db_px, full.m2d.db_px)


def test_lifting_deduplicated(scene):
    qi = 5
    m = generate_matches(scene, qi, retrieve(scene, qi, 20), CorruptionModel(), seed=0)
    assert len(np.unique(m.feature_3d)) == len(m.feature_3d)


def test_filter_keeps_exact_geometry(scene):
    qi = 6
    m = generate_matches(scene, qi, retrieve(scene, qi, 20), CorruptionModel(), seed=0)
    f = filter_points(m, 2.0, 1, 0.8)
    assert len(f.m3d) == len(m.m3d)


def test_filter_min_count(scene):
    qi = 7
    m = generate_matches(scene, qi, retrieve(scene, qi, 20), CorruptionModel(), seed=0)
    counts = {int(f): int(np.sum(m.feature_2d == f)) for f in m.feature_3d}
    f = filter_points(m, 4.0, 3)
    expect = sum(1 for c in counts.values() if c >= 3)
    assert len(f.m3d) == expect


def test_filter_lowers_cost_under_depth_noise():
    s = corrupt(generate_scene(SceneSpec(num_db=80, num_points=2500, num_queries=8, seed=6)),
                CorruptionModel(depth_bias=0.1), seed=0)
    model = CorruptionModel(pixel_sigma=1.0, depth_bias=0.1)
    t = 4.0
    compared = 0
    for qi in range(4):
        m = generate_matches(s, qi, retrieve(s, qi, 20), model, seed=0)
        f = filter_points(m, 2.0, 3, 0.8)
        gt, K = s.queries[qi].pose, s.queries[qi].K

        def cost(mm):
            e2 = reprojection_errors(gt, K, mm.m3d) ** 2
            return np.minimum(e2, t * t).sum() / max(len(e2), 1)

        if len(f.m3d):
            assert cost(f) < cost(m)
            compared += 1
    assert compared >= 2
