import json

import numpy as np
import pytest

from adaptloc import io
from adaptloc.bench import (
    Cell,
    FilterConfig,
    Method,
    build_report,
    processing_order,
    run_continuous,
    run_sweep,
)
from adaptloc.estimators import EstimatorConfig
from adaptloc.geometry import Pose, so3_exp
from adaptloc.metrics import pose_error, recall
from adaptloc.scene import CorruptionModel, SceneSpec, SparsityConfig, generate_scene
from adaptloc.scoring import ScoringFunction

TINY = SceneSpec(num_db=40, num_points=1500, num_queries=6, seed=1)
NOISY = CorruptionModel(pixel_sigma=1.0, outlier_ratio=0.2)
METHODS = [Method("P3P"), Method("E5p1"), Method("Adaptive"), Method("Select"), Method("Oracle")]


@pytest.fixture(scope="module")
def sweep():
    return run_sweep(TINY, [Cell("a", NOISY), Cell("b", NOISY, SparsityConfig(4))], METHODS, k=10)


def test_pose_error_examples():
    rng = np.random.default_rng(0)
    gt = Pose.from_center(so3_exp(rng.normal(size=3)), rng.normal(size=3))
    assert pose_error(gt, gt) == (0.0, 0.0)
    flipped = Pose.from_center(so3_exp(np.pi * np.array([0.0, 1.0, 0.0])) @ gt.R, gt.center)
    e = pose_error(flipped, gt)
    assert e.translation_m == pytest.approx(0.0, abs=1e-12)
    assert e.rotation_deg == pytest.approx(180.0)


def test_pose_error_matches_quaternion_angle():
    rng = np.random.default_rng(1)
    for _ in range(100):
        a = Pose.from_center(so3_exp(rng.normal(size=3)), rng.normal(size=3))
        b = Pose.from_center(so3_exp(rng.normal(size=3)), rng.normal(size=3))
        qa, qb = a.quaternion(), b.quaternion()
        angle = np.degrees(2 * np.arccos(min(1.0, abs(qa @ qb))))
        assert pose_error(a, b).rotation_deg == pytest.approx(angle, abs=1e-6)


def test_recall_counts_thresholds():
    errs = [pose_error(Pose.identity(), Pose.identity())] * 3
    assert recall(errs, 0.1, 1.0) == 1.0
    assert recall([], 0.1, 1.0) == 0.0


def test_method_names_round_trip():
    for m in METHODS + [Method("Adaptive", ScoringFunction.SUM_INLIERS), Method("Select", alpha=0.6)]:
        assert Method.parse(m.name) == m


def test_sweep_rows_and_oracle_dominance(sweep):
    assert len(sweep.rows) == 2 * len(METHODS)
    for cell in ("a", "b"):
        o = sweep.row("Oracle", cell).recalls
        for name in ("P3P", "E5p1"):
            assert all(x >= y for x, y in zip(o, sweep.row(name, cell).recalls))
        by_q = {}
        for r in sweep.records:
            if r.cell_id == cell:
                by_q.setdefault(r.query_index, {})[r.method] = r.error.absolute()
        for errs in by_q.values():
            assert errs["Oracle"] <= min(errs["P3P"], errs["E5p1"])


def test_methods_share_match_sets(sweep):
    digests = {}
    for r in sweep.records:
        digests.setdefault((r.cell_id, r.query_index), set()).add(r.match_digest)
    assert all(len(d) == 1 for d in digests.values())


def test_noise_free_sanity():
    rep = run_sweep(TINY, [Cell("clean")], [Method("P3P"), Method("E5p1"), Method("Adaptive")], k=10)
    for row in rep.rows:
        assert row.recalls[-1] == 1.0


def test_sweep_is_deterministic(tmp_path):
    cells = [Cell("a", NOISY)]
    a = run_sweep(TINY, cells, METHODS[:3], k=10)
    b = run_sweep(TINY, cells, METHODS[:3], k=10, workers=2)
    io.write_results(a.records, tmp_path / "a.csv")
    io.write_results(b.records, tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_results_round_trip(sweep, tmp_path):
    path = tmp_path / "r.csv"
    io.write_results(sweep.records, path)
    back = io.read_results(path)
    assert [r.row() for r in back] == [r.row() for r in sweep.records]
    assert [r.recalls for r in build_report(back).rows] == [r.recalls for r in sweep.rows]


def test_scene_round_trip(tmp_path):
    s = generate_scene(TINY)
    io.save_scene(s, tmp_path / "s.json")
    t = io.load_scene(tmp_path / "s.json")
    np.testing.assert_allclose(t.points_gt, s.points_gt)
    np.testing.assert_allclose(t.obs_px, s.obs_px)
    np.testing.assert_array_equal(t.obs_point, s.obs_point)
    for a, b in zip(t.db_images, s.db_images):
        np.testing.assert_allclose(a.pose.R, b.pose.R, atol=1e-12)
        np.testing.assert_allclose(a.pose.t, b.pose.t, atol=1e-12)


def test_malformed_inputs(tmp_path):
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(io.DataError):
        io.load_scene(bad)
    bad.write_text(json.dumps({"version": 99}))
    with pytest.raises(io.DataError):
        io.load_scene(bad)
    cfg = tmp_path / "c.json"
    cfg.write_text(json.dumps({"no_such_key": 1}))
    with pytest.raises(io.DataError):
        io.load_config(cfg)
    csv = tmp_path / "r.csv"
    csv.write_text("a,b\n1,2\n")
    with pytest.raises(io.DataError):
        io.read_results(csv)


def test_flat_config(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({
        "num_db": 40, "t2d": 3.0, "lo_max_iterations": 10, "pixel_sigma": 0.5,
        "sparsity_grid": [1, 5], "methods": ["P3P", "Adaptive(sum_msac,split)"],
        "filter_re_thr": 2.0, "filter_rel_thr": 0.8,
    }))
    setup = io.BenchSetup(io.load_config(path), seed=9)
    assert setup.spec.num_db == 40 and setup.spec.seed == 9
    assert setup.estimator.t2d == 3.0 and setup.estimator.lo.max_iterations == 10
    assert setup.corruption.pixel_sigma == 0.5
    assert [c.cell_id for c in setup.cells()] == ["N1_f", "N5_f"]
    assert setup.filter == FilterConfig(2.0, 3, 0.8)
    assert setup.methods[1].name == "Adaptive(sum_msac,split)"


def test_processing_order():
    assert processing_order([5, 1, 3, 8, 9], 4) == [2, 1, 0, 3, 4]


def test_continuous_without_queries_equals_static():
    s, _ = run_continuous(TINY, EstimatorConfig(), "Static", 0, NOISY, queries=[])
    c, state = run_continuous(TINY, EstimatorConfig(), "Continuous", 0, NOISY, queries=[])
    assert s.records == c.records == [] and state.extended == []


def test_continuous_grows_database():
    rep, state = run_continuous(TINY, EstimatorConfig(), "Continuous", 0, NOISY, SparsityConfig(4), k=10)
    successes = sum(r.success for r in rep.records)
    assert len(state.views) == len(state.db_views) + successes
    assert len(state.db_views) == 10
