"""File formats: scene JSON, per-query results CSV, flat JSON config, report CSV."""

from __future__ import annotations

import csv
import json
from dataclasses import fields
from pathlib import Path

import numpy as np

from .bench import RESULT_COLUMNS, Cell, FilterConfig, Method, QueryRecord, RecallReport, STANDARD_METHODS
from .estimators import EstimatorConfig
from .geometry import Intrinsics, Pose
from .metrics import PoseError
from .refine import RefineConfig, RefineStrategy
from .scene import CorruptionModel, DbImage, Layout, QueryImage, SceneSpec, SparsityConfig, SyntheticScene
from .scoring import ScoringFunction

SCENE_VERSION = 1


class DataError(ValueError):
    """Malformed or inconsistent input file."""


# ---------------------------------------------------------------------------
# scene files
# ---------------------------------------------------------------------------


def _camera(pose: Pose, K: Intrinsics):
    return {
        "q_wxyz": pose.quaternion().tolist(),
        "t_xyz": pose.t.tolist(),
        "fx": K.fx, "fy": K.fy, "cx": K.cx, "cy": K.cy,
        "width": K.width, "height": K.height,
    }


def _spec_dict(spec: SceneSpec):
    d = {f.name: getattr(spec, f.name) for f in fields(spec)}
    d["layout"] = spec.layout.value
    return d


def scene_to_dict(scene: SyntheticScene) -> dict:
    visibility = [[] for _ in range(len(scene.points_gt))]
    for p, im, uv in zip(scene.obs_point, scene.obs_image, scene.obs_px):
        visibility[int(p)].append({"db": int(scene.db_images[int(im)].id), "px": uv.tolist()})
    return {
        "version": SCENE_VERSION,
        "spec": _spec_dict(scene.spec),
        "db_images": [
            {"id": int(im.id), **_camera(im.pose, im.K), "capture_index": int(im.capture_index),
             "depth_bias": float(b)}
            for im, b in zip(scene.db_images, scene.depth_bias)
        ],
        "points_gt": scene.points_gt.tolist(),
        "points_obs": scene.points_obs.tolist(),
        "normals": scene.normals.tolist(),
        "point_available": [bool(a) for a in scene.point_available],
        "visibility": visibility,
        "queries": [{**_camera(q.pose, q.K), "capture_index": int(q.capture_index)} for q in scene.queries],
    }


def _read_camera(d):
    K = Intrinsics(d["fx"], d["fy"], d["cx"], d["cy"], d.get("width", 640), d.get("height", 480))
    return Pose.from_quaternion(d["q_wxyz"], d["t_xyz"]), K


def scene_from_dict(d: dict) -> SyntheticScene:
    try:
        if d.get("version") != SCENE_VERSION:
            raise DataError(f"unsupported scene version {d.get('version')!r}")
        spec_d = dict(d["spec"])
        spec_d["layout"] = Layout(spec_d["layout"])
        spec = SceneSpec(**spec_d)
        db, bias = [], []
        for e in d["db_images"]:
            pose, K = _read_camera(e)
            db.append(DbImage(e["id"], pose, K, e["capture_index"]))
            bias.append(e.get("depth_bias", 1.0))
        position = {im.id: k for k, im in enumerate(db)}
        obs_point, obs_image, obs_px = [], [], []
        for p, entries in enumerate(d["visibility"]):
            for v in entries:
                obs_point.append(p)
                obs_image.append(position[v["db"]])
                obs_px.append(v["px"])
        # keep visibility grouped by image, as generated
        order = np.lexsort((np.array(obs_point), np.array(obs_image))) if obs_point else np.zeros(0, int)
        queries = []
        for e in d["queries"]:
            pose, K = _read_camera(e)
            queries.append(QueryImage(pose, K, e["capture_index"]))
        points_gt = np.array(d["points_gt"], dtype=float).reshape(-1, 3)
        points_obs = np.array(d["points_obs"], dtype=float).reshape(-1, 3)
        if points_obs.shape != points_gt.shape:
            raise DataError("points_obs and points_gt differ in length")
        return SyntheticScene(
            spec=spec,
            db_images=tuple(db),
            points_gt=points_gt,
            normals=np.array(d["normals"], dtype=float).reshape(-1, 3),
            points_obs=points_obs,
            point_available=np.array(d["point_available"], dtype=bool),
            queries=tuple(queries),
            obs_point=np.array(obs_point, dtype=np.int64)[order],
            obs_image=np.array(obs_image, dtype=np.int64)[order],
            obs_px=np.array(obs_px, dtype=float).reshape(-1, 2)[order],
            depth_bias=np.array(bias, dtype=float),
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"malformed scene file: {exc}") from exc


def save_scene(scene: SyntheticScene, path) -> None:
    Path(path).write_text(json.dumps(scene_to_dict(scene), separators=(",", ":")))


def load_scene(path) -> SyntheticScene:
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not JSON ({exc})") from exc
    return scene_from_dict(d)


# ---------------------------------------------------------------------------
# results and reports
# ---------------------------------------------------------------------------


def write_results(records, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(RESULT_COLUMNS)
        for r in records:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r.row()])


def read_results(path) -> list:
    out = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != RESULT_COLUMNS:
            raise DataError(f"{path}: unexpected columns {reader.fieldnames}")
        try:
            for row in reader:
                out.append(QueryRecord(
                    row["scene_id"], row["cell_id"], row["method"], int(row["query_index"]),
                    bool(int(row["success"])), PoseError(float(row["trans_err_m"]), float(row["rot_err_deg"])),
                    int(row["i3d"]), int(row["i2d"]), int(row["n3d"]), int(row["n2d"]),
                    int(row["iterations"]), float(row["wall_ms"]),
                ))
        except ValueError as exc:
            raise DataError(f"{path}: {exc}") from exc
    return out


def write_report(report: RecallReport, path) -> None:
    labels = [f"recall@{t:g}m_{r:g}deg" for t, r in report.thresholds]
    cfg = json.dumps(report.config, sort_keys=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["cell_id", "method", "num_queries", *labels, "median_trans_m", "median_rot_deg", "config"])
        for r in report.rows:
            w.writerow([r.cell_id, r.method, r.num_queries, *[f"{x:.4f}" for x in r.recalls],
                        f"{r.median_trans_m:.6g}", f"{r.median_rot_deg:.6g}", cfg])


def format_report(report: RecallReport) -> str:
    labels = [f"{t:g}m/{r:g}deg" for t, r in report.thresholds]
    head = f"{'cell':<16} {'method':<34} {'n':>4} " + " ".join(f"{x:>12}" for x in labels) + "  med_t   med_r"
    lines = [head]
    for r in report.rows:
        rec = " ".join(f"{100 * x:>11.1f}%" for x in r.recalls)
        lines.append(f"{r.cell_id:<16} {r.method:<34} {r.num_queries:>4} {rec}  {r.median_trans_m:.3g}  {r.median_rot_deg:.3g}")
    return "\n".join(lines)


# ---------------------------------------------------------------------------
# flat config
# ---------------------------------------------------------------------------

_SCENE_KEYS = {f.name for f in fields(SceneSpec)} - {"seed"}
_EST_KEYS = {f.name for f in fields(EstimatorConfig)} - {"lo", "scoring", "rng_seed"}
_LO_KEYS = {"lo_" + f.name for f in fields(RefineConfig)}
_CORRUPTION_KEYS = {f.name for f in fields(CorruptionModel)}
_BENCH_DEFAULTS = {
    "seed": 0,
    "scoring": ScoringFunction.MULT_MSAC.value,
    "keep_every_n": 1,
    "sparsity_grid": None,
    "methods": [m.name for m in STANDARD_METHODS],
    "retrieval_k": 20,
    "filter_re_thr": None,
    "filter_min_count": 3,
    "filter_rel_thr": None,
    "workers": 1,
    "record_timing": False,
    "mode": "Continuous",
    "queries": None,
}
CONFIG_KEYS = _SCENE_KEYS | _EST_KEYS | _LO_KEYS | _CORRUPTION_KEYS | set(_BENCH_DEFAULTS)


def load_config(path) -> dict:
    """Read a flat JSON object of configuration values."""
    if path is None:
        return {}
    try:
        d = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: not JSON ({exc})") from exc
    if not isinstance(d, dict):
        raise DataError(f"{path}: config must be a JSON object")
    unknown = set(d) - CONFIG_KEYS
    if unknown:
        raise DataError(f"{path}: unknown config keys {sorted(unknown)}")
    return d


class BenchSetup:
    """Typed view of a flat config: scene spec, estimator, corruption, grid."""

    def __init__(self, flat: dict, seed: int | None = None):
        d = dict(_BENCH_DEFAULTS)
        d.update(flat)
        if seed is not None:
            d["seed"] = seed
        try:
            self.seed = int(d["seed"])
            scene = {k: d[k] for k in _SCENE_KEYS if k in d}
            if "layout" in scene:
                scene["layout"] = Layout(scene["layout"])
            self.spec = SceneSpec(seed=self.seed, **scene)
            lo = {k[3:]: d[k] for k in _LO_KEYS if k in d}
            if "strategy" in lo:
                lo["strategy"] = RefineStrategy(lo["strategy"])
            est = {k: d[k] for k in _EST_KEYS if k in d}
            self.estimator = EstimatorConfig(
                scoring=ScoringFunction(d["scoring"]), lo=RefineConfig(**lo), rng_seed=self.seed, **est
            )
            self.corruption = CorruptionModel(**{k: d[k] for k in _CORRUPTION_KEYS if k in d})
            grid = d["sparsity_grid"] or [d["keep_every_n"]]
            self.sparsities = [SparsityConfig(int(n)) for n in grid]
            self.methods = [Method.parse(m) for m in d["methods"]]
            self.filter = None
            if d["filter_re_thr"] is not None:
                self.filter = FilterConfig(float(d["filter_re_thr"]), int(d["filter_min_count"]),
                                           None if d["filter_rel_thr"] is None else float(d["filter_rel_thr"]))
            self.k = int(d["retrieval_k"])
            self.workers = int(d["workers"])
            self.record_timing = bool(d["record_timing"])
            self.mode = str(d["mode"])
            self.queries = None if d["queries"] is None else [int(q) for q in d["queries"]]
        except (TypeError, ValueError) as exc:
            raise DataError(f"invalid config: {exc}") from exc

    def cells(self):
        tag = "f" if self.filter else "u"
        return [
            Cell(f"N{s.keep_every_n}_{tag}", self.corruption, s, self.filter)
            for s in self.sparsities
        ]
