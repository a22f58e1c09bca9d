"""Benchmark runner: method sweeps over corruption and sparsity grids,
the continuous-update protocol, and recall reports."""

from __future__ import annotations

import logging
import re
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from .estimators import EstimatorConfig, PoseResult, oracle, ransac_adaptive, ransac_e5p1, ransac_p3p, select
from .metrics import DEFAULT_THRESHOLDS, FAILED, PoseError, median_errors, pose_error, recalls
from .refine import RefineStrategy
from .scene import (
    CorruptionModel,
    ReferenceView,
    SceneSpec,
    SparsityConfig,
    SyntheticScene,
    corrupt,
    db_views,
    filter_points,
    generate_matches,
    generate_scene,
    retrieve,
    sparsify,
    visible_mask,
)
from .scoring import ScoringFunction

log = logging.getLogger(__name__)

RESULT_COLUMNS = (
    "scene_id", "cell_id", "method", "query_index", "success", "trans_err_m",
    "rot_err_deg", "i3d", "i2d", "n3d", "n2d", "iterations", "wall_ms",
)


# ---------------------------------------------------------------------------
# methods
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Method:
    kind: str  # P3P, E5p1, Adaptive, Select, Oracle
    scoring: ScoringFunction = ScoringFunction.MULT_MSAC
    lo: RefineStrategy = RefineStrategy.HYBRID
    alpha: float = 0.8

    def __post_init__(self):
        if self.kind not in ("P3P", "E5p1", "Adaptive", "Select", "Oracle"):
            raise ValueError(f"unknown method kind {self.kind!r}")

    @property
    def name(self) -> str:
        if self.kind == "Adaptive":
            return f"Adaptive({self.scoring.value},{self.lo.value})"
        if self.kind == "Select":
            return f"Select({self.alpha:g})"
        return self.kind

    @classmethod
    def parse(cls, text: str) -> "Method":
        text = text.strip()
        m = re.fullmatch(r"Adaptive(?:\((\w+)(?:,\s*(\w+))?\))?", text)
        if m:
            scoring = ScoringFunction(m.group(1)) if m.group(1) else ScoringFunction.MULT_MSAC
            lo = RefineStrategy(m.group(2)) if m.group(2) else RefineStrategy.HYBRID
            return cls("Adaptive", scoring, lo)
        m = re.fullmatch(r"Select(?:\(([0-9.eE+-]+)\))?", text)
        if m:
            return cls("Select", alpha=float(m.group(1)) if m.group(1) else 0.8)
        return cls(text)


STANDARD_METHODS = (
    Method("P3P"),
    Method("E5p1"),
    Method("Adaptive", ScoringFunction.MULT_MSAC),
    Method("Select"),
    Method("Oracle"),
)


@dataclass(frozen=True)
class FilterConfig:
    re_thr: float = 2.0
    min_count: int = 3
    rel_thr: float | None = 0.8


@dataclass(frozen=True)
class Cell:
    cell_id: str
    corruption: CorruptionModel = field(default_factory=CorruptionModel)
    sparsity: SparsityConfig = field(default_factory=SparsityConfig)
    filter: FilterConfig | None = None


# ---------------------------------------------------------------------------
# per-query records and reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class QueryRecord:
    scene_id: str
    cell_id: str
    method: str
    query_index: int
    success: bool
    error: PoseError
    i3d: int
    i2d: int
    n3d: int
    n2d: int
    iterations: int
    wall_ms: float
    match_digest: str = ""

    def row(self):
        return (
            self.scene_id, self.cell_id, self.method, self.query_index, int(self.success),
            self.error.translation_m, self.error.rotation_deg, self.i3d, self.i2d,
            self.n3d, self.n2d, self.iterations, self.wall_ms,
        )


@dataclass(frozen=True)
class ReportRow:
    cell_id: str
    method: str
    recalls: tuple
    median_trans_m: float
    median_rot_deg: float
    num_queries: int


@dataclass
class RecallReport:
    rows: list
    records: list
    thresholds: tuple = DEFAULT_THRESHOLDS
    config: dict = field(default_factory=dict)

    def errors(self, method: str, cell_id: str | None = None):
        return [
            r.error for r in self.records
            if r.method == method and (cell_id is None or r.cell_id == cell_id)
        ]

    def row(self, method: str, cell_id: str) -> ReportRow:
        for r in self.rows:
            if r.method == method and r.cell_id == cell_id:
                return r
        raise KeyError((method, cell_id))


def build_report(records, thresholds=DEFAULT_THRESHOLDS, config=None) -> RecallReport:
    """Aggregate records into one row per (cell, method), in first-seen order."""
    groups = {}
    for r in records:
        groups.setdefault((r.cell_id, r.method), []).append(r.error)
    rows = []
    for (cell_id, method), errs in groups.items():
        mt, mr = median_errors(errs)
        rows.append(ReportRow(cell_id, method, tuple(recalls(errs, thresholds)), mt, mr, len(errs)))
    return RecallReport(rows, list(records), tuple(thresholds), dict(config or {}))


# ---------------------------------------------------------------------------
# single-query localization
# ---------------------------------------------------------------------------


def query_seed(seed: int, query_index: int) -> int:
    """Per-query estimator seed derived from the run seed."""
    return int(np.random.SeedSequence([seed, query_index]).generate_state(1, np.uint64)[0])


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, 1000.0 * (time.perf_counter() - t0)


def localize_query(matches, K_q, gt, methods: Sequence[Method], cfg: EstimatorConfig, seed: int):
    """Run every method on one shared match set.

    Returns a list of ``(method_name, PoseResult, error, wall_ms, digest)``;
    the digest of the match buffers is recomputed after each method to
    show that methods cannot alter what the next one consumes.
    """
    cfg = replace(cfg, rng_seed=seed)
    m3d, m2d, db = matches.m3d, matches.m2d, matches.database
    cache = {}

    def base(kind):
        if kind not in cache:
            if kind == "P3P":
                cache[kind] = _timed(lambda: ransac_p3p(m3d, K_q, cfg))
            else:
                cache[kind] = _timed(lambda: ransac_e5p1(m2d, db, K_q, cfg))
        return cache[kind]

    out = []
    for method in methods:
        if method.kind in ("P3P", "E5p1"):
            res, ms = base(method.kind)
        elif method.kind == "Adaptive":
            mcfg = replace(cfg, scoring=method.scoring, lo=replace(cfg.lo, strategy=method.lo))
            res, ms = _timed(lambda: ransac_adaptive(m3d, m2d, db, K_q, mcfg))
        else:
            (p, tp), (e, te) = base("P3P"), base("E5p1")
            if method.kind == "Select":
                scfg = replace(cfg, select_alpha=method.alpha)
                res, ts = _timed(lambda: select(p, e, m2d, db, K_q, scfg))
            else:
                res, ts = _timed(lambda: oracle(p, e, gt))
            ms = tp + te + ts
        err = pose_error(res.pose, gt) if res.success else FAILED
        out.append((method.name, res, err, ms, matches.buffer_digest()))
    return out


def _record(scene_id, cell_id, qi, name, res: PoseResult, err, ms, digest, record_timing):
    st = res.stats
    return QueryRecord(
        scene_id, cell_id, name, qi, bool(res.success), err,
        st.i3d, st.i2d, st.n3d, st.n2d, res.iterations_run,
        round(ms, 3) if record_timing else 0.0, digest,
    )


# ---------------------------------------------------------------------------
# sweeps
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class _CellContext:
    scene: SyntheticScene
    views: list
    scene_id: str
    cell: Cell
    methods: tuple
    cfg: EstimatorConfig
    seed: int
    k: int
    record_timing: bool


_CTX = None


def _set_context(ctx):
    global _CTX
    _CTX = ctx


def _prepare_matches(scene, views, qi, corruption, seed, k, filt):
    retrieved = retrieve(scene, qi, k, views)
    matches = generate_matches(scene, qi, retrieved, corruption, seed, views)
    if filt is not None:
        matches = filter_points(matches, filt.re_thr, filt.min_count, filt.rel_thr)
    return matches


def _run_query(qi, ctx=None):
    ctx = ctx or _CTX
    scene, cell = ctx.scene, ctx.cell
    q = scene.queries[qi]
    matches = _prepare_matches(scene, ctx.views, qi, cell.corruption, ctx.seed, ctx.k, cell.filter)
    digest = matches.buffer_digest()
    out = []
    for name, res, err, ms, after in localize_query(matches, q.K, q.pose, ctx.methods, ctx.cfg, query_seed(ctx.seed, qi)):
        if after != digest:
            raise RuntimeError(f"{name} modified the shared match set")
        out.append(_record(ctx.scene_id, cell.cell_id, qi, name, res, err, ms, digest, ctx.record_timing))
    return out


def scene_id(spec: SceneSpec) -> str:
    return f"{spec.layout.value}_s{spec.seed}"


def prepare_cell(base: SyntheticScene, cell: Cell, seed: int) -> SyntheticScene:
    return corrupt(sparsify(base, cell.sparsity), cell.corruption, seed)


def run_sweep(
    spec: SceneSpec,
    cells: Sequence[Cell],
    methods: Sequence[Method] = STANDARD_METHODS,
    cfg: EstimatorConfig = EstimatorConfig(),
    seed: int = 0,
    k: int = 20,
    thresholds=DEFAULT_THRESHOLDS,
    workers: int = 1,
    record_timing: bool = False,
    queries: Sequence[int] | None = None,
    base: SyntheticScene | None = None,
) -> RecallReport:
    """Localize every query of every cell with every method.

    Matches are generated once per query per cell and shared by all
    methods. Results are assembled in (cell, query, method) order, so
    the report does not depend on ``workers``. ``base`` overrides the
    scene generated from ``spec``.
    """
    if not cells or not methods:
        raise ValueError("cells and methods must be non-empty")
    if base is None:
        base = generate_scene(spec)
    spec = base.spec
    sid = scene_id(spec)
    idx = list(range(len(base.queries))) if queries is None else list(queries)
    records = []
    for cell in cells:
        scene = prepare_cell(base, cell, seed)
        ctx = _CellContext(scene, db_views(scene), sid, cell, tuple(methods), cfg, seed, k, record_timing)
        if workers > 1:
            with ProcessPoolExecutor(workers, initializer=_set_context, initargs=(ctx,)) as ex:
                chunks = list(ex.map(_run_query, idx, chunksize=max(1, len(idx) // (4 * workers))))
        else:
            chunks = [_run_query(qi, ctx) for qi in idx]
        for recs in chunks:
            records.extend(recs)
        log.info("cell %s: %d queries, match digest of first query %s", cell.cell_id, len(idx),
                 chunks[0][0].match_digest if chunks and chunks[0] else "-")
    config = sweep_config(spec, cells, methods, cfg, seed, k)
    return build_report(records, thresholds, config)


def sweep_config(spec, cells, methods, cfg, seed, k) -> dict:
    """Everything needed to re-run a sweep, as plain values."""

    def plain(v):
        if isinstance(v, dict):
            return {a: plain(b) for a, b in v.items()}
        if isinstance(v, (list, tuple)):
            return [plain(x) for x in v]
        if hasattr(v, "value"):
            return v.value
        return v

    return {
        "scene": plain(asdict(spec)),
        "cells": [plain(asdict(c)) for c in cells],
        "methods": [m.name for m in methods],
        "estimator": plain(asdict(cfg)),
        "seed": seed,
        "retrieval_k": k,
    }


# ---------------------------------------------------------------------------
# continuous localization
# ---------------------------------------------------------------------------


@dataclass
class ContinuousState:
    """Original database views plus entries for localized queries."""

    db_views: tuple
    extended: list = field(default_factory=list)
    order: list = field(default_factory=list)

    @property
    def views(self):
        return list(self.db_views) + self.extended

    def add(self, view: ReferenceView):
        self.extended.append(view)


def processing_order(query_capture: Sequence[int], reference_capture: int) -> list:
    """Queries captured before the reference are processed most-recent-first,
    the remaining ones oldest-first."""
    idx = np.arange(len(query_capture))
    cap = np.asarray(query_capture)
    early = idx[cap < reference_capture]
    late = idx[cap >= reference_capture]
    early = early[np.argsort(-cap[early], kind="stable")]
    late = late[np.argsort(cap[late], kind="stable")]
    return [int(i) for i in np.concatenate([early, late])]


def query_view(scene: SyntheticScene, qi: int, est_pose, matches, result: PoseResult) -> ReferenceView:
    """Extended-database entry for a localized query.

    Its features are the query's own keypoints; a feature carries a 3D
    point only when it was an inlier 2D-3D match of the final pose.
    """
    q = scene.queries[qi]
    ids = np.array(sorted(matches.query_features), dtype=np.int64)
    pixels = np.array([matches.query_features[int(p)] for p in ids]).reshape(-1, 2)
    lift = np.full((len(ids), 3), np.nan)
    if len(matches.m3d) and result.stats.n3d == len(matches.m3d):
        inl = result.stats.inlier_mask_3d
        pos = np.searchsorted(ids, matches.feature_3d[inl])
        lift[pos] = matches.m3d.world[inl]
    mask, _ = visible_mask(est_pose, q.K, scene.points_gt, scene.normals, scene.spec)
    return ReferenceView(f"q{qi}", est_pose, q.pose, q.K, ids, pixels, lift, np.flatnonzero(mask), noisy=True)


def run_continuous(
    spec: SceneSpec,
    cfg: EstimatorConfig,
    mode: str,
    seed: int,
    corruption: CorruptionModel = CorruptionModel(),
    sparsity: SparsityConfig = SparsityConfig(),
    method: Method = Method("Adaptive"),
    k: int = 20,
    thresholds=DEFAULT_THRESHOLDS,
    record_timing: bool = False,
    queries: Sequence[int] | None = None,
):
    """Localize queries in capture order, optionally growing the database.

    In ``Continuous`` mode each successful query joins the database with
    its estimated pose; retrieval keeps returning ``k`` views.
    Returns ``(report, state)``.
    """
    if mode not in ("Static", "Continuous"):
        raise ValueError("mode must be Static or Continuous")
    base = generate_scene(spec)
    scene = prepare_cell(base, Cell("continuous", corruption, sparsity), seed)
    state = ContinuousState(tuple(db_views(scene)))
    allowed = set(range(len(scene.queries)) if queries is None else queries)
    ref_capture = min((im.capture_index for im in scene.db_images), default=0)
    order = [qi for qi in processing_order([q.capture_index for q in scene.queries], ref_capture) if qi in allowed]
    state.order = order
    cell_id = f"{mode.lower()}_N{sparsity.keep_every_n}"
    name = f"{mode} {method.name}"
    records = []
    for qi in order:
        q = scene.queries[qi]
        views = state.views
        matches = _prepare_matches(scene, views, qi, corruption, seed, k, None)
        [(_, res, err, ms, digest)] = localize_query(matches, q.K, q.pose, [method], cfg, query_seed(seed, qi))
        records.append(_record(scene_id(spec), cell_id, qi, name, res, err, ms, digest, record_timing))
        if mode == "Continuous" and res.success:
            state.add(query_view(scene, qi, res.pose, matches, res))
    records.sort(key=lambda r: r.query_index)
    config = sweep_config(spec, [Cell(cell_id, corruption, sparsity)], [method], cfg, seed, k)
    config["mode"] = mode
    config["retrieval_k_fixed"] = True
    return build_report(records, thresholds, config), state
