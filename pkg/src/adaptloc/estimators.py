"""LO-RANSAC pose estimators: P3P, E5+1, the adaptive dual-solver loop,
and the post-hoc Select and Oracle choices between two results."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import GeometryError, InsufficientConstraints
from .geometry import Database, Intrinsics, Matches2D, Matches3D, Pose
from .metrics import pose_error
from .refine import Provenance, RefineConfig, RefineStrategy, refine
from .scoring import MatchScoreStats, ScoringFunction, better, evaluate_hypothesis, score, worst_score
from .solvers import LAMBDA_COEFF_TOL, solve_e5p1, solve_p3p

LO_ROUNDS = 3


@dataclass(frozen=True)
class EstimatorConfig:
    t3d: float = 4.0
    t2d: float = 4.0
    max_iterations: int = 5000
    confidence: float = 0.999
    scoring: ScoringFunction = ScoringFunction.MULT_MSAC
    lo: RefineConfig = field(default_factory=RefineConfig)
    select_alpha: float = 0.8
    rng_seed: int = 0
    lambda_tol: float = LAMBDA_COEFF_TOL

    def __post_init__(self):
        if self.t3d <= 0 or self.t2d <= 0:
            raise ValueError("thresholds must be positive")
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must lie in (0, 1)")
        if self.select_alpha <= 0:
            raise ValueError("select_alpha must be positive")


@dataclass(frozen=True)
class PoseResult:
    pose: Pose
    stats: MatchScoreStats
    provenance: Provenance
    iterations_run: int
    success: bool
    solver: Provenance | None = None  # solver that produced the final incumbent


def _failed(provenance, n3d=0, n2d=0, iterations=0) -> PoseResult:
    return PoseResult(Pose.identity(), MatchScoreStats.failed(n3d, n2d), provenance, iterations, False)


def required_iterations(inlier_ratio: float, sample_size: int, confidence: float, cap: int) -> int:
    """Standard RANSAC bound log(1-p) / log(1-w^s), capped at ``cap``."""
    w = inlier_ratio**sample_size
    if w <= 0.0:
        return cap
    if w >= 1.0:
        return 1
    k = math.log(1.0 - confidence) / math.log1p(-w)
    return int(min(cap, max(1, math.ceil(k))))


def _substreams(seed):
    p3p_seq, e5p1_seq = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(p3p_seq), np.random.default_rng(e5p1_seq)


class _E5p1Sampler:
    """5 matches from one image with >= 5 matches, +1 from any other image."""

    def __init__(self, m2d: Matches2D):
        self.m2d = m2d
        images, counts = np.unique(m2d.db_index, return_counts=True)
        self.eligible = images[counts >= 5]
        self.by_image = {int(i): np.flatnonzero(m2d.db_index == i) for i in images}
        self.ok = len(images) >= 2 and len(self.eligible) > 0

    def draw(self, rng):
        a = int(self.eligible[rng.integers(len(self.eligible))])
        five = rng.choice(self.by_image[a], size=5, replace=False)
        others = np.flatnonzero(self.m2d.db_index != a)
        one = int(others[rng.integers(len(others))])
        return a, five, one


class _Ransac:
    """Shared incumbent bookkeeping for the three estimator loops."""

    def __init__(self, m3d, m2d, db, K_q, cfg: EstimatorConfig, scoring):
        self.m3d, self.m2d, self.db, self.K_q, self.cfg = m3d, m2d, db, K_q, cfg
        self.scoring = scoring
        self.best_pose = None
        self.best_stats = None
        self.best_solver = None
        self.best_score = worst_score(scoring)
        self.history = []

    def evaluate(self, pose):
        stats = evaluate_hypothesis(pose, self.K_q, self.m3d, self.m2d, self.db, self.cfg.t3d, self.cfg.t2d)
        return stats, score(stats, self.scoring, self.cfg.t3d, self.cfg.t2d)

    def local_optimize(self, pose, solver, stats, s):
        """Refine on the incumbent's inliers while the score improves.

        Under hybrid refinement each phase starts with a warm-start round
        on a single modality (the generating solver's first, then the
        other one) followed by hybrid rounds. Any round is kept only if it
        improves the score.
        """
        cfg = self.cfg
        if cfg.lo.strategy is RefineStrategy.HYBRID:
            split = replace(cfg.lo, strategy=RefineStrategy.SPLIT)
            other = Provenance.E5P1 if solver is Provenance.P3P else Provenance.P3P
            phases = [(split, solver), (split, other)] if solver is not Provenance.ADAPTIVE else [(None, None)]
        else:
            phases = [(None, None)]
        for warm, warm_solver in phases:
            if warm is not None:
                pose, stats, s, _ = self._lo_round(pose, warm_solver, stats, s, warm)
            for _ in range(LO_ROUNDS):
                pose, stats, s, improved = self._lo_round(pose, solver, stats, s, cfg.lo)
                if not improved:
                    break
        return pose, stats, s

    def _lo_round(self, pose, solver, stats, s, lo):
        try:
            cand = refine(
                pose, solver, self.m3d[stats.inlier_mask_3d], self.m2d[stats.inlier_mask_2d],
                self.db, self.K_q, lo, self.cfg.t3d, self.cfg.t2d,
            )
        except InsufficientConstraints:
            return pose, stats, s, False
        cand_stats, cand_s = self.evaluate(cand)
        if better(cand_s, s, self.scoring):
            return cand, cand_stats, cand_s, True
        return pose, stats, s, False

    def offer(self, pose, solver) -> bool:
        stats, s = self.evaluate(pose)
        if not better(s, self.best_score, self.scoring):
            return False
        pose, stats, s = self.local_optimize(pose, solver, stats, s)
        self.best_pose, self.best_stats, self.best_score, self.best_solver = pose, stats, s, solver
        self.history.append(s)
        return True

    def iteration_bound(self):
        st = self.best_stats
        if self.best_solver is Provenance.P3P:
            ratio, size = (st.i3d / st.n3d if st.n3d else 0.0), 3
        else:
            ratio, size = (st.i2d / st.n2d if st.n2d else 0.0), 6
        return required_iterations(ratio, size, self.cfg.confidence, self.cfg.max_iterations)

    def finish(self, provenance, iterations, min_inliers) -> PoseResult:
        if self.best_pose is None:
            return _failed(provenance, len(self.m3d), len(self.m2d), iterations)
        # every incumbent was already polished when it was accepted
        pose, stats = self.best_pose, self.best_stats
        if not min_inliers(stats):
            return _failed(provenance, len(self.m3d), len(self.m2d), iterations)
        return PoseResult(pose, stats, provenance, iterations, True, self.best_solver)


def _run(m3d, m2d, db, K_q, cfg, scoring, use_p3p, use_e5p1, provenance, min_inliers):
    state = _Ransac(m3d, m2d, db, K_q, cfg, scoring)
    rng3, rng2 = _substreams(cfg.rng_seed)
    sampler = _E5p1Sampler(m2d) if use_e5p1 else None
    use_p3p = use_p3p and len(m3d) >= 3
    use_e5p1 = use_e5p1 and sampler.ok
    if not (use_p3p or use_e5p1):
        return _failed(provenance, len(m3d), len(m2d)), state

    limit = cfg.max_iterations
    k = 0
    while k < limit:
        k += 1
        candidates = []
        if use_p3p:
            idx = rng3.choice(len(m3d), size=3, replace=False)
            try:
                candidates += [(p, Provenance.P3P) for p in solve_p3p(m3d.query_px[idx], m3d.world[idx], K_q)]
            except GeometryError:
                pass
        if use_e5p1:
            a, five, one = sampler.draw(rng2)
            try:
                sols = solve_e5p1(
                    m2d.query_px[five], m2d.db_px[five], a,
                    m2d.query_px[one], m2d.db_px[one], int(m2d.db_index[one]),
                    db, K_q, lambda_tol=cfg.lambda_tol,
                )
                candidates += [(s.pose, Provenance.E5P1) for s in sols]
            except GeometryError:
                pass
        improved = False
        for pose, solver in candidates:
            improved |= state.offer(pose, solver)
        if improved:
            limit = state.iteration_bound()
    return state.finish(provenance, k, min_inliers), state


def ransac_p3p(m3d: Matches3D, K_q: Intrinsics, cfg: EstimatorConfig) -> PoseResult:
    """Structure-based LO-RANSAC scored by MSAC on reprojection errors."""
    empty_db = Database([], [], [])
    result, _ = _run(
        m3d, Matches2D.empty(), empty_db, K_q, cfg, ScoringFunction.SUM_MSAC,
        True, False, Provenance.P3P, lambda st: st.i3d >= 3,
    )
    return result


def ransac_e5p1(m2d: Matches2D, db: Database, K_q: Intrinsics, cfg: EstimatorConfig) -> PoseResult:
    """Structure-less LO-RANSAC scored by MSAC on Sampson errors."""
    result, _ = _run(
        Matches3D.empty(), m2d, db, K_q, cfg, ScoringFunction.SUM_MSAC,
        False, True, Provenance.E5P1, lambda st: st.i2d >= 6,
    )
    return result


def ransac_adaptive(m3d: Matches3D, m2d: Matches2D, db: Database, K_q: Intrinsics, cfg: EstimatorConfig, return_history=False):
    """Dual-solver LO-RANSAC: one P3P and one E5+1 sample per iteration,
    every hypothesis scored on both match sets with ``cfg.scoring``."""
    result, state = _run(
        m3d, m2d, db, K_q, cfg, cfg.scoring, True, True, Provenance.ADAPTIVE,
        lambda st: st.i3d >= 3 or st.i2d >= 6,
    )
    if return_history:
        return result, state.history
    return result


def select(p3p: PoseResult, e5p1: PoseResult, m2d: Matches2D, db: Database, K_q: Intrinsics, cfg: EstimatorConfig) -> PoseResult:
    """Keep the P3P pose iff its 2D-2D inlier count exceeds alpha times E5+1's."""
    empty = Matches3D.empty()

    def i2d(res):
        if not res.success:
            return 0
        return evaluate_hypothesis(res.pose, K_q, empty, m2d, db, cfg.t3d, cfg.t2d).i2d

    if i2d(p3p) > cfg.select_alpha * i2d(e5p1):
        return p3p
    return e5p1


def oracle(p3p: PoseResult, e5p1: PoseResult, gt: Pose) -> PoseResult:
    """The result with the smaller max(cm, deg) error against ground truth."""
    def err(res):
        return pose_error(res.pose, gt).absolute() if res.success else np.inf

    if not e5p1.success:
        return p3p
    if not p3p.success:
        return e5p1
    return e5p1 if err(e5p1) < err(p3p) else p3p
