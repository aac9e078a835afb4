"""Locally optimized random sample consensus over the minimal solvers.

Scoring is truncated-quadratic on the symmetric epipolar error of the point
coordinates only; orientations and scales enter exclusively through the
minimal solvers. Termination adapts to the best inlier ratio found so far,
which is where smaller samples pay off. Local optimization refits on inliers
re-collected at an annealed threshold with a least-squares solver.

Each problem adapter preconditions its data once (a shared similarity for
pixel problems, the inverse intrinsics for calibrated ones) and precomputes
per-correspondence constraint rows, so the sampling loop only stacks rows
and runs the solver cores.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass

import numpy as np

from .constraints import epipolar_rows, sift_rows
from .errors import SolverError
from .geometry import CameraIntrinsics, EssentialMatrix, FundamentalMatrix
from .solvers import (
    FocalModel,
    _rank2_candidates,
    _solve_semicalibrated_rows,
    as_sift_array,
    essential_candidates_batch,
    essential_candidates_from_rows,
    essential_single_from_rows,
    normalize_sift_correspondences,
    rank2_candidates_batch,
    solver_info,
)


@dataclass(frozen=True)
class RansacConfig:
    confidence: float = 0.99
    max_iterations: int = 5000
    threshold: float = 0.75
    lo_enabled: bool = True
    seed: int = 0
    lo_max_rounds: int = 10
    lo_threshold_boost: float = 48.0

    def __post_init__(self):
        if not 0.0 < self.confidence < 1.0:
            raise ValueError("confidence must be in (0, 1)")
        if not self.threshold > 0.0:
            raise ValueError("threshold must be positive")


@dataclass
class RansacReport:
    model: object
    inliers: np.ndarray
    iterations_run: int
    models_scored: int
    wall_time: float
    score: float
    success: bool
    warnings: tuple = ()
    lo_rounds: int = 0


def required_iterations(inlier_ratio: float, sample_size: int, confidence: float) -> int:
    """Adaptive iteration bound ceil(log(1 - eta) / log(1 - eps^m))."""
    if inlier_ratio >= 1.0:
        return 0
    if inlier_ratio <= 0.0:
        return np.iinfo(np.int64).max
    miss = 1.0 - inlier_ratio ** sample_size
    if miss >= 1.0:
        return np.iinfo(np.int64).max
    denom = math.log(miss)
    if denom == 0.0:
        return np.iinfo(np.int64).max
    return int(math.ceil(math.log(1.0 - confidence) / denom))


def score_msac(errors: np.ndarray, threshold: float):
    """Truncated quadratic score (lower is better) and strict-inequality inliers."""
    if not threshold > 0.0:
        raise ValueError("threshold must be positive")
    errors = np.asarray(errors, dtype=float)
    squared = np.minimum(errors * errors, threshold * threshold)
    score = float(np.sum(squared))
    return score, np.nonzero(errors < threshold)[0]


def _pairwise_distance_squared(points: np.ndarray) -> np.ndarray:
    delta = points[:, None, :] - points[None, :, :]
    out = delta[..., 0] ** 2 + delta[..., 1] ** 2
    np.fill_diagonal(out, np.inf)
    return out


def _collinear(points: np.ndarray) -> bool:
    centered = points - points.mean(axis=0)
    a = float(centered[:, 0] @ centered[:, 0])
    b = float(centered[:, 0] @ centered[:, 1])
    c = float(centered[:, 1] @ centered[:, 1])
    disc = math.sqrt(max((a - c) ** 2 + 4.0 * b * b, 0.0))
    return max(0.5 * (a + c - disc), 0.0) < 1e-12


def sample_is_degenerate(pairs: np.ndarray, check_collinear: bool) -> bool:
    """Coincident points within one pixel in either image, or a collinear sample."""
    pairs = np.asarray(pairs, dtype=float)
    for cols in ((0, 1), (2, 3)):
        pts = pairs[:, cols]
        if _pairwise_distance_squared(pts).min() < 1.0:
            return True
        if check_collinear and pts.shape[0] >= 3 and _collinear(pts):
            return True
    return False


class _DegeneracyIndex:
    """Precomputed pairwise pixel distances for fast per-sample checks."""

    def __init__(self, pairs: np.ndarray, check_collinear: bool):
        self.d1 = _pairwise_distance_squared(pairs[:, 0:2])
        self.d2 = _pairwise_distance_squared(pairs[:, 2:4])
        self.pairs = pairs
        self.check_collinear = check_collinear

    def __call__(self, idx: np.ndarray) -> bool:
        grid = np.ix_(idx, idx)
        if self.d1[grid].min() < 1.0 or self.d2[grid].min() < 1.0:
            return True
        if self.check_collinear:
            if _collinear(self.pairs[idx, 0:2]) or _collinear(self.pairs[idx, 2:4]):
                return True
        return False

    def block(self, draws: np.ndarray) -> np.ndarray:
        """Vectorized usability mask over a block of index sets (B, m)."""
        rows = draws[:, :, None]
        cols = draws[:, None, :]
        bad = (self.d1[rows, cols].min(axis=(1, 2)) < 1.0)
        bad |= (self.d2[rows, cols].min(axis=(1, 2)) < 1.0)
        if self.check_collinear:
            for offset in (0, 2):
                pts = self.pairs[draws][:, :, offset:offset + 2]
                centered = pts - pts.mean(axis=1, keepdims=True)
                a = np.einsum("bm,bm->b", centered[:, :, 0], centered[:, :, 0])
                b = np.einsum("bm,bm->b", centered[:, :, 0], centered[:, :, 1])
                c = np.einsum("bm,bm->b", centered[:, :, 1], centered[:, :, 1])
                disc = np.sqrt(np.maximum((a - c) ** 2 + 4.0 * b * b, 0.0))
                bad |= np.maximum(0.5 * (a + c - disc), 0.0) < 1e-12
        return ~bad


def degeneracy_check(sample: np.ndarray, kind: str) -> bool:
    """True when a minimal sample is usable for the given problem family.

    kind is "f", "ff", or "e"; collinearity only disqualifies the
    uncalibrated families. The sample holds pixel point pairs (m, 4) or
    packed correspondences (m, 8).
    """
    sample = np.asarray(sample, dtype=float)
    pairs = sample[:, [0, 1, 4, 5]] if sample.shape[1] == 8 else sample[:, :4]
    return not sample_is_degenerate(pairs, check_collinear=kind in ("f", "ff"))


def _epipolar_errors(p1h: np.ndarray, p2h: np.ndarray, m: np.ndarray) -> np.ndarray:
    lines2 = p1h @ m.T
    lines1 = p2h @ m
    residual = np.abs(np.einsum("ij,ij->i", p2h, lines2))
    n1 = np.sqrt(lines1[:, 0] ** 2 + lines1[:, 1] ** 2)
    n2 = np.sqrt(lines2[:, 0] ** 2 + lines2[:, 1] ** 2)
    with np.errstate(divide="ignore", invalid="ignore"):
        err = 0.5 * residual * (1.0 / n1 + 1.0 / n2)
    return np.where(np.isfinite(err), err, np.inf)


def _common_scale_similarity(points1: np.ndarray, points2: np.ndarray):
    """Per-image translations with one shared isotropic scale.

    A shared scale keeps the symmetric epipolar error an exact multiple of
    its pixel value, so thresholds transfer by the same factor.
    """
    c1 = points1.mean(axis=0)
    c2 = points2.mean(axis=0)
    spread = 0.5 * (np.mean(np.linalg.norm(points1 - c1, axis=1))
                    + np.mean(np.linalg.norm(points2 - c2, axis=1)))
    s = math.sqrt(2.0) / spread if spread > 1e-12 else 1.0
    t1 = np.array([[s, 0.0, -s * c1[0]], [0.0, s, -s * c1[1]], [0.0, 0.0, 1.0]])
    t2 = np.array([[s, 0.0, -s * c2[0]], [0.0, s, -s * c2[1]], [0.0, 0.0, 1.0]])
    return t1, t2, s


def _transform_corr(corr: np.ndarray, t1: np.ndarray, t2: np.ndarray) -> np.ndarray:
    out = corr.copy()
    out[:, 0:2] = corr[:, 0:2] @ t1[:2, :2].T + t1[:2, 2]
    out[:, 4:6] = corr[:, 4:6] @ t2[:2, :2].T + t2[:2, 2]
    out[:, 2] = corr[:, 2] * t1[0, 0]
    out[:, 6] = corr[:, 6] * t2[0, 0]
    return out


def _as_matrix(model) -> np.ndarray:
    if isinstance(model, (FundamentalMatrix, EssentialMatrix)):
        return model.m
    return model


# ---------------------------------------------------------------------------
# Problem adapters: data plus solver family behind a uniform surface
# ---------------------------------------------------------------------------

class FundamentalProblem:
    """Uncalibrated estimation; plug-in minimal solver f4sift or f7pt.

    Internally works in a shared-similarity frame; models are mapped back to
    pixel coordinates only when the report is finalized.
    """

    def __init__(self, corr, solver_id: str = "f4sift"):
        info = solver_info(solver_id)
        if info.family != "f":
            raise ValueError("not a fundamental-matrix solver")
        self.corr = as_sift_array(corr)
        has_features = self.corr.shape[1] == 8
        if solver_id == "f4sift" and not has_features:
            raise ValueError("f4sift needs orientation/scale columns")
        pixel_pairs = self.corr[:, [0, 1, 4, 5]] if has_features else self.corr[:, :4]
        self.degeneracy_pairs = pixel_pairs
        self.t1, self.t2, scale = _common_scale_similarity(pixel_pairs[:, :2],
                                                           pixel_pairs[:, 2:4])
        if has_features:
            self.local = _transform_corr(self.corr, self.t1, self.t2)
            self.pairs = self.local[:, [0, 1, 4, 5]]
            self.feature_rows = sift_rows(self.local)
        else:
            self.pairs = np.hstack([
                pixel_pairs[:, :2] @ self.t1[:2, :2].T + self.t1[:2, 2],
                pixel_pairs[:, 2:4] @ self.t2[:2, :2].T + self.t2[:2, 2]])
            self.feature_rows = None
        self.point_rows = epipolar_rows(self.pairs)
        self.p1h = np.hstack([self.pairs[:, :2], np.ones((self.pairs.shape[0], 1))])
        self.p2h = np.hstack([self.pairs[:, 2:4], np.ones((self.pairs.shape[0], 1))])
        self.solver_id = solver_id
        self.sample_size = info.sample_size
        self.min_lo_inliers = 8
        self.threshold_factor = scale
        self.check_collinear = True
        self.sample_degenerate = _DegeneracyIndex(self.degeneracy_pairs, True)

    @property
    def size(self) -> int:
        return self.pairs.shape[0]

    def solve_minimal(self, idx):
        if self.solver_id == "f4sift":
            rows = np.vstack([self.point_rows[idx], self.feature_rows[idx[:3]]])
        else:
            rows = self.point_rows[idx]
        mats, _ = _rank2_candidates(rows)
        return mats

    def solve_minimal_batch(self, idx_block: np.ndarray):
        if self.solver_id == "f4sift":
            rows = np.concatenate([self.point_rows[idx_block],
                                   self.feature_rows[idx_block[:, :3]]], axis=1)
        else:
            rows = self.point_rows[idx_block]
        return rank2_candidates_batch(rows)

    def errors(self, model) -> np.ndarray:
        return _epipolar_errors(self.p1h, self.p2h, _as_matrix(model))

    def refit(self, model, inlier_idx):
        if inlier_idx.shape[0] < self.min_lo_inliers:
            return None
        from .solvers import solve_f_8pt

        return solve_f_8pt(self.pairs[inlier_idx]).m

    def finalize(self, model):
        return FundamentalMatrix.from_array(self.t2.T @ _as_matrix(model) @ self.t1)


class EssentialProblem:
    """Calibrated estimation in normalized coordinates; e3sift or e5pt plug-in.

    The inlier threshold is divided by the mean of the four focal lengths, and
    all errors are evaluated on normalized point coordinates.
    """

    def __init__(self, corr, k1, k2, solver_id: str = "e3sift"):
        info = solver_info(solver_id)
        if info.family != "e":
            raise ValueError("not an essential-matrix solver")
        self.k1 = k1 if isinstance(k1, CameraIntrinsics) else CameraIntrinsics.from_matrix(k1)
        self.k2 = k2 if isinstance(k2, CameraIntrinsics) else CameraIntrinsics.from_matrix(k2)
        self.corr = as_sift_array(corr)
        has_features = self.corr.shape[1] == 8
        if solver_id == "e3sift" and not has_features:
            raise ValueError("e3sift needs orientation/scale columns")
        self.degeneracy_pairs = (self.corr[:, [0, 1, 4, 5]] if has_features
                                 else self.corr[:, :4])
        if has_features:
            self.local = normalize_sift_correspondences(self.corr, self.k1, self.k2)
            self.pairs = self.local[:, [0, 1, 4, 5]]
            self.feature_rows = sift_rows(self.local)
        else:
            from .geometry import normalize_pairs

            self.pairs = normalize_pairs(self.degeneracy_pairs, self.k1, self.k2)
            self.feature_rows = None
        self.point_rows = epipolar_rows(self.pairs)
        self.p1h = np.hstack([self.pairs[:, :2], np.ones((self.pairs.shape[0], 1))])
        self.p2h = np.hstack([self.pairs[:, 2:4], np.ones((self.pairs.shape[0], 1))])
        self.solver_id = solver_id
        self.sample_size = info.sample_size
        self.min_lo_inliers = 6
        self.threshold_factor = 4.0 / (self.k1.fx + self.k1.fy + self.k2.fx + self.k2.fy)
        self.check_collinear = False
        self.sample_degenerate = _DegeneracyIndex(self.degeneracy_pairs, False)

    @property
    def size(self) -> int:
        return self.pairs.shape[0]

    def solve_minimal(self, idx):
        if self.solver_id == "e3sift":
            rows = np.empty((6, 9))
            rows[0::2] = self.point_rows[idx]
            rows[1::2] = self.feature_rows[idx]
            raw, _ = essential_single_from_rows(rows)
            return [raw]
        return [e for e, _ in essential_candidates_from_rows(self.point_rows[idx])]

    def solve_minimal_batch(self, idx_block: np.ndarray):
        if self.solver_id == "e5pt":
            return essential_candidates_batch(self.point_rows[idx_block])
        out = []
        for idx in idx_block:
            try:
                out.append(self.solve_minimal(idx))
            except (SolverError, ValueError):
                out.append([])
        return out

    def errors(self, model) -> np.ndarray:
        return _epipolar_errors(self.p1h, self.p2h, _as_matrix(model))

    def refit(self, model, inlier_idx):
        # raw least-squares fit; scoring keeps the raw output and the manifold
        # projection happens once at finalize (a projected fit falls out of
        # the tight inlier band even when the underlying geometry is right)
        if inlier_idx.shape[0] < self.min_lo_inliers:
            return None
        if inlier_idx.shape[0] >= 8:
            from .solvers import solve_f_8pt

            return solve_f_8pt(self.pairs[inlier_idx]).m
        _, _, vt = np.linalg.svd(self.point_rows[inlier_idx])
        return vt[-1].reshape(3, 3)

    def finalize(self, model):
        return EssentialMatrix.from_array(_as_matrix(model)).projected()


class FocalProblem:
    """Semi-calibrated estimation; ff3sift or ff6pt plug-in.

    Local optimization refits the fundamental matrix on the inliers while the
    focal length of the refined model's seed is held fixed. Models travel as
    (matrix, focal) pairs in the shifted/scaled frame until finalized.
    """

    def __init__(self, corr, principal_point, solver_id: str = "ff3sift"):
        info = solver_info(solver_id)
        if info.family != "ff":
            raise ValueError("not a semi-calibrated solver")
        self.corr = as_sift_array(corr)
        has_features = self.corr.shape[1] == 8
        if solver_id == "ff3sift" and not has_features:
            raise ValueError("ff3sift needs orientation/scale columns")
        pixel_pairs = self.corr[:, [0, 1, 4, 5]] if has_features else self.corr[:, :4]
        self.degeneracy_pairs = pixel_pairs
        pp = np.asarray(principal_point, dtype=float).reshape(2)
        shifted = np.vstack([pixel_pairs[:, :2] - pp, pixel_pairs[:, 2:4] - pp])
        spread = np.mean(np.linalg.norm(shifted, axis=1))
        s = 1.0 / spread if spread > 1e-12 else 1.0
        self.scale = s
        self.t = np.array([[s, 0.0, -s * pp[0]], [0.0, s, -s * pp[1]], [0.0, 0.0, 1.0]])
        if has_features:
            self.local = _transform_corr(self.corr, self.t, self.t)
            self.pairs = self.local[:, [0, 1, 4, 5]]
            self.feature_rows = sift_rows(self.local)
        else:
            self.pairs = np.hstack([
                pixel_pairs[:, :2] @ self.t[:2, :2].T + self.t[:2, 2],
                pixel_pairs[:, 2:4] @ self.t[:2, :2].T + self.t[:2, 2]])
            self.feature_rows = None
        self.point_rows = epipolar_rows(self.pairs)
        self.p1h = np.hstack([self.pairs[:, :2], np.ones((self.pairs.shape[0], 1))])
        self.p2h = np.hstack([self.pairs[:, 2:4], np.ones((self.pairs.shape[0], 1))])
        self.solver_id = solver_id
        self.sample_size = info.sample_size
        self.min_lo_inliers = 8
        self.threshold_factor = s
        self.check_collinear = True
        self.sample_degenerate = _DegeneracyIndex(self.degeneracy_pairs, True)

    @property
    def size(self) -> int:
        return self.pairs.shape[0]

    def solve_minimal(self, idx):
        if self.solver_id == "ff3sift":
            rows = np.empty((6, 9))
            rows[0::2] = self.point_rows[idx]
            rows[1::2] = self.feature_rows[idx]
        else:
            rows = self.point_rows[idx]
        return [(f, focal) for f, focal, _ in _solve_semicalibrated_rows(rows)]

    def solve_minimal_batch(self, idx_block: np.ndarray):
        out = []
        for idx in idx_block:
            try:
                out.append(self.solve_minimal(idx))
            except (SolverError, ValueError):
                out.append([])
        return out

    def errors(self, model) -> np.ndarray:
        return _epipolar_errors(self.p1h, self.p2h, model[0])

    def refit(self, model, inlier_idx):
        if inlier_idx.shape[0] < self.min_lo_inliers:
            return None
        from .solvers import solve_f_8pt

        return solve_f_8pt(self.pairs[inlier_idx]).m, model[1]

    def finalize(self, model):
        mat, focal = model
        fundamental = FundamentalMatrix.from_array(self.t.T @ mat @ self.t)
        return FocalModel(fundamental, focal / self.scale)


def make_problem(solver_id: str, corr, k1=None, k2=None, principal_point=None):
    info = solver_info(solver_id)
    if info.family == "f":
        return FundamentalProblem(corr, solver_id)
    if info.family == "e":
        if k1 is None or k2 is None:
            raise ValueError("essential-matrix estimation needs both intrinsics")
        return EssentialProblem(corr, k1, k2, solver_id)
    if principal_point is None:
        raise ValueError("semi-calibrated estimation needs the shared principal point")
    return FocalProblem(corr, principal_point, solver_id)


# ---------------------------------------------------------------------------
# The harness
# ---------------------------------------------------------------------------

def local_optimize(problem, model, inliers: np.ndarray, threshold: float,
                   max_rounds: int = 10, threshold_boost: float = 48.0):
    """Iterated least-squares refinement on the re-collected inlier set.

    Each round refits with the non-minimal solver on inliers gathered at an
    annealed threshold (boosted at first, shrinking to the true one), which
    lets a mediocre minimal model recruit enough true inliers to escape its
    starting basin. The best model under the true-threshold score is kept;
    iteration stops at an inlier-set fixpoint or after max_rounds. Returns
    (model, score, inliers, rounds, score_history, warning).
    """
    errors = problem.errors(model)
    best_score, best_inliers = score_msac(errors, threshold)
    current = np.nonzero(errors < threshold_boost * threshold)[0]
    if current.shape[0] < problem.min_lo_inliers:
        return model, best_score, best_inliers, 0, [best_score], "insufficient inliers"
    best_model = model
    fit_model = model
    history = [best_score]
    rounds = 0
    previous = None
    for round_idx in range(max_rounds):
        if current.shape[0] < problem.min_lo_inliers:
            break
        try:
            refined = problem.refit(fit_model, current)
        except (SolverError, ValueError):
            break
        if refined is None:
            break
        rounds += 1
        errors = problem.errors(refined)
        score, strict_inliers = score_msac(errors, threshold)
        if score < best_score:
            best_score = score
            best_model = refined
            best_inliers = strict_inliers
        history.append(best_score)
        fit_model = refined
        boost = max(1.0, threshold_boost * 0.5 ** (round_idx + 1))
        collected = np.nonzero(errors < boost * threshold)[0]
        if previous is not None and boost == 1.0 and np.array_equal(collected, previous):
            break
        previous = collected
        current = collected
    return best_model, best_score, best_inliers, rounds, history, None


def ransac(problem, config: RansacConfig = RansacConfig()) -> RansacReport:
    """Best truncated-quadratic model with adaptive termination.

    Deterministic for a fixed seed: sampling, scoring order, and the
    best-model update are all sequential.
    """
    n = problem.size
    m = problem.sample_size
    if n < m:
        raise ValueError(f"need at least {m} correspondences, got {n}")
    rng = np.random.default_rng(config.seed)
    threshold = config.threshold * problem.threshold_factor

    start = time.perf_counter()
    best_model = None
    best_score = math.inf
    best_inliers = np.empty(0, dtype=int)
    models_scored = 0
    lo_rounds_total = 0
    warnings = []
    iterations = 0
    needed = config.max_iterations

    block_size = 16
    queue: list = []

    def refill():
        keys = rng.random((block_size, n))
        draws = np.argpartition(keys, m, axis=1)[:, :m]
        usable = problem.sample_degenerate.block(draws)
        solved = [[] for _ in range(block_size)]
        if np.any(usable):
            block = problem.solve_minimal_batch(draws[usable])
            for slot, models in zip(np.nonzero(usable)[0], block):
                solved[slot] = models
        queue.extend(solved[::-1])

    while iterations < min(needed, config.max_iterations):
        iterations += 1
        if not queue:
            refill()
        models = queue.pop()
        if not models:
            continue
        improved = False
        for model in models:
            score, inliers = score_msac(problem.errors(model), threshold)
            models_scored += 1
            if score < best_score and inliers.shape[0] >= m:
                best_model, best_score, best_inliers = model, score, inliers
                improved = True
        if improved and config.lo_enabled:
            lo_model, lo_score, lo_inliers, rounds, _, warn = local_optimize(
                problem, best_model, best_inliers, threshold,
                max_rounds=config.lo_max_rounds,
                threshold_boost=config.lo_threshold_boost)
            models_scored += rounds
            lo_rounds_total += rounds
            if warn and warn not in warnings:
                warnings.append(warn)
            if lo_score < best_score:
                best_model, best_score, best_inliers = lo_model, lo_score, lo_inliers
        if improved:
            ratio = best_inliers.shape[0] / n
            needed = required_iterations(ratio, m, config.confidence)

    wall = time.perf_counter() - start
    if best_model is None:
        return RansacReport(model=None, inliers=np.empty(0, dtype=int),
                            iterations_run=iterations, models_scored=models_scored,
                            wall_time=wall, score=math.inf, success=False,
                            warnings=("no model found",), lo_rounds=lo_rounds_total)
    return RansacReport(model=problem.finalize(best_model), inliers=best_inliers,
                        iterations_run=iterations, models_scored=models_scored,
                        wall_time=wall, score=best_score, success=True,
                        warnings=tuple(warnings), lo_rounds=lo_rounds_total)
