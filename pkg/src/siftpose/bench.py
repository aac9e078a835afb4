"""Benchmark orchestration: synthetic studies and the dataset runner.

Emits flat CSV tables; every experiment derives per-trial random streams
from (seed, trial index) so results are identical for any worker count.
"""
from __future__ import annotations

import math
import os
import time
from dataclasses import replace

import numpy as np

from .errors import SolverError
from .fileio import BenchmarkRow, PairMetadata, read_correspondences, read_metadata
from .geometry import (
    CameraIntrinsics,
    decompose_essential,
    essential_from_fundamental,
    relative_focal_error,
    rotation_error,
    translation_error,
)
from .robust import RansacConfig, make_problem, ransac
from .solvers import FocalModel, solver_info
from .synthetic import (
    SyntheticConfig,
    SyntheticScene,
    add_noise,
    generate_scene,
    limit_worker_threads,
    noise_sweep,
    stability_histogram,
)

WORKER_ENV = "SIFTPOSE_WORKERS"

STABILITY_SOLVERS = ("f4sift", "f7pt", "e3sift", "e5pt")
FOCAL_SOLVERS = ("ff3sift", "ff6pt")
NOISE_SOLVERS = ("f4sift", "f7pt", "e3sift", "e5pt", "ff3sift", "ff6pt")
SPEEDUP_SOLVERS = ("e3sift", "e5pt", "f4sift", "f7pt")


def resolve_workers(workers=None) -> int:
    if workers is not None:
        return max(1, int(workers))
    env = os.environ.get(WORKER_ENV, "")
    try:
        return max(1, int(env)) if env else 1
    except ValueError:
        return 1


def _fmt(x: float) -> str:
    return "%.17g" % float(x)


# ---------------------------------------------------------------------------
# Synthetic experiments
# ---------------------------------------------------------------------------

def run_stability_experiment(trials: int, seed: int, out_path, solvers=STABILITY_SOLVERS,
                             config: SyntheticConfig | None = None, workers=None) -> None:
    with open(out_path, "w") as handle:
        handle.write("trial,solver,log10_error\n")
        for solver_id in solvers:
            result = stability_histogram(solver_id, trials, seed=seed, config=config,
                                         workers=resolve_workers(workers))
            for trial, value in enumerate(result.log10_errors):
                handle.write(f"{trial},{solver_id},{_fmt(value)}\n")


def run_focal_stability_experiment(trials: int, seed: int, out_path,
                                   solvers=FOCAL_SOLVERS,
                                   config: SyntheticConfig | None = None,
                                   workers=None) -> None:
    with open(out_path, "w") as handle:
        handle.write("trial,solver,log10_focal_error\n")
        for solver_id in solvers:
            result = stability_histogram(solver_id, trials, seed=seed, config=config,
                                         workers=resolve_workers(workers))
            for trial, value in enumerate(result.log10_focal_errors):
                handle.write(f"{trial},{solver_id},{_fmt(value)}\n")


def run_noise_experiment(trials: int, sigmas, seed: int, out_path,
                         solvers=NOISE_SOLVERS, config: SyntheticConfig | None = None,
                         workers=None) -> None:
    records = noise_sweep(solvers, sigmas, trials, seed=seed, config=config,
                          workers=resolve_workers(workers))
    with open(out_path, "w") as handle:
        handle.write("sigma,solver,mean_error,failures,trials\n")
        for rec in records:
            handle.write(f"{_fmt(rec['sigma'])},{rec['solver']},{_fmt(rec['mean_error'])},"
                         f"{rec['failures']},{rec['trials']}\n")


# ---------------------------------------------------------------------------
# Robust estimation problems with planted outliers
# ---------------------------------------------------------------------------

def make_robust_instance(n_correspondences: int, inlier_ratio: float, sigma: float,
                         rng, config: SyntheticConfig | None = None,
                         plane_count: int = 6):
    """A synthetic scene extended with uniform random mismatches.

    Returns (scene, corr, inlier_mask): corr rows are shuffled noised inliers
    followed by planted outliers with random points, orientations, and
    scales. The inliers spread over several planes so no single plane
    dominates the consensus (a dominant plane makes uncalibrated estimation
    ambiguous, which is a degeneracy study of its own, not a speed benchmark).
    """
    n_inliers = int(round(n_correspondences * inlier_ratio))
    n_outliers = n_correspondences - n_inliers
    per_plane = -(-n_inliers // plane_count)
    base = config or SyntheticConfig()
    scene = generate_scene(replace(base, points_per_plane=per_plane,
                                   plane_count=plane_count), rng)
    noisy = add_noise(scene, sigma, rng) if sigma > 0 else scene
    inliers = noisy.correspondences[:n_inliers]

    width, height = base.image_size
    outliers = np.empty((n_outliers, 8))
    for offset in (0, 4):
        outliers[:, offset] = rng.uniform(0.0, width, n_outliers)
        outliers[:, offset + 1] = rng.uniform(0.0, height, n_outliers)
        outliers[:, offset + 2] = rng.uniform(0.5, 2.0, n_outliers)
        outliers[:, offset + 3] = rng.uniform(0.0, 2.0 * math.pi, n_outliers)

    corr = np.vstack([inliers, outliers])
    mask = np.zeros(corr.shape[0], dtype=bool)
    mask[:n_inliers] = True
    order = rng.permutation(corr.shape[0])
    return noisy, corr[order], mask[order]


def pose_errors(solver_id: str, model, inlier_pairs: np.ndarray,
                scene_or_meta) -> tuple[float, float, float]:
    """(rotation deg, translation deg, relative focal error) against ground truth.

    scene_or_meta is a SyntheticScene or a PairMetadata carrying intrinsics
    and ground truth; nan entries mark unavailable ground truth.
    """
    info = solver_info(solver_id)
    if isinstance(scene_or_meta, SyntheticScene):
        k1, k2 = scene_or_meta.k1, scene_or_meta.k2
        gt_rotation = scene_or_meta.pose.rotation
        gt_translation = scene_or_meta.pose.translation
        gt_focal = scene_or_meta.focal
        pp = scene_or_meta.principal_point
    else:
        meta: PairMetadata = scene_or_meta
        k1 = CameraIntrinsics.from_matrix(meta.k1) if meta.k1 is not None else None
        k2 = CameraIntrinsics.from_matrix(meta.k2) if meta.k2 is not None else None
        gt_rotation = meta.gt_rotation
        gt_translation = meta.gt_translation
        gt_focal = meta.gt_focal
        pp = meta.principal_point if meta.k1 is not None else None

    focal_err = math.nan
    identity = CameraIntrinsics(1.0, 1.0, 0.0, 0.0)
    if info.family == "e":
        if k1 is None or k2 is None:
            return math.nan, math.nan, math.nan
        # the harness scores E on normalized coordinates, so decompose there
        from .geometry import normalize_pairs

        pairs = normalize_pairs(inlier_pairs, k1, k2)
        pose = decompose_essential(model, pairs, identity, identity)
    elif info.family == "ff":
        focal = model.focal
        if gt_focal is not None:
            focal_err = relative_focal_error(focal, float(gt_focal))
        if pp is None:
            return math.nan, math.nan, focal_err
        k_est = CameraIntrinsics(focal, focal, float(pp[0]), float(pp[1]))
        e = essential_from_fundamental(model.fundamental, k_est, k_est)
        pose = decompose_essential(e, inlier_pairs, k_est, k_est)
    else:
        if k1 is None or k2 is None:
            return math.nan, math.nan, math.nan
        e = essential_from_fundamental(model, k1, k2)
        pose = decompose_essential(e, inlier_pairs, k1, k2)

    if gt_rotation is None or gt_translation is None:
        return math.nan, math.nan, focal_err
    return (rotation_error(pose.rotation, gt_rotation),
            translation_error(pose.translation, gt_translation), focal_err)


def _ransac_for(solver_id: str, corr: np.ndarray, scene_or_meta, config: RansacConfig):
    info = solver_info(solver_id)
    if isinstance(scene_or_meta, SyntheticScene):
        k1, k2, pp = scene_or_meta.k1, scene_or_meta.k2, scene_or_meta.principal_point
    else:
        k1 = k2 = pp = None
        if scene_or_meta.k1 is not None:
            k1, k2 = scene_or_meta.intrinsics()
            pp = scene_or_meta.principal_point
    if info.family == "e":
        problem = make_problem(solver_id, corr, k1=k1, k2=k2)
    elif info.family == "ff":
        problem = make_problem(solver_id, corr, principal_point=pp)
    else:
        problem = make_problem(solver_id, corr)
    return problem, ransac(problem, config)


def run_speedup_experiment(trials: int, inlier_ratios, seed: int, out_path,
                           solvers=SPEEDUP_SOLVERS, sigma: float = 0.5,
                           n_correspondences: int = 200,
                           ransac_config: RansacConfig | None = None,
                           workers=None) -> list[dict]:
    """Mean models-scored and wall time per solver at each planted inlier ratio."""
    base_config = ransac_config or RansacConfig()
    tasks = [(seed, r_idx, float(ratio), trial, tuple(solvers), sigma,
              n_correspondences, base_config)
             for r_idx, ratio in enumerate(inlier_ratios) for trial in range(trials)]
    jobs = resolve_workers(workers)
    if jobs > 1:
        import concurrent.futures

        with concurrent.futures.ProcessPoolExecutor(
                max_workers=jobs, initializer=limit_worker_threads) as pool:
            rows = list(pool.map(_speedup_chunk, tasks,
                                 chunksize=max(1, len(tasks) // (8 * jobs))))
    else:
        rows = [_speedup_chunk(task) for task in tasks]

    records = []
    per_point = trials
    for r_idx, ratio in enumerate(inlier_ratios):
        block = rows[r_idx * per_point:(r_idx + 1) * per_point]
        for col, solver_id in enumerate(solvers):
            scored = np.array([b[col][0] for b in block], dtype=float)
            wall = np.array([b[col][1] for b in block], dtype=float)
            records.append({
                "inlier_ratio": float(ratio), "solver": solver_id,
                "mean_models_scored": float(np.mean(scored)),
                "mean_wall_ms": float(np.mean(wall)) * 1000.0,
                "mean_iterations": float(np.mean([b[col][2] for b in block])),
                "trials": per_point,
            })
    if out_path is not None:
        with open(out_path, "w") as handle:
            handle.write("inlier_ratio,solver,mean_models_scored,mean_wall_ms,"
                         "mean_iterations,trials\n")
            for rec in records:
                handle.write(f"{_fmt(rec['inlier_ratio'])},{rec['solver']},"
                             f"{_fmt(rec['mean_models_scored'])},{_fmt(rec['mean_wall_ms'])},"
                             f"{_fmt(rec['mean_iterations'])},{rec['trials']}\n")
    return records


def _speedup_chunk(args):
    seed, r_idx, ratio, trial, solvers, sigma, n_corr, base_config = args
    rng = np.random.default_rng(np.random.SeedSequence((seed, r_idx, trial)))
    scene, corr, _ = make_robust_instance(n_corr, ratio, sigma, rng)
    out = []
    for solver_id in solvers:
        config = replace(base_config, seed=int(rng.integers(2 ** 31)))
        _, report = _ransac_for(solver_id, corr, scene, config)
        out.append((report.models_scored, report.wall_time, report.iterations_run))
    return out


# ---------------------------------------------------------------------------
# Dataset runner
# ---------------------------------------------------------------------------

def read_manifest(path) -> list[tuple[str, str]]:
    """Each non-comment line: <correspondence file> <metadata file>, relative to the manifest."""
    base = os.path.dirname(os.path.abspath(path))
    pairs = []
    with open(path) as handle:
        for line in handle:
            text = line.strip()
            if not text or text.startswith("#"):
                continue
            parts = text.split()
            if len(parts) != 2:
                from .errors import ParseError

                raise ParseError("manifest lines need two paths", path=str(path))
            pairs.append((os.path.join(base, parts[0]), os.path.join(base, parts[1])))
    return pairs


def run_dataset_benchmark(manifest_path, solvers, seed: int = 0,
                          ransac_config: RansacConfig | None = None,
                          fixed_clock: bool = False,
                          workers=None) -> list[BenchmarkRow]:
    base_config = ransac_config or RansacConfig()
    entries = read_manifest(manifest_path)
    tasks = [(idx, corr_path, meta_path, tuple(solvers), seed, base_config, fixed_clock)
             for idx, (corr_path, meta_path) in enumerate(entries)]
    jobs = resolve_workers(workers)
    if jobs > 1:
        import concurrent.futures

        with concurrent.futures.ProcessPoolExecutor(
                max_workers=jobs, initializer=limit_worker_threads) as pool:
            groups = list(pool.map(_dataset_chunk, tasks))
    else:
        groups = [_dataset_chunk(task) for task in tasks]

    rows = [row for group in groups for row in group]
    rows += aggregate_rows(rows, solvers)
    return rows


def _dataset_chunk(args):
    idx, corr_path, meta_path, solvers, seed, base_config, fixed_clock = args
    rows = []
    pair_id = os.path.splitext(os.path.basename(corr_path))[0]
    try:
        corr = read_correspondences(corr_path)
        meta = read_metadata(meta_path)
        if meta.pair_id:
            pair_id = meta.pair_id
    except Exception:
        for solver_id in solvers:
            rows.append(BenchmarkRow(pair_id=pair_id, solver=solver_id, status="parse-error"))
        return rows
    for solver_id in solvers:
        config = replace(base_config,
                         seed=int(np.random.default_rng(
                             np.random.SeedSequence((seed, idx))).integers(2 ** 31)))
        try:
            start = time.perf_counter()
            _, report = _ransac_for(solver_id, corr, meta, config)
            wall_ms = 0.0 if fixed_clock else (time.perf_counter() - start) * 1000.0
            if not report.success:
                rows.append(BenchmarkRow(pair_id=pair_id, solver=solver_id,
                                         iterations=report.iterations_run,
                                         models_scored=report.models_scored,
                                         wall_ms=wall_ms, status="no-model"))
                continue
            inlier_pairs = corr[report.inliers][:, [0, 1, 4, 5]]
            rot, trans, focal = pose_errors(solver_id, report.model, inlier_pairs, meta)
            rows.append(BenchmarkRow(
                pair_id=pair_id, solver=solver_id, rot_err_deg=rot, trans_err_deg=trans,
                focal_err=focal, wall_ms=wall_ms, iterations=report.iterations_run,
                models_scored=report.models_scored, inliers=int(report.inliers.shape[0]),
                status="ok"))
        except (SolverError, ValueError):
            rows.append(BenchmarkRow(pair_id=pair_id, solver=solver_id, status="error"))
    return rows


def aggregate_rows(rows: list[BenchmarkRow], solvers) -> list[BenchmarkRow]:
    """Mean and median footer rows per solver over successful pairs."""
    footer = []
    for solver_id in solvers:
        good = [r for r in rows if r.solver == solver_id and r.status == "ok"]
        for name, stat in (("aggregate_mean", np.mean), ("aggregate_median", np.median)):
            if good:
                footer.append(BenchmarkRow(
                    pair_id=name, solver=solver_id,
                    rot_err_deg=float(stat([r.rot_err_deg for r in good])),
                    trans_err_deg=float(stat([r.trans_err_deg for r in good])),
                    focal_err=float(stat([r.focal_err for r in good])),
                    wall_ms=float(stat([r.wall_ms for r in good])),
                    iterations=int(round(float(stat([r.iterations for r in good])))),
                    models_scored=int(round(float(stat([r.models_scored for r in good])))),
                    inliers=int(round(float(stat([r.inliers for r in good])))),
                    status="aggregate"))
            else:
                footer.append(BenchmarkRow(pair_id=name, solver=solver_id,
                                           status="aggregate"))
    return footer
