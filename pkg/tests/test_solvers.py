import math

import numpy as np
import pytest

import siftpose.solvers as solvers_module
from siftpose.constraints import epipolar_rows, sift_rows
from siftpose.errors import DegenerateSampleError, SolverError
from siftpose.geometry import (
    CameraIntrinsics,
    decompose_essential,
    rotation_error,
    symmetric_epipolar_errors,
    translation_error,
)
from siftpose.solvers import (
    normalize_sift_correspondences,
    real_cubic_roots,
    run_minimal_solver,
    solve_e_3sift,
    solve_e_5pt,
    solve_f_4sift,
    solve_f_7pt,
    solve_f_8pt,
    solve_f_focal_3sift,
    solve_f_focal_6pt,
)
from siftpose.synthetic import SyntheticConfig, add_noise, generate_scene

from conftest import spanning_indices


def matrix_gap(model, truth):
    m = model.m if hasattr(model, "m") else model
    t = truth.m if hasattr(truth, "m") else truth
    return min(np.abs(m - t).max(), np.abs(m + t).max())


def best_gap(models, truth):
    return min(matrix_gap(m, truth) for m in models)


class TestCubicRoots:
    def test_known_roots(self):
        # (x - 1)(x - 2)(x + 3) = x^3 - 7x + 6
        roots = sorted(real_cubic_roots(1.0, 0.0, -7.0, 6.0))
        assert np.allclose(roots, [-3.0, 1.0, 2.0])

    def test_single_real_root(self):
        # (x - 2)(x^2 + 1)
        roots = real_cubic_roots(1.0, -2.0, 1.0, -2.0)
        assert len(roots) == 1
        assert roots[0] == pytest.approx(2.0)

    def test_quadratic_fallback(self):
        roots = sorted(real_cubic_roots(0.0, 1.0, -3.0, 2.0))
        assert np.allclose(roots, [1.0, 2.0])

    def test_random_polynomials_against_numpy(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            coeffs = rng.standard_normal(4)
            mine = sorted(real_cubic_roots(*coeffs))
            reference = sorted(r.real for r in np.roots(coeffs)
                               if abs(r.imag) < 1e-9 * max(1.0, abs(r.real)))
            assert len(mine) == len(reference)
            for a, b in zip(mine, reference):
                assert a == pytest.approx(b, abs=1e-7)


class TestFundamentalSolvers:
    def test_f7pt_recovers_ground_truth(self, scenes):
        rng = np.random.default_rng(1)
        for scene in scenes:
            idx = spanning_indices(scene, 7, rng)
            out = solve_f_7pt(scene.pairs[idx])
            assert 1 <= len(out.models) <= 3
            assert best_gap(out.models, scene.f) < 1e-8

    def test_f4sift_recovers_ground_truth(self, scenes):
        rng = np.random.default_rng(2)
        for scene in scenes:
            idx = spanning_indices(scene, 4, rng)
            out = solve_f_4sift(scene.correspondences[idx])
            assert 1 <= len(out.models) <= 3
            assert best_gap(out.models, scene.f) < 1e-8

    def test_f4sift_postconditions(self, scenes):
        rng = np.random.default_rng(3)
        for scene in scenes[:10]:
            idx = spanning_indices(scene, 4, rng)
            out = solve_f_4sift(scene.correspondences[idx])
            for model, residual in zip(out.models, out.row_residuals):
                assert abs(model.det()) < 1e-10
                assert residual < 1e-10

    def test_f4sift_duplicate_correspondence(self, scene):
        sample = scene.correspondences[[0, 0, 11, 13]]
        with pytest.raises(DegenerateSampleError):
            solve_f_4sift(sample)

    def test_f4sift_best_conditioned_flag(self, scene):
        rng = np.random.default_rng(4)
        idx = spanning_indices(scene, 4, rng)
        out = solve_f_4sift(scene.correspondences[idx], use_best_conditioned=True)
        assert best_gap(out.models, scene.f) < 1e-8

    def test_f7pt_wrong_count(self, scene):
        with pytest.raises(ValueError):
            solve_f_7pt(scene.pairs[:6])

    def test_f8pt_recovers_ground_truth(self, scenes):
        rng = np.random.default_rng(5)
        for scene in scenes[:10]:
            idx = spanning_indices(scene, 8, rng)
            model = solve_f_8pt(scene.pairs[idx])
            assert matrix_gap(model, scene.f) < 1e-8

    def test_f8pt_beats_worst_subset(self):
        # subset-enumeration oracle at small n
        rng = np.random.default_rng(6)
        scene = generate_scene(SyntheticConfig(points_per_plane=6), rng)
        noisy = add_noise(scene, 1.0, rng)
        pairs = noisy.pairs
        held = scene.pairs  # clean geometry for evaluation
        full_err = np.mean(symmetric_epipolar_errors(solve_f_8pt(pairs), held))
        from itertools import combinations

        worst = 0.0
        for subset in combinations(range(12), 8):
            try:
                err = np.mean(symmetric_epipolar_errors(solve_f_8pt(pairs[list(subset)]), held))
            except SolverError:
                continue
            worst = max(worst, err)
        assert full_err < worst

    def test_f8pt_collinear_points(self):
        rng = np.random.default_rng(7)
        t = np.linspace(0.0, 1.0, 8)
        p1 = np.stack([100.0 * t, 50.0 * t], axis=1)
        p2 = p1 + rng.uniform(10.0, 20.0, 2)
        with pytest.raises(DegenerateSampleError):
            solve_f_8pt(np.hstack([p1, p2]))

    def test_f8pt_needs_eight(self, scene):
        with pytest.raises(ValueError):
            solve_f_8pt(scene.pairs[:7])

    def test_translation_equivariance(self, scenes):
        rng = np.random.default_rng(8)
        shift = np.array([37.0, -12.0])
        t_inv = np.array([[1.0, 0.0, -shift[0]], [0.0, 1.0, -shift[1]], [0.0, 0.0, 1.0]])
        for scene in scenes[:10]:
            idx = spanning_indices(scene, 7, rng)
            base = solve_f_7pt(scene.pairs[idx])
            shifted_pairs = scene.pairs[idx] + np.tile(shift, 2)
            shifted = solve_f_7pt(shifted_pairs)
            for model in base.models:
                expected = t_inv.T @ model.m @ t_inv
                expected /= np.linalg.norm(expected)
                gap = min(best_gap(shifted.models, expected),
                          best_gap(shifted.models, -expected))
                assert gap < 1e-6

    def test_translation_equivariance_f4sift(self, scenes):
        rng = np.random.default_rng(9)
        shift = np.array([-21.0, 8.5])
        t_inv = np.array([[1.0, 0.0, -shift[0]], [0.0, 1.0, -shift[1]], [0.0, 0.0, 1.0]])
        for scene in scenes[:10]:
            idx = spanning_indices(scene, 4, rng)
            base = solve_f_4sift(scene.correspondences[idx])
            moved = scene.correspondences[idx].copy()
            moved[:, 0:2] += shift
            moved[:, 4:6] += shift
            shifted = solve_f_4sift(moved)
            for model in base.models:
                expected = t_inv.T @ model.m @ t_inv
                expected /= np.linalg.norm(expected)
                gap = min(best_gap(shifted.models, expected),
                          best_gap(shifted.models, -expected))
                assert gap < 1e-6


class TestEssentialSolvers:
    def test_e3sift_recovers_ground_truth(self, scenes):
        rng = np.random.default_rng(10)
        for scene in scenes:
            idx = spanning_indices(scene, 3, rng)
            out = solve_e_3sift(scene.correspondences[idx], scene.k1, scene.k2)
            assert len(out.models) == 1
            assert best_gap(out.models, scene.e) < 1e-6

    def test_e3sift_pose_recovery(self, scenes):
        rng = np.random.default_rng(11)
        for scene in scenes[:10]:
            idx = spanning_indices(scene, 3, rng)
            out = solve_e_3sift(scene.correspondences[idx], scene.k1, scene.k2)
            pose = decompose_essential(out.models[0], scene.pairs, scene.k1, scene.k2)
            assert rotation_error(pose.rotation, scene.pose.rotation) < 1e-4
            assert translation_error(pose.translation, scene.pose.translation) < 1e-4

    def test_e3sift_postconditions(self, scenes):
        rng = np.random.default_rng(12)
        for scene in scenes[:10]:
            idx = spanning_indices(scene, 3, rng)
            out = solve_e_3sift(scene.correspondences[idx], scene.k1, scene.k2)
            assert out.extras["trace_residual"] < 1e-8
            assert abs(out.models[0].det()) < 1e-10
            assert out.row_residuals[0] < 1e-8

    def test_e3sift_single_model_many_samples(self, scenes):
        rng = np.random.default_rng(13)
        count = 0
        for _ in range(300):
            scene = scenes[rng.integers(len(scenes))]
            idx = spanning_indices(scene, 3, rng)
            try:
                out = solve_e_3sift(scene.correspondences[idx], scene.k1, scene.k2)
            except SolverError:
                continue
            assert len(out.models) <= 1
            count += 1
        assert count > 250

    def test_e3sift_monomial_consistency(self, scenes):
        rng = np.random.default_rng(14)
        for scene in scenes[:10]:
            idx = spanning_indices(scene, 3, rng)
            out = solve_e_3sift(scene.correspondences[idx], scene.k1, scene.k2)
            y = out.extras["y"]
            assert abs(y[7] ** 3 - y[0]) < 1e-6 * max(1.0, abs(y[0]))
            assert abs(y[8] ** 3 - y[1]) < 1e-6 * max(1.0, abs(y[1]))

    def test_e3sift_determinism(self, scene):
        rng = np.random.default_rng(15)
        idx = spanning_indices(scene, 3, rng)
        a = solve_e_3sift(scene.correspondences[idx], scene.k1, scene.k2)
        b = solve_e_3sift(scene.correspondences[idx], scene.k1, scene.k2)
        assert np.array_equal(a.models[0].m, b.models[0].m)
        assert a.extras["alpha"] == b.extras["alpha"]

    def test_e5pt_recovers_ground_truth(self, scenes):
        rng = np.random.default_rng(16)
        for scene in scenes:
            idx = spanning_indices(scene, 5, rng)
            out = solve_e_5pt(scene.pairs[idx], scene.k1, scene.k2)
            assert 1 <= len(out.models) <= 10
            assert best_gap(out.models, scene.e) < 1e-6

    def test_e5pt_models_satisfy_sample(self, scenes):
        rng = np.random.default_rng(17)
        for scene in scenes[:10]:
            idx = spanning_indices(scene, 5, rng)
            out = solve_e_5pt(scene.pairs[idx], scene.k1, scene.k2)
            assert out.row_residuals and max(out.row_residuals) < 1e-10

    def test_normalized_sift_round_trip_angles(self, scene):
        local = normalize_sift_correspondences(scene.correspondences, scene.k1, scene.k2)
        # square pixels: angles survive the normalization exactly up to wrap
        delta = np.mod(local[:, 3] - scene.correspondences[:, 3], 2 * math.pi)
        delta = np.minimum(delta, 2 * math.pi - delta)
        assert np.max(delta) < 1e-12


class TestFocalSolvers:
    def test_ff3sift_recovers_focal(self, scenes):
        # near-double roots can displace a converged solution by a few 1e-6
        # relative, so single draws get a loose cap and the batch a tight one
        rng = np.random.default_rng(18)
        errors = []
        for scene in scenes:
            idx = spanning_indices(scene, 3, rng)
            out = solve_f_focal_3sift(scene.correspondences[idx], scene.principal_point)
            assert 1 <= len(out.models) <= 15
            errors.append(min(abs(m.focal - scene.focal) / scene.focal for m in out.models))
            assert errors[-1] < 1e-4
            assert min(matrix_gap(m.fundamental, scene.f) for m in out.models) < 1e-4
        assert np.median(errors) < 1e-6

    def test_ff6pt_recovers_focal(self, scenes):
        rng = np.random.default_rng(19)
        errors = []
        for scene in scenes:
            idx = spanning_indices(scene, 6, rng)
            out = solve_f_focal_6pt(scene.pairs[idx], scene.principal_point)
            assert 1 <= len(out.models) <= 15
            errors.append(min(abs(m.focal - scene.focal) / scene.focal for m in out.models))
            assert errors[-1] < 1e-4
        assert np.median(errors) < 1e-6

    def test_focal_postconditions(self, scenes):
        rng = np.random.default_rng(20)
        for scene in scenes[:10]:
            idx = spanning_indices(scene, 3, rng)
            out = solve_f_focal_3sift(scene.correspondences[idx], scene.principal_point)
            for model, res in zip(out.models, out.extras["constraint_residuals"]):
                assert model.focal > 0.0
                assert abs(model.fundamental.det()) < 1e-10
                assert res < 1e-8  # trace constraint of diag(f,f,1) F diag(f,f,1)

    def test_back_ends_shared(self):
        # the point and feature variants run through one engine
        import siftpose.robust as robust_module

        assert solvers_module._solve_semicalibrated_rows is robust_module._solve_semicalibrated_rows

    def test_engine_deterministic_on_same_rows(self, scene):
        rng = np.random.default_rng(21)
        idx = spanning_indices(scene, 3, rng)
        from siftpose.solvers import _semicalibrated_setup, _transform_sift

        corr = scene.correspondences[idx]
        t, s = _semicalibrated_setup(corr[:, 0:2], corr[:, 4:6], scene.principal_point)
        local = _transform_sift(corr, t, t)
        rows = np.empty((6, 9))
        rows[0::2] = epipolar_rows(local[:, [0, 1, 4, 5]])
        rows[1::2] = sift_rows(local)
        first = solvers_module._solve_semicalibrated_rows(rows)
        second = solvers_module._solve_semicalibrated_rows(rows)
        assert len(first) == len(second)
        for (mat_a, focal_a, res_a), (mat_b, focal_b, res_b) in zip(first, second):
            assert np.array_equal(mat_a, mat_b)
            assert focal_a == focal_b and res_a == res_b


class TestDispatch:
    def test_registry_sample_sizes(self):
        from siftpose.solvers import MINIMAL_SOLVERS

        assert {k: v.sample_size for k, v in MINIMAL_SOLVERS.items()} == {
            "f4sift": 4, "f7pt": 7, "e3sift": 3, "e5pt": 5, "ff3sift": 3, "ff6pt": 6}

    def test_run_minimal_solver(self, scene):
        rng = np.random.default_rng(22)
        idx = spanning_indices(scene, 4, rng)
        out = run_minimal_solver("f4sift", scene.correspondences[idx])
        assert best_gap(out.models, scene.f) < 1e-8
        with pytest.raises(ValueError):
            run_minimal_solver("f4sift", scene.correspondences[:3])
        with pytest.raises(ValueError):
            run_minimal_solver("nope", scene.correspondences[:3])
