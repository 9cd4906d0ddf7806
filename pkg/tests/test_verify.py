# File: tests/test_verify.py
"""Tests for Wasserstein distances, error estimators and the bound checks."""
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from src.errors import PreconditionError
from src.noise import NoiseSource
from src.verify import (
    MAX_EXACT_SAMPLES,
    BoundReport,
    EmpiricalDist,
    FunctionField,
    GaussianMixture,
    OracleField,
    PerturbedContraction,
    SUITES,
    btt_gradient_check,
    check_lemma1,
    check_lemma3,
    consistency_grid,
    estimate_consistency_error,
    estimate_fm_error,
    estimate_lipschitz,
    exact_flow,
    lemma3_bound,
    optimal_plan,
    run_suite,
    step_sizes,
    theorem1_report,
    theorem2_bound,
    w2_brute_force,
    w2_exact,
    w2_floor,
)


class TestWasserstein:
    """Test suite for exact W2 between sample sets."""

    def test_identical_sets(self):
        p = NoiseSource(0).normal((6, 2))
        assert w2_exact(p, p[::-1]) == 0.0

    def test_one_dimensional_points(self):
        assert w2_exact(np.array([[0.0]]), np.array([[1.0]])) == 1.0

    def test_square_corners(self):
        """Both matchings of two unit-offset pairs cost 1."""
        p = np.array([[0.0, 0.0], [1.0, 0.0]])
        q = np.array([[0.0, 1.0], [1.0, 1.0]])
        assert w2_exact(p, q) == pytest.approx(1.0)

    def test_plan_is_a_permutation(self):
        plan = optimal_plan(NoiseSource(1).normal((9, 3)), NoiseSource(2).normal((9, 3)))
        assert sorted(plan.permutation.tolist()) == list(range(9))

    @settings(max_examples=40, deadline=None)
    @given(st.integers(min_value=1, max_value=6), st.integers(min_value=1, max_value=3), st.integers(min_value=0, max_value=10_000))
    def test_matches_brute_force(self, n, d, seed):
        rng = NoiseSource(seed)
        p, q = rng.spawn(0).normal((n, d)), rng.spawn(1).normal((n, d))
        assert w2_exact(p, q) == pytest.approx(w2_brute_force(p, q), abs=1e-9)
        assert w2_exact(p, q) == w2_exact(q, p)

    def test_shape_mismatch(self):
        with pytest.raises(PreconditionError):
            w2_exact(np.zeros((2, 2)), np.zeros((3, 2)))

    def test_size_limit(self):
        big = np.zeros((MAX_EXACT_SAMPLES + 1, 1))
        with pytest.raises(PreconditionError):
            w2_exact(big, big)

    def test_rejects_non_finite(self):
        with pytest.raises(PreconditionError):
            EmpiricalDist(np.array([[np.nan]]))


class TestGaussianMixture:
    def test_point_drift(self):
        """For a point target the drift is (a1 - z) / (1 - t)."""
        problem = GaussianMixture.point([1.0])
        z = np.array([[0.2], [-1.0]])
        np.testing.assert_allclose(problem.drift(z, 0.25), (1.0 - z) / 0.75)

    def test_point_drift_undefined_at_one(self):
        with pytest.raises(PreconditionError):
            GaussianMixture.point([1.0]).drift(np.zeros((1, 1)), 1.0)

    def test_exact_flow_is_straight_for_a_point(self):
        problem = GaussianMixture.point([2.0, -2.0])
        z0 = np.array([[0.5, 0.5]])
        np.testing.assert_allclose(exact_flow(problem, z0, 0.0, 0.5), 0.5 * z0 + 0.5 * np.array([[2.0, -2.0]]), atol=1e-8)

    def test_mixture_samples_land_near_modes(self):
        problem = GaussianMixture.four_modes()
        samples = problem.sample(400, NoiseSource(0))
        nearest = np.min(np.linalg.norm(samples[:, None, :] - problem.means[None], axis=-1), axis=1)
        assert np.all(nearest < 0.3)

    def test_bad_weights(self):
        with pytest.raises(PreconditionError):
            GaussianMixture(np.zeros((2, 1)), 0.1, np.array([0.7, 0.7]))

    def test_self_distance_floor(self):
        """Two independent draws of the target are close but not identical."""
        problem = GaussianMixture.four_modes()
        floor = w2_floor(problem, 64, NoiseSource(0))
        assert 0.0 < floor < 0.5
        assert floor == w2_floor(problem, 64, NoiseSource(0))


class TestEstimators:
    """Test suite for the Monte-Carlo error estimates."""

    def test_grids(self):
        assert step_sizes(8) == [0.125, 0.25, 0.5, 1.0]
        assert consistency_grid(2) == [(0.5, 0.0)]
        assert consistency_grid(1) == []
        assert all(t + 2 * h <= 1.0 for h, t in consistency_grid(16))

    def test_constant_field_is_consistent(self):
        field = FunctionField(lambda z, t, h: np.full_like(z, 0.3), 2)
        estimate = estimate_consistency_error(field, NoiseSource(0).normal((50, 2)), 8, NoiseSource(1))
        assert estimate.worst == 0.0
        assert len(estimate.cells) == len(consistency_grid(8))

    def test_identity_field_matches_hand_recursion(self):
        """For s = z the residual is (h / 2) z per sample."""
        data = NoiseSource(0).normal((64, 1))
        rng = NoiseSource(1)
        estimate = estimate_consistency_error(FunctionField(lambda z, t, h: z, 1), data, 4, rng)
        for cell, (h, t) in enumerate(consistency_grid(4)):
            z = (1.0 - t) * rng.spawn(cell).normal(data.shape) + t * data
            expected = float(np.mean(np.sum((0.5 * h * z) ** 2, axis=1)))
            assert estimate.cells[(h, t)] == pytest.approx(expected, rel=1e-12)

    def test_second_velocity_is_read_after_the_first_step(self):
        """For s = t the two half steps differ by h, leaving a residual of h / 2."""
        field = FunctionField(lambda z, t, h: np.full_like(z, t), 1)
        estimate = estimate_consistency_error(field, NoiseSource(0).normal((20, 1)), 8, NoiseSource(1))
        for h, t in consistency_grid(8):
            assert estimate.cells[(h, t)] == pytest.approx((h / 2) ** 2, rel=1e-12)

    def test_oracle_has_no_fm_error(self):
        problem = GaussianMixture.four_modes()
        estimate = estimate_fm_error(OracleField(problem), problem, 4, 100, NoiseSource(0))
        assert estimate.eps == 0.0

    def test_zero_field_against_point_target(self):
        """E(1 - z)^2 = 2 for z ~ N(0, 1)."""
        problem = GaussianMixture.point([1.0])
        field = FunctionField(lambda z, t, h: np.zeros_like(z), 1)
        estimate = estimate_fm_error(field, problem, 8, 40_000, NoiseSource(0), t_grid=[0.0])
        assert estimate.worst == pytest.approx(2.0, abs=0.05)

    def test_lipschitz_of_linear_map(self):
        points = NoiseSource(0).normal((100, 2))
        estimate = estimate_lipschitz(lambda y: 3.0 * y, points, NoiseSource(1), pairs=500)
        assert estimate == pytest.approx(3.0)


class TestBounds:
    """Test suite for the closed-form bounds and their checks."""

    def test_lemma3_closed_form(self):
        assert lemma3_bound(1.0, 0.125, 0.01) == pytest.approx((1.125**8 - 1) * 0.01)
        assert lemma3_bound(1.0, 0.125, 0.01) == pytest.approx(0.01566, abs=1e-5)

    def test_lemma3_zero_lipschitz_limit(self):
        assert lemma3_bound(0.0, 0.25, 0.02) == 0.02

    def test_exact_steps_have_no_error(self):
        model = PerturbedContraction(0.0, 2, NoiseSource(0))
        report = check_lemma3(model, model.flow, 0.125, 1.0, 0.0, 200, NoiseSource(1))
        assert report.measured < 1e-12
        assert report.satisfied

    def test_perturbed_steps_stay_under_bound(self):
        model = PerturbedContraction(0.01, 2, NoiseSource(0))
        report = check_lemma3(model, model.flow, 0.125, 1.0, 0.01, 500, NoiseSource(1))
        assert 0.0 < report.measured <= report.bound
        assert report.lipschitz_est <= 1.0 + 1e-9

    def test_theorem2_bound_is_finite_at_zero_lipschitz(self):
        value = theorem2_bound(0.0, 1.0, 1.0, 0.1, 0.1, 8, 0.5)
        assert math.isfinite(value) and value > 0

    def test_theorem2_bound_grows_with_errors(self):
        small = theorem2_bound(1.0, 1.0, 1.0, 0.01, 0.01, 8, 0.25)
        large = theorem2_bound(1.0, 1.0, 1.0, 0.1, 0.1, 8, 0.25)
        assert large > small

    def test_lemma1_oracle(self):
        problem = GaussianMixture.four_modes()
        report = check_lemma1(OracleField(problem), problem, 4, 64, NoiseSource(0))
        assert report.eps_fm == 0.0
        assert report.measured >= 0.0 and math.isfinite(report.bound)

    def test_theorem1_report_columns(self):
        problem = GaussianMixture.point([0.5, -0.5])
        reports = theorem1_report(OracleField(problem), problem, 2, 32, NoiseSource(0))
        assert [r.h for r in reports] == [0.5, 1.0]
        assert all(isinstance(r, BoundReport) and len(r.values()) == len(BoundReport.COLUMNS) for r in reports)
        assert all(r.w2 == 0.0 for r in reports)


class TestSuites:
    """Test suite for the verification suites behind the CLI."""

    def test_registered_suites(self):
        assert set(SUITES) == {"gradcheck", "ot", "lemma3", "theorem1"}

    def test_unknown_suite(self):
        with pytest.raises(PreconditionError, match="valid suites"):
            run_suite("nope")

    def test_ot_suite(self):
        result = run_suite("ot", seed=0, instances=30)
        assert result.passed
        assert [row[0] for row in result.rows] == ["brute_force", "symmetry", "triangle"]

    def test_lemma3_suite(self):
        result = run_suite("lemma3", seed=0, n=300)
        assert result.passed
        assert len(result.rows) == 16

    def test_gradcheck_suite(self):
        result = run_suite("gradcheck", seed=0, cases=3)
        assert result.passed, result.rows
        assert len(result.rows) == 3 + 3

    @pytest.mark.parametrize("m", [1, 2, 4])
    def test_btt_gradients(self, m):
        assert btt_gradient_check(m, seed=m) < 1e-3

    @pytest.mark.slow
    def test_theorem1_suite(self):
        """A trained model on the four-mode target stays under the W2 threshold."""
        result = run_suite("theorem1", seed=0)
        assert result.passed, result.rows

    def test_theorem1_rows_include_consistency_ablation(self):
        """One row per step size for the full model, then the alpha_sc=0 copy at h=1."""
        result = run_suite("theorem1", seed=0, steps=2, n=32, m_disc=2)
        assert result.columns == ("model",) + BoundReport.COLUMNS
        assert [row[0] for row in result.rows] == ["shortcut", "shortcut", "no_consistency"]
        ablation = result.rows[-1]
        assert ablation[1] == 1.0
        assert ablation[2] > 0.0
        assert ablation[3:7] == [None, None, None, None]
        assert isinstance(ablation[7], bool)

    @pytest.mark.slow
    def test_consistency_term_sharpens_one_step_samples(self):
        """Without the consistency term the one-step W2 is at least 1.5x worse."""
        result = run_suite("theorem1", seed=0)
        full = next(row for row in result.rows if row[0] == "shortcut" and row[1] == 1.0)
        ablation = result.rows[-1]
        assert ablation[0] == "no_consistency"
        assert ablation[2] >= 1.5 * full[2]
        assert ablation[7] is True
