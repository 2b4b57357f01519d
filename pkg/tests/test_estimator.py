"""Euler steps, difference quotients, and the Monte Carlo loss estimators."""

import math

import numpy as np
import pytest

import ardo
from ardo.errors import DivergenceError
from ardo.estimator import (
    NORM_FLOOR,
    StepParams,
    boundary_directional_difference,
    check_sampling_condition,
    estimate_loss,
    euler_step,
    generator_difference,
    sample_batch,
)
from ardo.geometry import Domain
from ardo.problems import PdeProblem


def _constant_problem(dim=1, drift=0.0, sigma=1.0, lower=-1.0, upper=1.0):
    """Box problem with constant coefficients and zero data, for step tests."""
    dom = Domain.box([lower] * dim, [upper] * dim)
    return PdeProblem(
        domain=dom,
        sigma=lambda x, t: sigma * np.broadcast_to(np.eye(dim), (x.shape[0], dim, dim)),
        n_w=dim,
        drift=lambda x, t: np.full((x.shape[0], dim), drift),
        source=lambda f, x, t: np.zeros(x.shape[0]),
        dirichlet_data=lambda x, t: np.zeros(x.shape[0]),
    )


def _zero_f(x, t=None):
    return np.zeros(np.atleast_2d(x).shape[0])


class TestEulerStep:
    def test_degenerate_sde_returns_start_point(self):
        """b = 0 and sigma = 0 move nothing, exactly."""
        problem = _constant_problem(dim=2, drift=0.0, sigma=0.0)
        rng = np.random.default_rng(0)
        x = np.array([0.25, -0.5])
        out = euler_step(problem, x, 0.1, rng)
        np.testing.assert_array_equal(out, x)

    def test_pure_drift(self):
        """sigma = 0 gives x + tau * b exactly."""
        problem = _constant_problem(dim=1, drift=3.0, sigma=0.0)
        rng = np.random.default_rng(0)
        out = euler_step(problem, np.array([0.2]), 0.1, rng)
        np.testing.assert_allclose(out, np.array([0.2 + 0.1 * 3.0]), rtol=0, atol=0)

    def test_gaussian_moments(self):
        """b = 0, sigma = I: displacement is N(0, tau I) in each coordinate."""
        problem = _constant_problem(dim=2, drift=0.0, sigma=1.0, lower=-4.0, upper=4.0)
        rng = np.random.default_rng(314)
        tau = 0.01
        m = 1_000_000
        x = np.zeros((m, 2))
        moved = euler_step(problem, x, tau, rng)
        disp = moved - x
        tol_mean = 4.0 * math.sqrt(tau / m)
        assert np.all(np.abs(disp.mean(axis=0)) < tol_mean)
        assert np.all(np.abs(disp.var(axis=0) - tau) < 0.01 * tau)

    def test_batch_rows_move_independently(self):
        problem = _constant_problem(dim=1)
        rng = np.random.default_rng(7)
        moved = euler_step(problem, np.zeros((32, 1)), 1e-2, rng)
        assert np.unique(moved).size == 32

    def test_parabolic_step_advances_time(self):
        problem = ardo.builtin_problem("heat_parabolic", 1)
        rng = np.random.default_rng(3)
        moved, t_new = euler_step(problem, np.array([[0.1]]), 0.05, rng, t=0.2)
        assert t_new == pytest.approx(0.25)
        assert moved.shape == (1, 1)


class TestGeneratorDifference:
    def test_linear_test_function_constant_drift(self):
        """rho(x) = x with a = 1, b = beta: the quotient averages to beta.

        The remainder vanishes for a linear function with constant
        coefficients, so only Monte Carlo noise of scale 1/sqrt(tau m)
        separates the sample mean from beta, at any tau.
        """
        beta = 0.7
        problem = _constant_problem(dim=1, drift=beta, sigma=1.0)
        rho = lambda x, t=None: np.atleast_2d(x)[:, 0]
        step = StepParams(tau=0.05, tau_tilde=1e-3)
        rng = np.random.default_rng(11)
        m = 100_000
        vals = generator_difference(problem, rho, np.zeros((m, 1)), step, rng)
        tol = 4.0 / math.sqrt(step.tau * m)
        assert abs(vals.mean() - beta) < tol

    def test_quadratic_test_function_pure_diffusion(self):
        """rho(x) = x^2 with a = 1, b = 0: expectation is 1 for every tau."""
        problem = _constant_problem(dim=1, drift=0.0, sigma=1.0)
        rho = lambda x, t=None: np.atleast_2d(x)[:, 0] ** 2
        rng = np.random.default_rng(12)
        for tau in (0.5, 0.05):
            step = StepParams(tau=tau, tau_tilde=1e-3)
            m = 100_000
            vals = generator_difference(problem, rho, np.zeros((m, 1)), step, rng)
            tol = 4.0 / math.sqrt(tau * m)
            assert abs(vals.mean() - 1.0) < tol

    def test_constant_test_function_is_zero_every_sample(self):
        problem = _constant_problem(dim=2)
        rho = lambda x, t=None: np.full(np.atleast_2d(x).shape[0], 4.25)
        step = StepParams(tau=1e-3, tau_tilde=1e-3)
        rng = np.random.default_rng(13)
        vals = generator_difference(problem, rho, np.zeros((64, 2)), step, rng)
        np.testing.assert_array_equal(vals, np.zeros(64))

    def test_replicates_average(self):
        """K replicates share the base evaluation and average the quotients."""
        problem = _constant_problem(dim=1)
        rho = lambda x, t=None: np.atleast_2d(x)[:, 0] ** 2
        x = np.zeros((4096, 1))
        single = generator_difference(
            problem, rho, x, StepParams(0.1, 1e-3, replicates=1), np.random.default_rng(5)
        )
        averaged = generator_difference(
            problem, rho, x, StepParams(0.1, 1e-3, replicates=8), np.random.default_rng(5)
        )
        assert averaged.var() < single.var()

    def test_overflowing_test_function_raises(self):
        problem = _constant_problem(dim=1)
        rho = lambda x, t=None: np.full(np.atleast_2d(x).shape[0], np.inf)
        step = StepParams(1e-3, 1e-3)
        with pytest.raises(DivergenceError, match="test function overflow"):
            generator_difference(problem, rho, np.zeros((4, 1)), step, np.random.default_rng(1))


class TestBoundaryDirectionalDifference:
    def test_linear_rho_identity_diffusion_exact(self):
        """For rho = w . x and a = I the quotient equals w . nu at any step."""
        problem = _constant_problem(dim=2)
        w = np.array([0.3, -1.2])
        rho = lambda x, t=None: np.atleast_2d(x) @ w
        nu = np.array([0.0, 1.0])
        for tt in (0.5, 1e-2, 1e-6):
            val = boundary_directional_difference(
                problem, rho, np.array([0.1, 1.0]), nu, tau_tilde=tt
            )
            assert val == pytest.approx(w @ nu, rel=1e-9)

    def test_quadratic_on_unit_square_right_face(self):
        """rho = x1^2 at (1, 0), nu = (1, 0), step 0.01: ((1.01)^2 - 1)/0.01."""
        dom = Domain.box([0.0, 0.0], [1.0, 1.0])
        problem = PdeProblem(
            domain=dom,
            sigma=lambda x, t: np.broadcast_to(np.eye(2), (x.shape[0], 2, 2)),
            n_w=2,
            drift=lambda x, t: np.zeros((x.shape[0], 2)),
            source=lambda f, x, t: np.zeros(x.shape[0]),
            dirichlet_data=lambda x, t: np.zeros(x.shape[0]),
        )
        rho = lambda x, t=None: np.atleast_2d(x)[:, 0] ** 2
        val = boundary_directional_difference(
            problem, rho, np.array([1.0, 0.0]), np.array([1.0, 0.0]), tau_tilde=0.01
        )
        assert val == pytest.approx((1.01**2 - 1.0) / 0.01, rel=1e-12)

    def test_zero_diffusion_matrix_gives_zero(self):
        problem = _constant_problem(dim=2, sigma=0.0)
        rho = lambda x, t=None: np.sin(np.atleast_2d(x)).sum(axis=1)
        val = boundary_directional_difference(
            problem, rho, np.array([1.0, 0.3]), np.array([1.0, 0.0]), tau_tilde=0.01
        )
        assert val == 0.0

    def test_boundary_point_argument(self):
        from ardo.geometry import DIRICHLET, BoundaryPoint

        problem = _constant_problem(dim=2)
        rho = lambda x, t=None: np.atleast_2d(x)[:, 0]
        bp = BoundaryPoint(np.array([1.0, 0.0]), np.array([1.0, 0.0]), DIRICHLET)
        direct = boundary_directional_difference(problem, rho, bp, tau_tilde=0.01)
        split = boundary_directional_difference(
            problem, rho, bp.position, bp.normal, tau_tilde=0.01
        )
        assert direct == split
        with pytest.raises(ValueError, match="either"):
            boundary_directional_difference(problem, rho, bp, bp.normal, tau_tilde=0.01)


class TestSampleBatch:
    def test_counts_and_shapes(self):
        problem = ardo.builtin_problem("ou_stationary", 2)
        rng = np.random.default_rng(0)
        batch = sample_batch(problem, 100, 40, 0, rng)
        assert batch.interior.shape == (100, 2)
        assert batch.dirichlet.positions.shape == (40, 2)
        assert batch.neumann is None
        assert batch.interior_times is None and batch.initial is None

    def test_parabolic_batch_carries_times_and_initial_points(self):
        problem = ardo.builtin_problem("heat_parabolic", 1)
        rng = np.random.default_rng(0)
        batch = sample_batch(problem, 50, 10, 0, rng, m_initial=25)
        assert batch.interior_times.shape == (50,)
        assert np.all((0 <= batch.interior_times) & (batch.interior_times <= problem.horizon))
        assert batch.initial.shape == (25, 1)

    def test_zero_interior_rejected(self):
        problem = ardo.builtin_problem("ou_stationary", 1)
        with pytest.raises(ValueError, match="m_interior"):
            sample_batch(problem, 0, 8, 0, np.random.default_rng(0))


class TestEstimateLoss:
    def test_all_integrands_zero_gives_exact_zero(self):
        """f = 0 with R(0) = 0 and zero boundary data: every term is 0.0."""
        problem = _constant_problem(dim=1)
        rng = np.random.default_rng(21)
        batch = sample_batch(problem, 256, 64, 0, rng)
        rho = lambda x, t=None: np.cos(np.atleast_2d(x)[:, 0])
        est = estimate_loss(problem, _zero_f, rho, batch, StepParams(1e-2, 1e-2), rng)
        assert est.s_interior == 0.0
        assert est.s_dirichlet == 0.0
        assert est.s_neumann == 0.0
        assert est.total == 0.0

    def test_weak_form_identity_at_exact_solution(self):
        """With f = f* the three terms cancel to Monte Carlo noise.

        Tight step (tau = 1e-4) keeps the difference-quotient bias below the
        noise scale; the total must vanish within five combined standard
        errors.
        """
        problem = ardo.builtin_problem("ou_stationary", 1)
        exact = problem.exact_solution
        f_eval = lambda x, t=None: exact(np.atleast_2d(x), None)
        rho = lambda x, t=None: np.cos(0.5 * np.atleast_2d(x)[:, 0]) ** 2 * (
            6.25 - np.atleast_2d(x)[:, 0] ** 2
        )
        rng = np.random.default_rng(99)
        batch = sample_batch(problem, 1_000_000, 1000, 0, rng)
        est = estimate_loss(problem, f_eval, rho, batch, StepParams(1e-4, 1e-4), rng)
        assert abs(est.total) < 5.0 * est.combined_std_error

    def test_normalized_total_is_squared_raw_over_test_norm(self):
        """Same batch and same rng seed: normalized total equals s^2/max(n, floor)."""
        problem = ardo.builtin_problem("ou_stationary", 1)
        rng = np.random.default_rng(4)
        batch = sample_batch(problem, 512, 64, 0, rng)
        f_eval = lambda x, t=None: np.atleast_2d(x)[:, 0] * 0.2
        rho = lambda x, t=None: np.sin(np.atleast_2d(x)[:, 0])
        raw = estimate_loss(
            problem, f_eval, rho, batch, StepParams(1e-3, 1e-3),
            np.random.default_rng(1234), mode="raw",
        )
        norm = estimate_loss(
            problem, f_eval, rho, batch, StepParams(1e-3, 1e-3),
            np.random.default_rng(1234), mode="normalized",
        )
        assert norm.raw_total == raw.total
        assert norm.total == raw.total**2 / max(norm.test_norm, NORM_FLOOR)
        assert norm.test_norm == raw.test_norm

    def test_linearity_in_test_function(self):
        """Scaling rho by c scales every term by c, replicate for replicate."""
        problem = ardo.builtin_problem("ou_stationary", 1)
        rng = np.random.default_rng(8)
        batch = sample_batch(problem, 1024, 128, 0, rng)
        f_eval = lambda x, t=None: np.exp(-np.atleast_2d(x)[:, 0] ** 2) * 0.7
        rho = lambda x, t=None: np.sin(np.atleast_2d(x)[:, 0]) + 0.1
        c = -3.5
        rho_scaled = lambda x, t=None: c * rho(x, t)
        a = estimate_loss(
            problem, f_eval, rho, batch, StepParams(1e-3, 1e-3),
            np.random.default_rng(777), mode="raw",
        )
        b = estimate_loss(
            problem, f_eval, rho_scaled, batch, StepParams(1e-3, 1e-3),
            np.random.default_rng(777), mode="raw",
        )
        assert b.s_interior == pytest.approx(c * a.s_interior, rel=1e-12)
        assert b.s_dirichlet == pytest.approx(c * a.s_dirichlet, rel=1e-12)
        assert b.total == pytest.approx(c * a.total, rel=1e-12)

    def test_trace_reconstructs_raw_total_from_rho_rows(self):
        """The raw sum is a linear functional of rho evaluations: coefficients
        dotted with rho at the trace points reproduce the total."""
        problem = ardo.builtin_problem("ou_stationary", 1)
        rng = np.random.default_rng(31)
        batch = sample_batch(problem, 512, 32, 0, rng)
        f_eval = lambda x, t=None: 0.4 * np.cos(np.atleast_2d(x)[:, 0])
        rho = lambda x, t=None: np.sin(1.3 * np.atleast_2d(x)[:, 0]) + 0.2
        est = estimate_loss(
            problem, f_eval, rho, batch, StepParams(1e-3, 1e-3),
            np.random.default_rng(5), mode="raw", keep_trace=True,
        )
        rebuilt = float(est.trace.rho_coeffs @ rho(est.trace.rho_points))
        assert rebuilt == pytest.approx(est.total, rel=1e-12, abs=1e-14)

    def test_trace_reconstructs_f_dependence(self):
        """With R = 0 the total is f-linear: f rows plus the Dirichlet term."""
        problem = ardo.builtin_problem("ou_stationary", 1)
        rng = np.random.default_rng(32)
        batch = sample_batch(problem, 512, 32, 0, rng)
        f_eval = lambda x, t=None: 0.4 * np.cos(np.atleast_2d(x)[:, 0])
        rho = lambda x, t=None: np.sin(1.3 * np.atleast_2d(x)[:, 0]) + 0.2
        est = estimate_loss(
            problem, f_eval, rho, batch, StepParams(1e-3, 1e-3),
            np.random.default_rng(6), mode="raw", keep_trace=True,
        )
        rebuilt = float(est.trace.f_coeffs @ f_eval(est.trace.f_points)) + est.s_dirichlet
        assert rebuilt == pytest.approx(est.total, rel=1e-12, abs=1e-14)

    def test_parabolic_weak_form_identity(self):
        """Space-time identity for the heat problem at its exact solution."""
        problem = ardo.builtin_problem("heat_parabolic", 1)
        exact = problem.exact_solution

        def f_eval(x, t):
            return exact(np.atleast_2d(x), t)

        def rho(x, t):
            # must vanish at t = T for the time boundary term to drop out
            x = np.atleast_2d(x)[:, 0]
            return (problem.horizon - t) * np.cos(0.4 * x) * (
                problem.domain.upper[0] ** 2 - x**2
            )

        rng = np.random.default_rng(55)
        batch = sample_batch(problem, 400_000, 1000, 0, rng)
        est = estimate_loss(problem, f_eval, rho, batch, StepParams(1e-4, 1e-4), rng)
        assert abs(est.total) < 5.0 * est.combined_std_error

    def test_semilinear_source_enters_through_pointwise_values(self):
        """Weak-form identity holds with a source nonlinear in f."""
        problem = ardo.builtin_problem("manufactured_semilinear", 1)
        exact = problem.exact_solution
        f_eval = lambda x, t=None: exact(np.atleast_2d(x), None)
        rho = lambda x, t=None: (1.0 - np.atleast_2d(x)[:, 0] ** 2) * np.exp(
            -np.atleast_2d(x)[:, 0]
        )
        rng = np.random.default_rng(66)
        batch = sample_batch(problem, 1_000_000, 1000, 0, rng)
        est = estimate_loss(problem, f_eval, rho, batch, StepParams(1e-4, 1e-4), rng)
        assert abs(est.total) < 5.0 * est.combined_std_error

    def test_empty_interior_rejected(self):
        problem = ardo.builtin_problem("ou_stationary", 1)
        rng = np.random.default_rng(0)
        batch = sample_batch(problem, 4, 2, 0, rng)
        batch.interior = np.zeros((0, 1))
        with pytest.raises(ValueError, match="interior"):
            estimate_loss(problem, _zero_f, lambda x, t=None: _zero_f(x), batch,
                          StepParams(1e-3, 1e-3), rng)

    def test_non_finite_solution_value_reports_divergence(self):
        problem = ardo.builtin_problem("ou_stationary", 1)
        rng = np.random.default_rng(0)
        batch = sample_batch(problem, 16, 4, 0, rng)
        bad_f = lambda x, t=None: np.full(np.atleast_2d(x).shape[0], np.nan)
        rho = lambda x, t=None: np.ones(np.atleast_2d(x).shape[0])
        with pytest.raises(DivergenceError, match="diverged"):
            estimate_loss(problem, bad_f, rho, batch, StepParams(1e-3, 1e-3), rng)

    def test_unknown_mode_rejected(self):
        problem = ardo.builtin_problem("ou_stationary", 1)
        rng = np.random.default_rng(0)
        batch = sample_batch(problem, 8, 2, 0, rng)
        with pytest.raises(ValueError, match="mode"):
            estimate_loss(problem, _zero_f, lambda x, t=None: _zero_f(x), batch,
                          StepParams(1e-3, 1e-3), rng, mode="squared")

    def test_test_norm_estimates_rho_squared_integral(self):
        """test_norm is the Monte Carlo volume-weighted mean of rho^2."""
        problem = ardo.builtin_problem("ou_stationary", 1)
        rng = np.random.default_rng(17)
        batch = sample_batch(problem, 200_000, 8, 0, rng)
        rho = lambda x, t=None: np.ones(np.atleast_2d(x).shape[0])
        est = estimate_loss(problem, _zero_f, rho, batch, StepParams(1e-3, 1e-3), rng)
        assert est.test_norm == pytest.approx(problem.domain.interior_measure, rel=1e-12)

    def test_thread_count_never_changes_results(self, monkeypatch):
        """Chunked evaluation with 1 or 3 lanes is bitwise identical."""
        problem = ardo.builtin_problem("ou_stationary", 2)
        f_eval = lambda x, t=None: np.sin(np.atleast_2d(x)).prod(axis=1)
        rho = lambda x, t=None: np.cos(np.atleast_2d(x)).sum(axis=1)

        def run():
            rng = np.random.default_rng(2024)
            batch = sample_batch(problem, 9000, 500, 0, rng)
            return estimate_loss(problem, f_eval, rho, batch, StepParams(1e-3, 1e-3), rng)

        monkeypatch.setenv("ARDO_THREADS", "1")
        a = run()
        monkeypatch.setenv("ARDO_THREADS", "3")
        b = run()
        assert a.total == b.total
        assert a.s_interior == b.s_interior
        assert a.test_norm == b.test_norm


class TestSamplingCondition:
    def test_comfortable_ratio_is_ok(self):
        check = check_sampling_condition(StepParams(1e-3, 1e-3), 100_000)
        assert check.ok and check.ratio == pytest.approx(100.0)

    def test_small_ratio_warns_with_ratio(self):
        check = check_sampling_condition(StepParams(1e-4, 1e-4), 10_000)
        assert not check.ok
        assert check.ratio == pytest.approx(1.0)
        assert "sampling condition" in check.message

    def test_threshold_edge_inclusive(self):
        check = check_sampling_condition(StepParams(1.0, 1.0), 10)
        assert check.ok and check.ratio == pytest.approx(10.0)


class TestStepParams:
    def test_rejects_nonpositive_steps(self):
        with pytest.raises(ValueError, match="tau"):
            StepParams(0.0, 1e-3)
        with pytest.raises(ValueError, match="tau_tilde"):
            StepParams(1e-3, -1.0)
        with pytest.raises(ValueError, match="replicates"):
            StepParams(1e-3, 1e-3, replicates=0)
