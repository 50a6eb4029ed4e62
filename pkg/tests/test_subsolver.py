import numpy as np
import pytest
from scipy.optimize import minimize

from qlp.core import DomainError, EvalCounters
from qlp.model import build_model
from qlp.problems import make_eq_qp, make_sphere_quadratic
from qlp.subsolver import (
    InnerStatus,
    SmoothObjective,
    prefer_dual,
    project_ball,
    solve_ball_constrained,
    solve_model_dual,
    solve_unconstrained,
)


def quadratic(center, mod=1.0):
    center = np.asarray(center, float)
    return SmoothObjective(lambda x: 0.5 * mod * np.sum((x - center) ** 2),
                           lambda x: mod * (x - center), mod)


class TestUnconstrained:
    def test_quadratic(self, rng):
        c = rng.standard_normal(5)
        res = solve_unconstrained(quadratic(c), np.zeros(5), 1e-10)
        assert res.converged
        np.testing.assert_allclose(res.minimizer, c, atol=1e-9)

    def test_one_dimensional_model(self, toy):
        M = build_model(toy.oracle, [0.0], 2.0, 2.0, 1.0)
        obj = SmoothObjective(M.value, M.gradient, M.beta)
        res = solve_unconstrained(obj, M.anchor, 1e-10)
        assert res.minimizer[0] == pytest.approx(2.0 / 3.0, abs=1e-9)

    def test_already_optimal(self):
        c = np.array([1.0, -2.0])
        res = solve_unconstrained(quadratic(c), c, 1e-10)
        assert res.iterations <= 1
        np.testing.assert_array_equal(res.minimizer, c)

    def test_budget_reported(self):
        d = np.array([1.0, 1e4])
        obj = SmoothObjective(lambda x: 0.5 * d @ (x - 1) ** 2, lambda x: d * (x - 1), 1.0)
        res = solve_unconstrained(obj, np.zeros(2), 1e-12, max_inner=2)
        assert res.status is InnerStatus.MAX_ITER

    def test_counts_inner_steps(self):
        counters = EvalCounters()
        res = solve_unconstrained(quadratic(np.ones(3)), np.zeros(3), 1e-10, counters=counters)
        assert counters.n_inner_grad_steps >= res.iterations > 0

    def test_ill_conditioned_quadratic(self, rng):
        # L / beta = 1e4
        d = np.geomspace(1.0, 1e4, 30)
        c = rng.standard_normal(30)
        obj = SmoothObjective(lambda x: 0.5 * d @ (x - c) ** 2, lambda x: d * (x - c), 1.0)
        res = solve_unconstrained(obj, np.zeros(30), 1e-8, max_inner=2000)
        assert res.converged and res.iterations <= 2000

    def test_start_independence(self, toy):
        M = build_model(make_eq_qp(10, 4).oracle, np.zeros(10), 5.0, 1.5, 2.0)
        obj = SmoothObjective(M.value, M.gradient, M.beta)
        eps = 1e-8
        a = solve_unconstrained(obj, np.zeros(10), eps).minimizer
        b = solve_unconstrained(obj, np.full(10, 3.0), eps).minimizer
        assert np.linalg.norm(a - b) <= 10 * eps / M.beta

    def test_zero_modulus_rejected(self):
        with pytest.raises(DomainError):
            SmoothObjective(lambda x: 0.0, lambda x: x, 0.0)


class TestBall:
    def test_linear_objective(self, rng):
        g, c, r = rng.standard_normal(4), rng.standard_normal(4), 0.7
        obj = SmoothObjective(lambda y: g @ y + 1e-12 * y @ y, lambda y: g + 2e-12 * y, 2e-12)
        res = solve_ball_constrained(obj, c, r, c, 1e-10)
        np.testing.assert_allclose(res.minimizer, c - r * g / np.linalg.norm(g), atol=1e-8)

    def test_inactive_constraint(self, rng):
        c = rng.standard_normal(3)
        obj = quadratic(c)
        a = solve_ball_constrained(obj, np.zeros(3), 100.0, np.zeros(3), 1e-10)
        b = solve_unconstrained(obj, np.zeros(3), 1e-10)
        np.testing.assert_allclose(a.minimizer, b.minimizer, atol=1e-9)

    def test_projection_of_origin(self):
        obj = quadratic(np.zeros(2))
        res = solve_ball_constrained(obj, np.array([2.0, 0.0]), 1.0, np.array([2.0, 0.0]), 1e-10)
        np.testing.assert_allclose(res.minimizer, [1.0, 0.0], atol=1e-9)

    def test_project_ball(self):
        np.testing.assert_allclose(project_ball([3.0, 4.0], [0.0, 0.0], 1.0), [0.6, 0.8])
        np.testing.assert_array_equal(project_ball([0.1, 0.0], [0.0, 0.0], 1.0), [0.1, 0.0])


class TestDual:
    @pytest.mark.parametrize("q", [1.001, 1.1, 1.5, 2.0])
    def test_matches_scipy_minimum(self, q, rng):
        spec = make_eq_qp(10, 4, seed=2)
        M = build_model(spec.oracle, rng.standard_normal(10), 5.0, q, 3.0)
        res = solve_model_dual(M, 1e-14)
        assert res.converged and res.gap <= 1e-12 * (1 + abs(res.value))
        ref = minimize(M.value, M.anchor, jac=M.gradient, method="BFGS",
                       options=dict(gtol=1e-10, maxiter=10_000))
        # a certified gap means scipy cannot do meaningfully better
        assert res.value <= ref.fun + 1e-9 * (1 + abs(ref.fun))
        assert res.value == pytest.approx(M.value(res.minimizer), rel=1e-14, abs=1e-14)

    def test_one_dimensional_model(self, toy):
        M = build_model(toy.oracle, [0.0], 2.0, 2.0, 1.0)
        res = solve_model_dual(M, 1e-16)
        assert res.minimizer[0] == pytest.approx(2.0 / 3.0, abs=1e-10)

    def test_negative_anchor_value(self):
        # a negative f at the anchor must not fake a small gap
        spec = make_sphere_quadratic(6)
        x = spec.known_solution.x * 0.9
        M = build_model(spec.oracle, x, 10.0, 1.2, 1.0)
        res = solve_model_dual(M, 1e-14)
        assert res.converged
        assert res.value <= M.value(M.anchor)

    def test_beta_override(self, toy):
        M = build_model(toy.oracle, [0.0], 2.0, 2.0, 1.0)
        # (x-1)^2 + x^2 / 4 is minimized at 4/5
        res = solve_model_dual(M, 1e-16, beta=0.5)
        assert res.minimizer[0] == pytest.approx(0.8, abs=1e-10)

    def test_rule(self):
        assert prefer_dual(1.1, 10_000)
        assert prefer_dual(2.0, 100)
        assert not prefer_dual(2.0, 1000)
