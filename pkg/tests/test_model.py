import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qlp.core import DomainError, penalty_value
from qlp.model import (
    build_model,
    linearized_constraints,
    model_gradient,
    model_holder_constant,
    model_value,
    spectral_norm,
)
from qlp.problems import make_dtoc_like, make_eq_qp, make_sphere_quadratic


def test_build_caches_anchor_data(toy):
    M = build_model(toy.oracle, [0.0], 2.0, 2.0, 1.0)
    assert (M.f_anchor, M.g_anchor[0], M.F_anchor[0], M.J_anchor[0, 0]) == (0.0, 0.0, -1.0, 1.0)


def test_build_counts_one_of_each(toy):
    build_model(toy.oracle, [0.3], 2.0, 2.0, 1.0)
    c = toy.oracle.counters
    assert (c.n_f, c.n_grad_f, c.n_F, c.n_jac_F) == (1, 1, 1, 1)


def test_feasible_anchor_has_no_penalty(toy):
    M = build_model(toy.oracle, [1.0], 5.0, 1.5, 1.0)
    assert M.F_anchor[0] == 0.0
    assert M.penalty_part(M.anchor) == pytest.approx(1.0)


@pytest.mark.parametrize("x, expected", [(1.0, 0.0), (0.25, -0.75)])
def test_linearized_constraints(toy, x, expected):
    M = build_model(toy.oracle, [0.0], 2.0, 2.0, 1.0)
    assert linearized_constraints(M, [x])[0] == pytest.approx(expected)


def test_linearized_constraints_at_anchor(toy):
    M = build_model(toy.oracle, [0.4], 2.0, 2.0, 1.0)
    np.testing.assert_array_equal(linearized_constraints(M, M.anchor), M.F_anchor)


@pytest.mark.parametrize("x, expected", [(1.0, 0.5), (0.5, 0.375)])
def test_model_value(toy, x, expected):
    M = build_model(toy.oracle, [0.0], 2.0, 2.0, 1.0)
    assert model_value(M, [x]) == pytest.approx(expected, rel=1e-15)


def test_model_gradient_at_anchor(toy):
    M = build_model(toy.oracle, [0.0], 2.0, 2.0, 1.0)
    assert model_gradient(M, [0.0])[0] == pytest.approx(-2.0)


def test_beta_below_one_rejected(toy):
    with pytest.raises(DomainError):
        build_model(toy.oracle, [0.0], 2.0, 2.0, 0.5)


def test_with_beta_makes_no_oracle_calls(toy):
    M = build_model(toy.oracle, [0.0], 2.0, 2.0, 1.0)
    before = toy.oracle.counters.copy()
    M2 = M.with_beta(8.0)
    assert M2.beta == 8.0 and toy.oracle.counters == before
    assert model_value(M2, [1.0]) == pytest.approx(4.0)


@pytest.mark.parametrize("spec", [make_eq_qp(12, 5), make_sphere_quadratic(6), make_dtoc_like(4)],
                         ids=["eq_qp", "sphere", "dtoc"])
@pytest.mark.parametrize("q", [1.3, 2.0])
def test_exact_at_anchor_and_fd_gradient(spec, q, rng):
    p = spec.oracle
    x = spec.x0 + 0.1 * rng.standard_normal(p.n)
    M = build_model(p, x, 3.0, q, 2.0)
    assert model_value(M, x) == pytest.approx(penalty_value(p, x, 3.0, q), rel=1e-14)
    y = x + 0.2 * rng.standard_normal(p.n)
    g = model_gradient(M, y)
    h = 1e-6
    fd = np.array([(model_value(M, y + h * e) - model_value(M, y - h * e)) / (2 * h)
                   for e in np.eye(p.n)])
    np.testing.assert_allclose(g, fd, rtol=1e-5, atol=1e-6)


def test_spectral_norm_matches_svd(rng):
    A = rng.standard_normal((7, 4))
    assert spectral_norm(A) == pytest.approx(np.linalg.svd(A, compute_uv=False)[0], rel=1e-6)


@settings(max_examples=40, deadline=None)
@given(st.floats(1.05, 2.0), st.integers(0, 10_000))
def test_holder_constant_bounds_gradient_variation(q, seed):
    rng = np.random.default_rng(seed)
    spec = make_eq_qp(8, 3, seed=seed % 7)
    M = build_model(spec.oracle, rng.standard_normal(8), 2.0, q, 1.0)
    x, y = rng.standard_normal((2, 8))
    L = model_holder_constant(M, 10.0)
    lhs = np.linalg.norm(M.penalty_part_gradient(x) - M.penalty_part_gradient(y))
    d = np.linalg.norm(x - y)
    assert d <= 10.0
    assert lhs <= L * d ** (q - 1) * (1 + 1e-6)


@settings(max_examples=40, deadline=None)
@given(st.floats(1.05, 2.0), st.floats(1.0, 20.0), st.integers(0, 10_000))
def test_strongly_convex_with_modulus_beta(q, beta, seed):
    rng = np.random.default_rng(seed)
    spec = make_dtoc_like(3)
    M = build_model(spec.oracle, spec.x0 + rng.standard_normal(spec.n), 5.0, q, beta)
    x, y = M.anchor + rng.standard_normal((2, spec.n))
    lower = model_value(M, x) + model_gradient(M, x) @ (y - x) + 0.5 * beta * np.sum((y - x) ** 2)
    assert model_value(M, y) >= lower - 1e-10 * (1 + abs(lower))
