"""Criticality measures of the penalty function and first-order certification.

Both measures compare ``P(x)`` with a minimum of its linearization at ``x``:

* ``psi_r``: the model minimum over the ball ``||y - x|| <= r``;
* ``psi_bar``: the minimum of the model plus ``beta/2 ||y - x||^2``.

Either is zero exactly at critical points of ``P`` and nonnegative elsewhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .core import DomainError, ProblemOracle, check_q, kkt_residual, multiplier_estimate
from .model import LinearizedModel, build_model
from .subsolver import (
    InnerStatus,
    SmoothObjective,
    prefer_dual,
    solve_ball_constrained,
    solve_model_dual,
    solve_unconstrained,
)

__all__ = [
    "Measure",
    "CriticalityReport",
    "psi_bar",
    "psi_r",
    "certify_first_order",
    "criticality_report",
    "BOUNDARY_RTOL",
]

# ||s*|| >= r (1 - BOUNDARY_RTOL) counts as a ball-boundary solution
BOUNDARY_RTOL = 1e-8
# strong-convexity weight added to the ball problem so the solver has a modulus
_BALL_REG = 1e-12
METHODS = ("auto", "accelerated", "dual_newton")


class Measure(float):
    """A float carrying how it was obtained.

    ``step`` is the minimizer minus ``x``, ``degraded`` is set when the inner
    solver ran out of iterations and ``model_grad_norm`` is the norm of the
    un-regularized model gradient at the minimizer.
    """

    step: np.ndarray
    degraded: bool
    model_grad_norm: float

    def __new__(cls, value, step, degraded, model_grad_norm):
        obj = super().__new__(cls, value)
        obj.step = step
        obj.degraded = bool(degraded)
        obj.model_grad_norm = float(model_grad_norm)
        return obj


def _use_dual(method: str, M: LinearizedModel) -> bool:
    if method not in METHODS:
        raise DomainError(f"method must be one of {METHODS}")
    return method == "dual_newton" or (method == "auto" and prefer_dual(M.q, M.m))


def _model_at(p: ProblemOracle, x, rho: float, q: float, beta: float = 1.0) -> LinearizedModel:
    check_q(q)
    if not rho > 0:
        raise DomainError("rho must be positive")
    return build_model(p, x, rho, q, max(beta, 1.0))


def _penalty_at_anchor(M: LinearizedModel) -> float:
    return M.penalty_part(M.anchor)


def psi_bar(p: ProblemOracle, x, rho: float, q: float, beta: float,
            eps_sub: float = 1e-8, max_inner: int = 100_000,
            method: str = "auto") -> Measure:
    """``P(x) - min_y {Pbar(y; x) + beta/2 ||y - x||^2}``.

    The minimum is the model value at the returned minimizer, so an inexact
    inner solve can only make the result smaller.
    """
    if not beta >= 1:
        raise DomainError("beta must be >= 1")
    if not eps_sub > 0:
        raise DomainError("eps_sub must be positive")
    M = _model_at(p, x, rho, q, beta)
    if _use_dual(method, M):
        res = solve_model_dual(M, 0.5 * eps_sub**2 / beta, counters=p.counters)
    else:
        obj = SmoothObjective(M.value, M.gradient, beta)
        res = solve_unconstrained(obj, M.anchor, eps_sub, max_inner, p.counters)
    degraded = res.status is InnerStatus.MAX_ITER
    y, val = res.minimizer, res.value
    P = _penalty_at_anchor(M)
    if val > P:
        # y = x is feasible for the min
        y, val = M.anchor, P
    return Measure(P - val, y - M.anchor, degraded,
                   np.linalg.norm(M.penalty_part_gradient(y)))


def _ball_min_dual(M: LinearizedModel, r: float, eps_sub: float, counters):
    """Minimize ``Pbar`` over the ball through its multiplier ``nu``.

    ``min_{||s|| <= r} Pbar`` equals ``min_s Pbar + nu/2 ||s||^2`` for the
    ``nu >= 0`` at which the unconstrained minimizer has norm ``r`` (or the
    regularization weight when the minimizer is interior); ``||s(nu)||``
    decreases in ``nu``, so ``nu`` is found by bisection on ``log nu``.
    """
    tol = 0.5 * eps_sub**2

    def solve(nu, lam0=None):
        res = solve_model_dual(M, tol, lam0=lam0, counters=counters, beta=nu)
        return res, float(np.linalg.norm(res.minimizer - M.anchor))

    lo = 2.0 * _BALL_REG
    res, norm = solve(lo)
    if norm <= r:
        return res, res.status is InnerStatus.MAX_ITER
    hi = 1.0
    res_hi, norm_hi = solve(hi, res.multipliers)
    while norm_hi > r:
        lo, hi = hi, hi * 16.0
        res_hi, norm_hi = solve(hi, res_hi.multipliers)
    # keep the feasible end; stop once its norm is within rounding of r
    for _ in range(200):
        if norm_hi >= r * (1.0 - 1e-13) or hi <= lo * (1.0 + 1e-15):
            break
        mid = math.sqrt(lo * hi)
        res_mid, norm_mid = solve(mid, res_hi.multipliers)
        if norm_mid > r:
            lo = mid
        else:
            hi, res_hi, norm_hi = mid, res_mid, norm_mid
    return res_hi, res_hi.status is InnerStatus.MAX_ITER


def psi_r(p: ProblemOracle, x, rho: float, q: float, r: float,
          eps_sub: float = 1e-8, max_inner: int = 100_000,
          method: str = "auto") -> Measure:
    """``P(x) - min_{||y - x|| <= r} Pbar(y; x)`` for ``0 < r <= 1``."""
    if not (0.0 < r <= 1.0):
        raise DomainError(f"radius must lie in (0, 1], got {r!r}")
    if not eps_sub > 0:
        raise DomainError("eps_sub must be positive")
    M = _model_at(p, x, rho, q)
    if _use_dual(method, M):
        res, degraded = _ball_min_dual(M, r, eps_sub, p.counters)
        y = M.anchor + (res.minimizer - M.anchor) * min(
            1.0, r / max(np.linalg.norm(res.minimizer - M.anchor), 1e-300))
    else:
        def value(y):
            d = y - M.anchor
            return M.penalty_part(y) + _BALL_REG * (d @ d)

        def gradient(y):
            return M.penalty_part_gradient(y) + 2.0 * _BALL_REG * (y - M.anchor)

        obj = SmoothObjective(value, gradient, 2.0 * _BALL_REG)
        res = solve_ball_constrained(obj, M.anchor, r, M.anchor, eps_sub, max_inner,
                                     p.counters)
        y, degraded = res.minimizer, res.status is InnerStatus.MAX_ITER
    P = _penalty_at_anchor(M)
    if M.penalty_part(y) > P:
        y = M.anchor
    return Measure(P - M.penalty_part(y), y - M.anchor, degraded,
                   np.linalg.norm(M.penalty_part_gradient(y)))


def certify_first_order(p: ProblemOracle, x, lam, eps1: float, eps2: float) -> bool:
    """True iff ``||grad f + J^T lam|| <= eps1`` and ``||F|| <= eps2``."""
    stat, feas = kkt_residual(p, x, lam)
    return stat <= eps1 and feas <= eps2


@dataclass
class CriticalityReport:
    """Both measures at one point plus the KKT residuals with the multiplier
    recovered from the penalty.

    ``ball_stat`` is the model stationarity ``||g + J^T lam(s*)||`` at the
    ball minimizer ``s*`` and ``on_boundary`` whether ``||s*||`` reaches the
    radius.
    """

    psi_r: float
    psi_bar: float
    radius: float
    beta: float
    kkt_stat: float
    feas: float
    lam: np.ndarray
    penalty: float
    ball_stat: float
    on_boundary: bool
    degraded: bool

    @property
    def tol_numeric(self) -> float:
        return 1e-10 * (1.0 + abs(self.penalty))


def criticality_report(p: ProblemOracle, x, rho: float, q: float, beta: float = 1.0,
                       r: Optional[float] = None, eps1: float = 1e-3,
                       eps_sub: float = 1e-8, method: str = "auto") -> CriticalityReport:
    """Evaluate ``psi_r``, ``psi_bar`` and the KKT residuals at ``x``.

    The radius defaults to ``min(1, eps1)``.
    """
    r = min(1.0, eps1) if r is None else r
    pr = psi_r(p, x, rho, q, r, eps_sub, method=method)
    pb = psi_bar(p, x, rho, q, beta, eps_sub, method=method)
    Fx = p.F(x)
    lam = multiplier_estimate(Fx, rho, q)
    stat, feas = kkt_residual(p, x, lam)
    P = p.f(x) + rho / q * float(np.sum(np.abs(Fx) ** q))
    return CriticalityReport(
        psi_r=float(pr), psi_bar=float(pb), radius=r, beta=beta, kkt_stat=stat,
        feas=feas, lam=lam, penalty=P, ball_stat=pr.model_grad_norm,
        on_boundary=bool(np.linalg.norm(pr.step) >= r * (1.0 - BOUNDARY_RTOL)),
        degraded=pr.degraded or pb.degraded,
    )
