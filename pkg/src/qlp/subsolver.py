"""Accelerated gradient methods for strongly convex subproblems whose gradient
is only Holder continuous (exponent and constant unknown).

Both solvers use FISTA-type momentum, a backtracking estimate ``L`` of the
local smoothness (doubled on rejection, halved after every accepted step)
and a function-value restart, so the accepted iterates decrease
monotonically.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import DomainError, EvalCounters, EvaluationError, sign_pow_vec
from .model import LinearizedModel

__all__ = [
    "SmoothObjective",
    "InnerStatus",
    "InnerSolveResult",
    "solve_unconstrained",
    "solve_ball_constrained",
    "project_ball",
    "DualSolveResult",
    "solve_model_dual",
    "prefer_dual",
]

_L_MAX = 1e300


@dataclass
class SmoothObjective:
    value: Callable[[np.ndarray], float]
    gradient: Callable[[np.ndarray], np.ndarray]
    convexity_modulus: float

    def __post_init__(self):
        if not self.convexity_modulus > 0:
            raise DomainError("convexity_modulus must be positive")


class InnerStatus(str, enum.Enum):
    CONVERGED = "Converged"
    MAX_ITER = "MaxIter"
    # no further decrease is representable in floating point
    STALLED = "Stalled"


@dataclass
class InnerSolveResult:
    minimizer: np.ndarray
    value: float
    final_grad_norm: float
    iterations: int
    status: InnerStatus

    @property
    def converged(self) -> bool:
        return self.status is InnerStatus.CONVERGED


class _Counted:
    """Finite-checking wrapper that counts gradient calls."""

    def __init__(self, obj: SmoothObjective, counters: Optional[EvalCounters]):
        self.obj = obj
        self.counters = counters

    def value(self, x) -> float:
        v = float(self.obj.value(x))
        if not math.isfinite(v):
            raise EvaluationError("subproblem objective is not finite")
        return v

    def grad(self, x) -> np.ndarray:
        if self.counters is not None:
            self.counters.n_inner_grad_steps += 1
        g = np.asarray(self.obj.gradient(x), dtype=float)
        if not np.all(np.isfinite(g)):
            raise EvaluationError("subproblem gradient is not finite")
        return g


# relative change below which two objective values count as tied
_TIE = 4.0 * np.finfo(float).eps


def _slack(v: float) -> float:
    # room for rounding in the sufficient-decrease test
    return 1e-15 * (1.0 + abs(v))


def solve_unconstrained(
    obj: SmoothObjective,
    x0,
    eps_sub: float,
    max_inner: int = 10_000,
    counters: Optional[EvalCounters] = None,
) -> InnerSolveResult:
    """Minimize ``obj`` until ``||grad|| <= eps_sub`` or the budget runs out."""
    if not eps_sub > 0:
        raise DomainError("eps_sub must be positive")
    fn = _Counted(obj, counters)
    x = np.array(x0, dtype=float)
    fx, gx = fn.value(x), fn.grad(x)
    gnorm = float(np.linalg.norm(gx))
    if gnorm <= eps_sub:
        return InnerSolveResult(x, fx, gnorm, 0, InnerStatus.CONVERGED)

    L = max(1.0, obj.convexity_modulus)
    y, fy, gy = x, fx, gx
    t = 1.0
    restarted = True
    for it in range(1, max_inner + 1):
        while True:
            z = y - gy / L
            fz = fn.value(z)
            d = z - y
            if fz <= fy + gy @ d + 0.5 * L * (d @ d) + _TIE * (abs(fy) + abs(fz)):
                break
            L *= 2.0
            if L > _L_MAX:
                return InnerSolveResult(x, fx, gnorm, it, InnerStatus.STALLED)
        gz = None
        if fz > fx - _TIE * abs(fx):
            # a decrease within rounding only counts if the gradient shrinks too
            if fz <= fx:
                gz = fn.grad(z)
            progress = gz is not None and np.linalg.norm(gz) < gnorm
        else:
            progress = True
        if not progress:
            if not restarted:
                y, fy, gy, t, restarted = x, fx, gx, 1.0, True
                continue
            # values are at rounding level; steer by the gradient norm instead
            if gz is None:
                gz = fn.grad(z)
            while not np.linalg.norm(gz) < gnorm:
                L *= 2.0
                if L > _L_MAX:
                    return InnerSolveResult(x, fx, gnorm, it, InnerStatus.STALLED)
                z = x - gx / L
                fz, gz = fn.value(z), fn.grad(z)
            x, fx, gx = z, fz, gz
            gnorm = float(np.linalg.norm(gx))
            if gnorm <= eps_sub:
                return InnerSolveResult(x, fx, gnorm, it, InnerStatus.CONVERGED)
            y, fy, gy, t = x, fx, gx, 1.0
            L = max(0.5 * L, obj.convexity_modulus)
            continue
        if gz is None:
            gz = fn.grad(z)
        x_prev, x, fx, gx = x, z, fz, gz
        gnorm = float(np.linalg.norm(gx))
        if gnorm <= eps_sub:
            return InnerSolveResult(x, fx, gnorm, it, InnerStatus.CONVERGED)
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        # capped at the momentum of the scheme tuned to the known modulus
        kappa = math.sqrt(obj.convexity_modulus / L)
        mom = min((t - 1.0) / t_next, (1.0 - kappa) / (1.0 + kappa))
        t = t_next
        if mom > 0.0:
            y = x + mom * (x - x_prev)
            fy, gy = fn.value(y), fn.grad(y)
        else:
            y, fy, gy = x, fx, gx
        restarted = False
        L = max(0.5 * L, obj.convexity_modulus)
    return InnerSolveResult(x, fx, gnorm, max_inner, InnerStatus.MAX_ITER)


def project_ball(y, center, radius: float) -> np.ndarray:
    d = np.asarray(y, dtype=float) - center
    return center + d * (radius / max(radius, float(np.linalg.norm(d))))


def solve_ball_constrained(
    obj: SmoothObjective,
    center,
    radius: float,
    x0,
    eps_sub: float,
    max_inner: int = 10_000,
    counters: Optional[EvalCounters] = None,
) -> InnerSolveResult:
    """Minimize ``obj`` over the closed ball ``||x - center|| <= radius``.

    Stops when the projected-gradient residual
    ``L * ||x - proj(x - grad(x) / L)||`` drops to ``eps_sub``, with ``L``
    the current smoothness estimate. ``final_grad_norm`` reports that
    residual.
    """
    if not radius > 0:
        raise DomainError("radius must be positive")
    if not eps_sub > 0:
        raise DomainError("eps_sub must be positive")
    center = np.asarray(center, dtype=float)
    x = np.array(x0, dtype=float)
    if np.linalg.norm(x - center) > radius * (1 + 1e-12):
        raise DomainError("x0 must lie in the ball")
    x = project_ball(x, center, radius)
    fn = _Counted(obj, counters)
    fx, gx = fn.value(x), fn.grad(x)
    L = max(1.0, obj.convexity_modulus)

    def residual(point, grad, lip):
        return lip * float(np.linalg.norm(point - project_ball(point - grad / lip, center, radius)))

    res = residual(x, gx, L)
    if res <= eps_sub:
        return InnerSolveResult(x, fx, res, 0, InnerStatus.CONVERGED)

    y, fy, gy = x, fx, gx
    t = 1.0
    restarted = True
    for it in range(1, max_inner + 1):
        while True:
            z = project_ball(y - gy / L, center, radius)
            fz = fn.value(z)
            d = z - y
            if fz <= fy + gy @ d + 0.5 * L * (d @ d) + _TIE * (abs(fy) + abs(fz)):
                break
            L *= 2.0
            if L > _L_MAX:
                return InnerSolveResult(x, fx, res, it, InnerStatus.STALLED)
        if fz > fx:
            if restarted:
                return InnerSolveResult(x, fx, res, it, InnerStatus.STALLED)
            y, fy, gy, t, restarted = x, fx, gx, 1.0, True
            continue
        gz = fn.grad(z)
        x_prev, x, fx, gx = x, z, fz, gz
        res = residual(x, gx, L)
        if res <= eps_sub:
            return InnerSolveResult(x, fx, res, it, InnerStatus.CONVERGED)
        t_next = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        mom = (t - 1.0) / t_next
        t = t_next
        if mom > 0.0:
            # the extrapolated point may leave the ball; only z must be feasible
            y = x + mom * (x - x_prev)
            fy, gy = fn.value(y), fn.grad(y)
        else:
            y, fy, gy = x, fx, gx
        restarted = False
        L = max(0.5 * L, obj.convexity_modulus)
    return InnerSolveResult(x, fx, res, max_inner, InnerStatus.MAX_ITER)


# the dual method factors an m x m matrix per Newton step
_DUAL_MAX_M = 500
# below this q the model gradient is too far from Lipschitz for first-order
# solves to reach useful accuracy
_DUAL_BELOW_Q = 1.5


def prefer_dual(q: float, m: int) -> bool:
    """Whether :func:`solve_model_dual` is the better method for a model
    with exponent ``q`` and ``m`` constraints."""
    return q < _DUAL_BELOW_Q or m <= _DUAL_MAX_M


@dataclass
class DualSolveResult(InnerSolveResult):
    """Result of :func:`solve_model_dual`; ``gap`` bounds the suboptimality
    of ``value`` and ``multipliers`` is the dual solution."""

    gap: float = float("nan")
    multipliers: Optional[np.ndarray] = None


def _conj_power(lam: np.ndarray, rho: float, p: float):
    """Conjugate of ``(rho/q)|u|^q`` (value, derivative, second derivative)
    with ``p = q / (q - 1)``."""
    z = np.abs(lam) / rho
    with np.errstate(over="ignore", under="ignore"):
        zp2 = np.power(z, p - 2.0)
        zp1 = zp2 * z
        val = float(np.sum(zp1 * z)) * rho / p
        return val, np.sign(lam) * zp1, (p - 1.0) / rho * zp2


def solve_model_dual(
    M: LinearizedModel,
    eps_gap: float,
    max_iter: int = 200,
    lam0=None,
    counters: Optional[EvalCounters] = None,
    beta: Optional[float] = None,
) -> DualSolveResult:
    """Minimize ``M.value`` exactly up to a certified duality gap.

    ``beta`` overrides ``M.beta`` and may be any positive weight.

    Maximizes the concave dual
    ``D(lam) = f + lam.c - ||g + J^T lam||^2 / (2 beta) - sum h*(lam_i)``
    by damped Newton steps in ``R^m``; the primal point is
    ``anchor - (g + J^T lam) / beta``. Suited to ``q`` close to 1, where
    the primal gradient is nearly discontinuous and first-order methods
    cannot reach a small gradient norm.
    """
    if not eps_gap > 0:
        raise DomainError("eps_gap must be positive")
    rho, q = M.rho, M.q
    beta = M.beta if beta is None else float(beta)
    if not beta > 0:
        raise DomainError("beta must be positive")
    p = q / (q - 1.0)
    g, c, J = M.g_anchor, M.F_anchor, M.J_anchor
    K = (J @ J.T) / beta
    jg = J @ g / beta

    def dual(lam):
        w = g + J.T @ lam
        h, dh, d2h = _conj_power(lam, rho, p)
        val = M.f_anchor + lam @ c - (w @ w) / (2.0 * beta) - h
        return val, c - jg - K @ lam - dh, d2h

    def primal(lam):
        s = -(g + J.T @ lam) / beta
        x = M.anchor + s
        return x, M.penalty_part(x) + 0.5 * beta * (s @ s)

    def floor(x, val):
        # rounding in x and in c + J (x - anchor) perturbs the penalty term
        # by about this much
        scale = np.abs(x) + np.abs(M.anchor) + (np.abs(g) + np.abs(J.T) @ np.abs(lam)) / beta
        err = 64.0 * np.finfo(float).eps * (np.abs(c) + np.abs(J) @ scale)
        return eps_gap + _slack(val) + rho / q * float(np.sum(err**q))

    lam = sign_pow_vec(c, q - 1.0) * rho if lam0 is None else np.array(lam0, dtype=float)
    D, grad, d2h = dual(lam)
    if not math.isfinite(D):
        lam = np.zeros_like(c)
        D, grad, d2h = dual(lam)
    x, val = primal(lam)
    gap = val - D
    status = InnerStatus.MAX_ITER
    it = 0
    for it in range(1, max_iter + 1):
        if gap <= floor(x, val):
            status = InnerStatus.CONVERGED
            break
        if counters is not None:
            counters.n_inner_grad_steps += 1
        H = K + np.diag(d2h)
        H[np.diag_indices_from(H)] += 1e-14 * (1.0 + np.trace(H) / H.shape[0])
        try:
            d = np.linalg.solve(H, grad)
        except np.linalg.LinAlgError:
            d = np.linalg.lstsq(H, grad, rcond=None)[0]
        slope = grad @ d
        gn = float(np.linalg.norm(grad))
        t = 1.0
        for _ in range(60):
            cand = lam + t * d
            Dc, gc, hc = dual(cand)
            # near the maximizer D is flat below rounding; a shrinking dual
            # gradient then certifies progress instead
            if math.isfinite(Dc) and (Dc >= D + 1e-4 * t * slope
                                      or np.linalg.norm(gc) <= (1.0 - 1e-4 * t) * gn):
                break
            t *= 0.5
        else:
            status = InnerStatus.STALLED
            break
        lam, D, grad, d2h = cand, Dc, gc, hc
        x_c, val_c = primal(lam)
        if val_c < val or gap > val_c - D:
            x, val = x_c, val_c
        gap = val - D
    if status is not InnerStatus.CONVERGED and gap <= floor(x, val):
        status = InnerStatus.CONVERGED
    gnorm = float(np.linalg.norm(M.penalty_part_gradient(x) + beta * (x - M.anchor)))
    return DualSolveResult(x, val, gnorm, it, status, gap=max(gap, 0.0), multipliers=lam)
