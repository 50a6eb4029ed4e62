"""Numeric primitives, the problem-oracle contract and the l_q penalty.

Conventions used throughout the package:

* ``x`` is the decision vector (length ``n``), ``F`` the vector of equality
  constraints (length ``m``) and ``J`` its dense ``m x n`` Jacobian.
* The penalty is ``P(x) = f(x) + (rho / q) * sum_i |F_i(x)|**q`` with
  ``q`` in ``(1, 2]``.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from typing import Callable, Optional

import numpy as np

__all__ = [
    "DomainError",
    "EvaluationError",
    "EvalCounters",
    "KnownConstants",
    "ProblemOracle",
    "sign_pow",
    "sign_pow_vec",
    "qnorm_pow",
    "penalty_value",
    "penalty_gradient",
    "multiplier_estimate",
    "kkt_residual",
    "check_q",
]

# |t| below this is treated as an exact zero by the sign-power maps.
_TINY = 1e-300


class DomainError(ValueError):
    """An argument lies outside the domain where an operation is defined."""


class EvaluationError(ArithmeticError):
    """A problem oracle returned a non-finite or misshapen value."""


def check_q(q: float) -> float:
    q = float(q)
    if not (1.0 < q <= 2.0):
        raise DomainError(f"q must lie in (1, 2], got {q!r}")
    return q


def sign_pow(t: float, nu: float) -> float:
    """Return ``sign(t) * |t|**nu`` for ``nu`` in ``(0, 1]``.

    The value at ``t = 0`` is exactly zero for every exponent; arguments
    below ``1e-300`` in magnitude are treated as zero.
    """
    nu = float(nu)
    if not (0.0 < nu <= 1.0):
        raise DomainError(f"exponent must lie in (0, 1], got {nu!r}")
    t = float(t)
    if not np.isfinite(t):
        raise DomainError(f"argument must be finite, got {t!r}")
    a = abs(t)
    if a < _TINY:
        return 0.0
    r = a ** nu
    return r if t > 0 else -r


def sign_pow_vec(v, a: float) -> np.ndarray:
    """Componentwise ``sign(v) * |v|**a`` for any ``a > 0``."""
    a = float(a)
    if not a > 0.0:
        raise DomainError(f"exponent must be positive, got {a!r}")
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise DomainError("vector has non-finite components")
    if a == 1.0:
        return v.copy()
    mag = np.abs(v)
    out = np.zeros_like(v)
    nz = mag >= _TINY
    with np.errstate(over="ignore"):
        out[nz] = np.copysign(np.power(mag[nz], a), v[nz])
    return out


def qnorm_pow(v, q: float) -> float:
    """``sum_i |v_i|**q`` (the q-norm raised to the q, *not* divided by q)."""
    q = check_q(q)
    v = np.asarray(v, dtype=float)
    if q == 2.0:
        return float(v @ v)
    mag = np.abs(v)
    return float(np.sum(np.power(mag[mag >= _TINY], q)))


@dataclass
class EvalCounters:
    """Oracle call counts. All fields only ever increase during a solve."""

    n_f: int = 0
    n_grad_f: int = 0
    n_F: int = 0
    n_jac_F: int = 0
    n_inner_grad_steps: int = 0

    def copy(self) -> "EvalCounters":
        return EvalCounters(**self.as_dict())

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def __sub__(self, other: "EvalCounters") -> "EvalCounters":
        return EvalCounters(
            **{k: v - getattr(other, k) for k, v in self.as_dict().items()}
        )

    def __add__(self, other: "EvalCounters") -> "EvalCounters":
        return EvalCounters(
            **{k: v + getattr(other, k) for k, v in self.as_dict().items()}
        )


@dataclass(frozen=True)
class KnownConstants:
    """Optional problem constants on a region containing the iterates.

    ``lipschitz_grad_f`` and ``lipschitz_jac_F`` are the Lipschitz constants
    of the objective gradient and the constraint Jacobian, ``bound_*`` are
    norm bounds and ``objective_lower_bound`` is ``inf f``.
    """

    lipschitz_grad_f: Optional[float] = None
    lipschitz_jac_F: Optional[float] = None
    bound_jac_F: Optional[float] = None
    bound_grad_f: Optional[float] = None
    objective_lower_bound: Optional[float] = None

    def __post_init__(self):
        for f in fields(self):
            val = getattr(self, f.name)
            if val is None:
                continue
            if not np.isfinite(val):
                raise DomainError(f"{f.name} must be finite")
            if f.name != "objective_lower_bound" and val < 0:
                raise DomainError(f"{f.name} must be nonnegative")


@dataclass
class ProblemOracle:
    """Evaluator for ``min f(x) s.t. F(x) = 0`` with analytic derivatives.

    The wrapped callables are called through :meth:`f`, :meth:`grad_f`,
    :meth:`F` and :meth:`jac_F`, which validate shapes and finiteness and
    update :attr:`counters`. An instance is meant for one thread at a time.
    """

    n: int
    m: int
    eval_f: Callable[[np.ndarray], float]
    grad_f_fn: Callable[[np.ndarray], np.ndarray]
    eval_F: Callable[[np.ndarray], np.ndarray]
    jac_F_fn: Callable[[np.ndarray], np.ndarray]
    constants: Optional[KnownConstants] = None
    counters: EvalCounters = field(default_factory=EvalCounters)

    def __post_init__(self):
        if self.n < 1 or self.m < 1:
            raise DomainError("n and m must be positive")

    def _point(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if x.shape != (self.n,):
            raise DomainError(f"expected a point of shape ({self.n},), got {x.shape}")
        return x

    def f(self, x) -> float:
        self.counters.n_f += 1
        val = float(self.eval_f(self._point(x)))
        if not np.isfinite(val):
            raise EvaluationError("objective value is not finite")
        return val

    def grad_f(self, x) -> np.ndarray:
        self.counters.n_grad_f += 1
        g = np.asarray(self.grad_f_fn(self._point(x)), dtype=float).reshape(-1)
        if g.shape != (self.n,) or not np.all(np.isfinite(g)):
            raise EvaluationError("objective gradient is misshapen or not finite")
        return g

    def F(self, x) -> np.ndarray:
        self.counters.n_F += 1
        v = np.asarray(self.eval_F(self._point(x)), dtype=float).reshape(-1)
        if v.shape != (self.m,) or not np.all(np.isfinite(v)):
            raise EvaluationError("constraint values are misshapen or not finite")
        return v

    def jac_F(self, x) -> np.ndarray:
        self.counters.n_jac_F += 1
        J = np.asarray(self.jac_F_fn(self._point(x)), dtype=float)
        if J.shape != (self.m, self.n) or not np.all(np.isfinite(J)):
            raise EvaluationError("constraint Jacobian is misshapen or not finite")
        return J


def _check_rho(rho: float) -> float:
    rho = float(rho)
    if not rho > 0:
        raise DomainError(f"rho must be positive, got {rho!r}")
    return rho


def penalty_value(p: ProblemOracle, x, rho: float, q: float) -> float:
    rho, q = _check_rho(rho), check_q(q)
    return p.f(x) + rho / q * qnorm_pow(p.F(x), q)


def penalty_gradient(p: ProblemOracle, x, rho: float, q: float) -> np.ndarray:
    rho, q = _check_rho(rho), check_q(q)
    Fx = p.F(x)
    return p.grad_f(x) + p.jac_F(x).T @ (rho * sign_pow_vec(Fx, q - 1.0))


def multiplier_estimate(F_val, rho: float, q: float) -> np.ndarray:
    """Multipliers ``rho * sign(F) * |F|**(q-1)`` recovered from the penalty."""
    rho, q = _check_rho(rho), check_q(q)
    return rho * sign_pow_vec(F_val, q - 1.0)


def kkt_residual(p: ProblemOracle, x, lam) -> tuple[float, float]:
    """Return ``(||grad f + J^T lam||, ||F||)`` at ``x``."""
    lam = np.asarray(lam, dtype=float).reshape(-1)
    if lam.shape != (p.m,):
        raise DomainError(f"multiplier must have shape ({p.m},)")
    stat = np.linalg.norm(p.grad_f(x) + p.jac_F(x).T @ lam)
    return float(stat), float(np.linalg.norm(p.F(x)))
