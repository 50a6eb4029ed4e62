"""Gauss-Newton linearization of the l_q penalty around a frozen anchor.

At an anchor ``xa`` the objective and constraints are replaced by their
first-order expansions inside the penalty::

    Pbar(x; xa) = f(xa) + <g, x - xa> + (rho / q) * ||F(xa) + J (x - xa)||_q^q

and the subproblem adds the proximal term ``(beta / 2) * ||x - xa||^2``.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .core import DomainError, ProblemOracle, check_q, qnorm_pow, sign_pow_vec

__all__ = [
    "LinearizedModel",
    "build_model",
    "linearized_constraints",
    "model_value",
    "model_gradient",
    "spectral_norm",
    "model_holder_constant",
]


@dataclass(frozen=True)
class LinearizedModel:
    anchor: np.ndarray
    f_anchor: float
    g_anchor: np.ndarray
    F_anchor: np.ndarray
    J_anchor: np.ndarray
    rho: float
    q: float
    beta: float

    def __post_init__(self):
        check_q(self.q)
        if not self.rho > 0:
            raise DomainError("rho must be positive")
        if not self.beta >= 1.0:
            raise DomainError(f"beta must be >= 1, got {self.beta!r}")

    @property
    def n(self) -> int:
        return self.anchor.shape[0]

    @property
    def m(self) -> int:
        return self.F_anchor.shape[0]

    def with_beta(self, beta: float) -> "LinearizedModel":
        """Same linearization, different proximal weight (no oracle calls)."""
        return replace(self, beta=float(beta))

    def linearized_constraints(self, x) -> np.ndarray:
        return self.F_anchor + self.J_anchor @ (np.asarray(x, dtype=float) - self.anchor)

    def penalty_part(self, x) -> float:
        """``Pbar(x; anchor)`` without the proximal term."""
        s = np.asarray(x, dtype=float) - self.anchor
        lF = self.F_anchor + self.J_anchor @ s
        return self.f_anchor + self.g_anchor @ s + self.rho / self.q * qnorm_pow(lF, self.q)

    def penalty_part_gradient(self, x) -> np.ndarray:
        lF = self.linearized_constraints(x)
        return self.g_anchor + self.rho * (self.J_anchor.T @ sign_pow_vec(lF, self.q - 1.0))

    def value(self, x) -> float:
        s = np.asarray(x, dtype=float) - self.anchor
        return self.penalty_part(x) + 0.5 * self.beta * (s @ s)

    def gradient(self, x) -> np.ndarray:
        s = np.asarray(x, dtype=float) - self.anchor
        return self.penalty_part_gradient(x) + self.beta * s


def build_model(p: ProblemOracle, anchor, rho: float, q: float, beta: float) -> LinearizedModel:
    """Evaluate ``f, grad f, F, J`` once at ``anchor`` and freeze them."""
    anchor = np.array(anchor, dtype=float)
    return LinearizedModel(
        anchor=anchor,
        f_anchor=p.f(anchor),
        g_anchor=p.grad_f(anchor),
        F_anchor=p.F(anchor),
        J_anchor=p.jac_F(anchor),
        rho=float(rho),
        q=float(q),
        beta=float(beta),
    )


def linearized_constraints(M: LinearizedModel, x) -> np.ndarray:
    return M.linearized_constraints(x)


def model_value(M: LinearizedModel, x) -> float:
    return M.value(x)


def model_gradient(M: LinearizedModel, x) -> np.ndarray:
    return M.gradient(x)


def spectral_norm(A, max_iter: int = 100, rtol: float = 1e-8) -> float:
    """Largest singular value of ``A`` by power iteration on ``A^T A``."""
    A = np.asarray(A, dtype=float)
    if A.size == 0 or not np.any(A):
        return 0.0
    # deterministic start that is not orthogonal to the top singular vector
    v = np.ones(A.shape[1]) + np.linspace(0.0, 1.0, A.shape[1])
    v /= np.linalg.norm(v)
    sigma = 0.0
    for _ in range(max_iter):
        w = A.T @ (A @ v)
        nw = np.linalg.norm(w)
        if nw == 0.0:
            return 0.0
        v = w / nw
        new = np.sqrt(nw)
        if abs(new - sigma) <= rtol * new:
            return float(new)
        sigma = new
    return float(sigma)


def model_holder_constant(M: LinearizedModel, diameter: float) -> float:
    """Holder constant (exponent ``q - 1``) of the model gradient on a set of
    the given diameter around the anchor."""
    q = M.q
    JF = spectral_norm(M.J_anchor)
    return 3.0 * M.m ** ((2.0 - q) / 2.0) * M.rho * JF**q + M.beta * diameter ** (2.0 - q)
