"""Linearized l_q penalty (qLP) outer loop and penalty continuation.

Each outer iteration linearizes ``f`` and ``F`` at the current point,
minimizes the strongly convex model ``Pbar(x; x_k) + beta/2 ||x - x_k||^2``
and accepts the result once the true penalty lies below the model at the
new point. ``beta`` grows geometrically until that holds.
"""

from __future__ import annotations

import enum
import logging
import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .core import (
    DomainError,
    EvalCounters,
    EvaluationError,
    KnownConstants,
    ProblemOracle,
    check_q,
    multiplier_estimate,
    penalty_value,
    qnorm_pow,
)
from .model import LinearizedModel
from .subsolver import (
    InnerStatus,
    SmoothObjective,
    prefer_dual,
    solve_model_dual,
    solve_unconstrained,
)

__all__ = [
    "BetaMode",
    "SolveStatus",
    "QlpConfig",
    "IterRecord",
    "SolveReport",
    "BacktrackFailure",
    "PrecisionFloor",
    "theoretical_beta",
    "check_descent",
    "qlp_step",
    "qlp_solve",
    "qlp_with_rho_search",
    "iteration_bound_monitor",
    "gradient_bound",
]

logger = logging.getLogger(__name__)


class BetaMode(str, enum.Enum):
    BACKTRACKING = "Backtracking"
    THEORETICAL = "Theoretical"


class SolveStatus(str, enum.Enum):
    CONVERGED = "Converged"
    MAX_OUTER = "MaxOuter"
    BACKTRACK_FAILURE = "BacktrackFailure"
    TIME_LIMIT = "TimeLimit"
    ERROR = "Error"
    # penalty-stationary but still infeasible: only a larger rho helps
    STATIONARY = "Stationary"


INNER_SOLVERS = ("auto", "accelerated", "dual_newton")


@dataclass
class QlpConfig:
    """Algorithm parameters.

    ``eps_f`` bounds the change of the objective between consecutive
    iterates and ``eps_feas`` the Euclidean norm of ``F`` at termination.
    An infeasible run also stops early (status ``Stationary``) once
    ``||grad P(x_k)|| <= stat_tol`` or once ``stall_window`` consecutive
    steps failed to lower the penalty beyond rounding error.

    ``inner_solver`` picks the subproblem method: ``"accelerated"`` (first
    order, gradient-norm stop), ``"dual_newton"`` (certified duality gap)
    or ``"auto"``, which picks the dual method for ``q < 1.5`` or at most
    500 constraints and otherwise runs the accelerated method, falling back
    to the dual one whenever the result is too inexact to guarantee the
    sufficient decrease.
    """

    q: float = 2.0
    rho: float = 10.0
    beta_floor: float = 1.0
    mu: float = 2.0
    eps_f: float = 1e-3
    eps_feas: float = 1e-5
    max_outer: int = 10_000
    max_backtracks: int = 60
    max_inner: int = 20_000
    beta_mode: BetaMode = BetaMode.BACKTRACKING
    constants: Optional[KnownConstants] = None
    wall_clock_limit: Optional[float] = None
    stat_tol: float = 1e-6
    inner_tol_cap: float = 0.1
    inner_tol_factor: float = 0.25
    max_refinements: int = 6
    stall_window: int = 5
    inner_solver: str = "auto"
    max_newton: int = 100

    def __post_init__(self):
        check_q(self.q)
        self.beta_mode = BetaMode(self.beta_mode)
        if not self.rho > 0:
            raise DomainError("rho must be positive")
        if not self.beta_floor >= 1:
            raise DomainError("beta_floor must be >= 1")
        if not self.mu > 1:
            raise DomainError("mu must exceed 1")
        if self.eps_f < 0 or self.eps_feas < 0:
            raise DomainError("tolerances must be nonnegative")
        if self.inner_solver not in INNER_SOLVERS:
            raise DomainError(f"inner_solver must be one of {INNER_SOLVERS}")
        if (self.max_outer < 1 or self.max_backtracks < 0 or self.max_inner < 1
                or self.max_newton < 1):
            raise DomainError("iteration budgets must be positive")
        if self.beta_mode is BetaMode.THEORETICAL:
            c = self.constants
            if c is None or None in (c.lipschitz_grad_f, c.lipschitz_jac_F,
                                     c.objective_lower_bound):
                raise DomainError(
                    "theoretical beta needs lipschitz_grad_f, lipschitz_jac_F "
                    "and objective_lower_bound"
                )

    @property
    def inner_tol_floor(self) -> float:
        return max(1e-2 * self.eps_feas, 1e-12)


@dataclass
class IterRecord:
    """One accepted outer step ``x_k -> x_{k+1}``.

    ``P`` and ``P_next`` are the penalty at both ends, ``psi_bar`` the model
    decrease ``P_k - model(x_{k+1})`` and ``ratio = (P - P_next) / psi_bar``.
    ``kkt_stat`` is ``||grad P(x_k)||``, i.e. the stationarity residual with
    the recovered multiplier.
    """

    k: int
    x: np.ndarray
    f: float
    feas: float
    P: float
    beta: float
    step_norm: float
    ratio: float
    psi_bar: float
    kkt_stat: float
    n_backtracks: int
    inner_iters: int
    rho: float = float("nan")
    P_next: float = float("nan")
    inner_grad_norm: float = float("nan")


@dataclass
class SolveReport:
    status: SolveStatus
    x_final: np.ndarray
    lam_final: np.ndarray
    trace: list[IterRecord]
    counters: EvalCounters
    elapsed: float
    f_final: float = float("nan")
    feas_final: float = float("nan")
    kkt_stat_final: float = float("nan")
    rho_final: float = float("nan")
    beta_final: float = float("nan")
    rho_schedule: list[float] = field(default_factory=list)
    message: str = ""

    @property
    def iterations(self) -> int:
        return len(self.trace)


class BacktrackFailure(RuntimeError):
    """No proximal weight satisfied the descent test within the budget."""


class PrecisionFloor(RuntimeError):
    """The model predicts a decrease below rounding level: ``x_k`` is
    critical to working precision and no step can be verified."""


def theoretical_beta(L_f: float, L_F: float, rho: float, q: float, m: int,
                     P_k: float, f_low: float) -> float:
    """Proximal weight for which the descent test is guaranteed to hold."""
    q = check_q(q)
    if min(L_f, L_F) < 0 or not rho > 0:
        raise DomainError("constants must be nonnegative and rho positive")
    gap = P_k - f_low
    if gap < 0:
        raise DomainError(f"P_k={P_k!r} lies below the objective lower bound {f_low!r}")
    if L_F == 0 or gap == 0:
        return float(L_f)
    coef = (3.0 * m ** ((2.0 - q) * (q - 1.0) / (2.0 * q)) * 2.0 ** (2.0 - q)) ** (1.0 / q)
    return float(
        L_f + coef * q ** ((q - 1.0) / q) * rho ** (1.0 / q) * L_F * gap ** ((q - 1.0) / q)
    )


def _descent_slack(P_next: float) -> float:
    return 1e-12 * (1.0 + abs(P_next))


# fraction of the predicted decrease the descent slack may absorb; keeps
# r_k >= 1 - _RATIO_SLACK on every accepted step
_RATIO_SLACK = 1e-6


def _psi_floor(P_k: float) -> float:
    return 1e-12 * (1.0 + abs(P_k))


def check_descent(p: ProblemOracle, M: LinearizedModel, x_next) -> bool:
    """True iff ``P(x_next) <= Pbar(x_next; anchor) + beta/2 ||x_next - anchor||^2``."""
    P_next = penalty_value(p, x_next, M.rho, M.q)
    return P_next <= M.value(x_next) + _descent_slack(P_next)


@dataclass
class _Point:
    """Oracle data at an iterate; the model at this point reuses it."""

    x: np.ndarray
    f: float
    g: np.ndarray
    F: np.ndarray
    J: np.ndarray

    @classmethod
    def evaluate(cls, p: ProblemOracle, x) -> "_Point":
        x = np.array(x, dtype=float)
        return cls(x, p.f(x), p.grad_f(x), p.F(x), p.jac_F(x))

    def model(self, rho, q, beta) -> LinearizedModel:
        return LinearizedModel(self.x, self.f, self.g, self.F, self.J,
                               float(rho), float(q), float(beta))

    def penalty(self, rho, q) -> float:
        return self.f + rho / q * qnorm_pow(self.F, q)

    def penalty_grad(self, rho, q) -> np.ndarray:
        return self.g + self.J.T @ multiplier_estimate(self.F, rho, q)


def _inner_tol(cfg: QlpConfig, grad_norm: float) -> float:
    # forcing term: the model gradient at the anchor equals grad P(x_k)
    tol = min(cfg.inner_tol_cap, cfg.inner_tol_factor * grad_norm)
    return max(tol, cfg.inner_tol_floor)


def _start_beta(cfg: QlpConfig, pt: _Point, P_k: float, beta_start: float) -> float:
    if cfg.beta_mode is BetaMode.THEORETICAL:
        c = cfg.constants
        return max(cfg.beta_floor, theoretical_beta(
            c.lipschitz_grad_f, c.lipschitz_jac_F, cfg.rho, cfg.q, pt.F.shape[0],
            P_k, c.objective_lower_bound))
    return max(cfg.beta_floor, beta_start)


def _step(p: ProblemOracle, pt: _Point, beta_start: float, cfg: QlpConfig,
          k: int, guess: Optional[np.ndarray] = None):
    rho, q = cfg.rho, cfg.q
    P_k = pt.penalty(rho, q)
    beta = _start_beta(cfg, pt, P_k, beta_start)
    kkt_stat = float(np.linalg.norm(pt.penalty_grad(rho, q)))
    inner_iters = 0
    for backtracks in range(cfg.max_backtracks + 1):
        M = pt.model(rho, q, beta)
        res = _solve_model(p, M, P_k, cfg, kkt_stat, guess)
        inner_iters += res.iterations
        x_new = res.minimizer
        s = x_new - pt.x
        step2 = float(s @ s)
        m_new = res.value
        psi_bar = P_k - m_new
        if psi_bar <= _psi_floor(P_k):
            raise PrecisionFloor(
                f"predicted decrease {psi_bar:.3g} at iteration {k} is at rounding level")
        P_new = penalty_value(p, x_new, rho, q)
        slack = min(_descent_slack(P_new), _RATIO_SLACK * psi_bar)
        descent_ok = P_new <= m_new + slack
        decrease_ok = P_new <= P_k - 0.5 * beta * step2 + _descent_slack(P_k)
        if descent_ok and decrease_ok:
            ratio = (P_k - P_new) / psi_bar if psi_bar > 0 else math.inf
            rec = IterRecord(
                k=k, x=pt.x.copy(), f=pt.f, feas=float(np.linalg.norm(pt.F)), P=P_k,
                beta=beta, step_norm=math.sqrt(step2), ratio=ratio, psi_bar=psi_bar,
                kkt_stat=kkt_stat, n_backtracks=backtracks, inner_iters=inner_iters,
                rho=rho, P_next=P_new, inner_grad_norm=res.final_grad_norm,
            )
            return x_new, beta, rec
        beta *= cfg.mu
    raise BacktrackFailure(
        f"no beta <= {beta / cfg.mu:.3g} gave descent at iteration {k}"
    )


def _solve_model(p: ProblemOracle, M: LinearizedModel, P_k: float, cfg: QlpConfig,
                 grad_norm: float, guess: Optional[np.ndarray]):
    """Approximate minimizer of the regularized model; ``iterations``
    counts every inner step spent, fallbacks included."""
    gap_tol = 0.1 * _descent_slack(P_k)
    if cfg.inner_solver == "dual_newton" or (
            cfg.inner_solver == "auto" and prefer_dual(cfg.q, M.m)):
        return solve_model_dual(M, gap_tol, cfg.max_newton, counters=p.counters)

    obj = SmoothObjective(M.value, M.gradient, M.beta)
    start = M.anchor
    if guess is not None and M.value(guess) < P_k:
        start = guess
    tol = _inner_tol(cfg, grad_norm)
    res = solve_unconstrained(obj, start, tol, cfg.max_inner, p.counters)
    spent = res.iterations

    def short(r):
        # an exact minimizer satisfies model(x+) + beta/2 ||s||^2 <= P_k
        s = r.minimizer - M.anchor
        return r.value + 0.5 * M.beta * (s @ s) > P_k + _descent_slack(P_k)

    for _ in range(cfg.max_refinements):
        if not short(res) or res.status is InnerStatus.STALLED:
            break
        if tol <= cfg.inner_tol_floor * 1e-3:
            break
        tol *= 1e-2
        res = solve_unconstrained(obj, res.minimizer, tol, cfg.max_inner, p.counters)
        spent += res.iterations
    if cfg.inner_solver == "auto" and short(res):
        alt = solve_model_dual(M, gap_tol, cfg.max_newton, counters=p.counters)
        spent += alt.iterations
        if alt.value < res.value:
            res = alt
    return replace(res, iterations=spent)


def _stalled(trace: list[IterRecord], window: int) -> bool:
    """True when the last ``window`` steps left P unchanged up to rounding."""
    if window < 1 or len(trace) < window:
        return False
    return all(r.P - r.P_next <= 4.0 * _descent_slack(r.P) for r in trace[-window:])


def qlp_step(p: ProblemOracle, x_k, beta_start: float, cfg: QlpConfig, k: int = 0):
    """One outer iteration from ``x_k``.

    Returns ``(x_next, beta_accepted, record)``; raises
    :class:`BacktrackFailure` when ``max_backtracks`` increases of ``beta``
    do not produce descent and :class:`PrecisionFloor` when the predicted
    decrease is too small to verify in floating point.
    """
    if beta_start < cfg.beta_floor:
        raise DomainError("beta_start must be >= beta_floor")
    return _step(p, _Point.evaluate(p, x_k), beta_start, cfg, k)


def qlp_solve(p: ProblemOracle, x0, cfg: QlpConfig,
              beta_start: Optional[float] = None) -> SolveReport:
    """Run the qLP method from ``x0`` at fixed ``rho``.

    Stops with ``Converged`` once ``|f_k - f_{k-1}| <= eps_f`` and
    ``||F(x_k)|| <= eps_feas``; every other outcome is reported through the
    status, never raised.
    """
    t0 = time.perf_counter()
    c0 = p.counters.copy()
    rho, q = cfg.rho, cfg.q
    trace: list[IterRecord] = []
    beta = max(cfg.beta_floor, beta_start or cfg.beta_floor)
    status, message = SolveStatus.MAX_OUTER, ""
    x = np.array(x0, dtype=float)
    pt = None
    try:
        if not np.all(np.isfinite(x)):
            raise DomainError("x0 must be finite")
        pt = _Point.evaluate(p, x)
        if qnorm_pow(pt.F, q) > 1.0:
            logger.warning("starting point has ||F(x0)||_q^q = %.3g > 1",
                           qnorm_pow(pt.F, q))
        P0 = pt.penalty(rho, q)
        guard = P0 + 1e6 * (1.0 + abs(P0))
        f_prev = None
        for k in range(cfg.max_outer):
            feas = float(np.linalg.norm(pt.F))
            if f_prev is not None and abs(pt.f - f_prev) <= cfg.eps_f and feas <= cfg.eps_feas:
                status = SolveStatus.CONVERGED
                break
            if feas > cfg.eps_feas and (
                np.linalg.norm(pt.penalty_grad(rho, q)) <= cfg.stat_tol
                or _stalled(trace, cfg.stall_window)
            ):
                status = SolveStatus.STATIONARY
                break
            if cfg.wall_clock_limit is not None and time.perf_counter() - t0 > cfg.wall_clock_limit:
                status = SolveStatus.TIME_LIMIT
                break
            guess = None
            if trace:
                guess = pt.x + (pt.x - trace[-1].x)
            x_new, beta_acc, rec = _step(p, pt, beta, cfg, k, guess)
            trace.append(rec)
            if rec.P_next > guard:
                raise EvaluationError("penalty grew beyond the divergence guard")
            f_prev = pt.f
            pt = _Point.evaluate(p, x_new)
            beta = max(cfg.beta_floor, beta_acc / cfg.mu)
        else:
            status = SolveStatus.MAX_OUTER
            feas = float(np.linalg.norm(pt.F))
            if f_prev is not None and abs(pt.f - f_prev) <= cfg.eps_f and feas <= cfg.eps_feas:
                status = SolveStatus.CONVERGED
    except PrecisionFloor as exc:
        feas = float(np.linalg.norm(pt.F))
        status = SolveStatus.STATIONARY
        if feas <= cfg.eps_feas and (f_prev is None or abs(pt.f - f_prev) <= cfg.eps_f):
            status = SolveStatus.CONVERGED
        message = str(exc)
    except BacktrackFailure as exc:
        status, message = SolveStatus.BACKTRACK_FAILURE, str(exc)
    except (EvaluationError, FloatingPointError, DomainError, np.linalg.LinAlgError) as exc:
        status, message = SolveStatus.ERROR, f"{type(exc).__name__}: {exc}"

    if pt is None:
        x_final = x
        f_final = feas_final = kkt_final = float("nan")
        lam = np.full(p.m, np.nan)
    else:
        x_final = pt.x
        f_final = pt.f
        feas_final = float(np.linalg.norm(pt.F))
        lam = multiplier_estimate(pt.F, rho, q)
        kkt_final = float(np.linalg.norm(pt.g + pt.J.T @ lam))
    return SolveReport(
        status=status, x_final=x_final, lam_final=lam, trace=trace,
        counters=p.counters - c0, elapsed=time.perf_counter() - t0,
        f_final=f_final, feas_final=feas_final, kkt_stat_final=kkt_final,
        rho_final=rho, beta_final=trace[-1].beta if trace else beta,
        rho_schedule=[rho], message=message,
    )


def qlp_with_rho_search(p: ProblemOracle, x0, cfg: QlpConfig, tau: float = 10.0,
                        max_rho_updates: int = 12) -> SolveReport:
    """Penalty continuation: multiply ``rho`` by ``tau`` and rerun the qLP
    method warm-started at the previous point until ``||F|| <= eps_feas``.

    The first run already uses ``tau * cfg.rho``.
    """
    if not tau > 1:
        raise DomainError("tau must exceed 1")
    if max_rho_updates < 1:
        raise DomainError("max_rho_updates must be positive")
    t0 = time.perf_counter()
    x = np.array(x0, dtype=float)
    rho = cfg.rho
    beta = None
    trace: list[IterRecord] = []
    schedule: list[float] = []
    counters = EvalCounters()
    rep = None
    for _ in range(max_rho_updates):
        rho *= tau
        schedule.append(rho)
        limit = cfg.wall_clock_limit
        if limit is not None:
            limit = max(0.0, limit - (time.perf_counter() - t0))
        stage = replace(cfg, rho=rho, wall_clock_limit=limit)
        rep = qlp_solve(p, x, stage, beta_start=beta)
        offset = len(trace)
        for rec in rep.trace:
            rec.k += offset
        trace.extend(rep.trace)
        counters = counters + rep.counters
        x = rep.x_final
        beta = rep.beta_final
        if rep.status in (SolveStatus.ERROR, SolveStatus.TIME_LIMIT,
                          SolveStatus.BACKTRACK_FAILURE):
            break
        if rep.feas_final <= cfg.eps_feas:
            break
    status = rep.status
    if rep.feas_final > cfg.eps_feas and status in (SolveStatus.CONVERGED, SolveStatus.STATIONARY):
        status = SolveStatus.MAX_OUTER
    return replace(rep, status=status, trace=trace, counters=counters,
                   elapsed=time.perf_counter() - t0, rho_schedule=schedule)


def iteration_bound_monitor(trace: list[IterRecord], beta_bar: float, P_hi: float,
                            P_lo: float, eps: float) -> bool:
    """Check the outer-iteration bound against an observed trace.

    Counts the iterations with ``psi_bar > eps^2 / (2 beta_bar)`` and compares
    them with ``ceil(2 beta_bar (P_hi - P_lo) / eps^2)``.
    """
    if not trace:
        raise DomainError("trace must be nonempty")
    if not (eps > 0 and beta_bar > 0):
        raise DomainError("eps and beta_bar must be positive")
    threshold = eps**2 / (2.0 * beta_bar)
    count = sum(1 for rec in trace if rec.psi_bar > threshold)
    bound = math.ceil(2.0 * beta_bar * max(P_hi - P_lo, 0.0) / eps**2)
    return count <= bound


def gradient_bound(rec: IterRecord, constants: KnownConstants, m: int, q: float,
                   f_low: Optional[float] = None) -> float:
    """Upper bound on ``||grad P(x_{k+1})||`` in terms of the accepted step."""
    c = constants
    if None in (c.lipschitz_grad_f, c.lipschitz_jac_F, c.bound_jac_F):
        raise DomainError("need lipschitz_grad_f, lipschitz_jac_F and bound_jac_F")
    f_low = c.objective_lower_bound if f_low is None else f_low
    rho, dx = rec.rho, rec.step_norm
    L_f, L_F, M_F = c.lipschitz_grad_f, c.lipschitz_jac_F, c.bound_jac_F
    C = 3.0 * m ** ((2.0 - q) / 2.0) * rho * M_F * L_F ** (q - 1.0) / 2.0 ** (q - 1.0)
    gamma = L_f + rec.beta
    if L_F > 0:
        if f_low is None:
            raise DomainError("need an objective lower bound when L_F > 0")
        gamma += (m ** ((2.0 - q) / 2.0) * q ** ((q - 1.0) / q) * L_F
                  * rho ** (1.0 / q) * max(rec.P - f_low, 0.0) ** ((q - 1.0) / q))
    return C * dx ** (2.0 * (q - 1.0)) + gamma * dx
