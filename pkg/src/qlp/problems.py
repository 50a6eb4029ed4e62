"""Built-in test problems with analytic derivatives.

Every builder returns a :class:`ProblemSpec`; families with a closed-form
KKT point carry it in ``known_solution``. The ``*_like`` families mimic the
structure of classic optimal-control and orthogonal-regression benchmarks
at configurable sizes but are not those benchmark instances.
"""

from __future__ import annotations

import inspect
import re
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .core import DomainError, KnownConstants, ProblemOracle

__all__ = [
    "KnownSolution",
    "ProblemSpec",
    "make_toy_1d",
    "make_eq_qp",
    "make_sphere_quadratic",
    "make_dtoc_like",
    "make_orthrega_like",
    "derivative_check",
    "REGISTRY",
    "parse_problem_name",
    "make_problem",
]


@dataclass(frozen=True)
class KnownSolution:
    x: np.ndarray
    lam: np.ndarray
    f: float


@dataclass
class ProblemSpec:
    name: str
    params: dict
    oracle: ProblemOracle
    x0: np.ndarray
    known_solution: Optional[KnownSolution] = None
    # extra closed-form data used by tests (e.g. the QP matrices)
    data: Optional[dict] = None

    @property
    def n(self) -> int:
        return self.oracle.n

    @property
    def m(self) -> int:
        return self.oracle.m


def make_toy_1d() -> ProblemSpec:
    """``min x^2  s.t.  x - 1 = 0``; KKT pair ``x* = 1, lambda* = -2``."""
    oracle = ProblemOracle(
        n=1,
        m=1,
        eval_f=lambda x: x[0] ** 2,
        grad_f_fn=lambda x: np.array([2.0 * x[0]]),
        eval_F=lambda x: np.array([x[0] - 1.0]),
        jac_F_fn=lambda x: np.array([[1.0]]),
        constants=KnownConstants(
            lipschitz_grad_f=2.0, lipschitz_jac_F=0.0, bound_jac_F=1.0,
            objective_lower_bound=0.0,
        ),
    )
    sol = KnownSolution(np.array([1.0]), np.array([-2.0]), 1.0)
    return ProblemSpec("toy1d", {}, oracle, np.zeros(1), sol)


def _orthogonal(rng: np.random.Generator, n: int) -> np.ndarray:
    Q, R = np.linalg.qr(rng.standard_normal((n, n)))
    return Q * np.sign(np.diag(R))


def make_eq_qp(n: int = 50, m: int = 20, seed: int = 0, cond: float = 100.0) -> ProblemSpec:
    """Convex QP ``1/2 x'Qx + c'x  s.t.  Ax = b``.

    ``Q`` has eigenvalues spread geometrically over ``[1, cond]``; ``A`` is a
    random full-row-rank Gaussian matrix scaled by ``1/sqrt(n)``. The KKT
    point solves ``[[Q, A'], [A, 0]] (x, lam) = (-c, b)``.
    """
    n, m = int(n), int(m)
    if not (1 <= m < n):
        raise DomainError("need 1 <= m < n")
    if not cond >= 1:
        raise DomainError("cond must be >= 1")
    rng = np.random.default_rng(seed)
    U = _orthogonal(rng, n)
    eig = np.geomspace(1.0, float(cond), n)
    Q = (U * eig) @ U.T
    Q = 0.5 * (Q + Q.T)
    for _ in range(10):
        A = rng.standard_normal((m, n)) / np.sqrt(n)
        if np.linalg.matrix_rank(A) == m:
            break
    else:
        raise DomainError("could not draw a full-row-rank constraint matrix")
    c = rng.standard_normal(n)
    b = rng.standard_normal(m)

    K = np.block([[Q, A.T], [A, np.zeros((m, m))]])
    sol = np.linalg.solve(K, np.concatenate([-c, b]))
    xs, lams = sol[:n], sol[n:]
    fs = float(0.5 * xs @ Q @ xs + c @ xs)

    sigma = np.linalg.svd(A, compute_uv=False)
    oracle = ProblemOracle(
        n=n,
        m=m,
        eval_f=lambda x: 0.5 * x @ Q @ x + c @ x,
        grad_f_fn=lambda x: Q @ x + c,
        eval_F=lambda x: A @ x - b,
        jac_F_fn=lambda x: A,
        constants=KnownConstants(
            lipschitz_grad_f=float(eig[-1]),
            lipschitz_jac_F=0.0,
            bound_jac_F=float(sigma[0]),
            objective_lower_bound=float(-0.5 * c @ np.linalg.solve(Q, c)),
        ),
    )
    params = dict(n=n, m=m, seed=seed, cond=cond)
    return ProblemSpec(
        "eq_qp", params, oracle, np.zeros(n), KnownSolution(xs, lams, fs),
        data=dict(
            Q=Q, c=c, A=A, b=b,
            # least-norm feasible point and the unconstrained minimizer
            x_feasible=np.linalg.lstsq(A, b, rcond=None)[0],
            x_unconstrained=-np.linalg.solve(Q, c),
        ),
    )


def make_sphere_quadratic(n: int = 20, seed: int = 0) -> ProblemSpec:
    """``min x'Ax  s.t.  ||x||^2 - 1 = 0`` (smallest eigenpair of ``A``).

    The spectrum is a jittered uniform grid on ``[-1, 1]`` so consecutive
    eigenvalues are at least half a grid step apart.
    """
    n = int(n)
    if n < 2:
        raise DomainError("need n >= 2")
    rng = np.random.default_rng(seed)
    step = 2.0 / (n - 1)
    eig = np.linspace(-1.0, 1.0, n) + rng.uniform(-0.25, 0.25, n) * step
    U = _orthogonal(rng, n)
    A = (U * eig) @ U.T
    A = 0.5 * (A + A.T)
    i = int(np.argmin(eig))
    xs = U[:, i].copy()
    lam_min = float(eig[i])
    oracle = ProblemOracle(
        n=n,
        m=1,
        eval_f=lambda x: x @ A @ x,
        grad_f_fn=lambda x: 2.0 * (A @ x),
        eval_F=lambda x: np.array([x @ x - 1.0]),
        jac_F_fn=lambda x: 2.0 * x[None, :],
        constants=KnownConstants(
            lipschitz_grad_f=2.0 * float(np.max(np.abs(eig))),
            lipschitz_jac_F=2.0,
        ),
    )
    x0 = rng.standard_normal(n)
    x0 /= np.linalg.norm(x0)
    return ProblemSpec(
        "sphere", dict(n=n, seed=seed), oracle, x0,
        KnownSolution(xs, np.array([-lam_min]), lam_min),
        data=dict(A=A, eigenvalues=np.sort(eig)),
    )


def make_dtoc_like(N_stages: int = 10, state_dim: int = 2, control_dim: int = 1,
                   seed: int = 0, h: float = 0.1) -> ProblemSpec:
    """Discrete-time tracking problem with ``tanh`` dynamics.

    Variables are ``[s_1, ..., s_N, u_0, ..., u_{N-1}]`` (``s_0`` fixed);
    constraints ``s_{t+1} - s_t - h tanh(W s_t + B u_t) = 0``; the objective
    is ``h/2 * sum_t (||s_{t+1} - target||^2 + r ||u_t||^2)``.
    """
    N, d, k = int(N_stages), int(state_dim), int(control_dim)
    if min(N, d, k) < 1:
        raise DomainError("all dimensions must be >= 1")
    rng = np.random.default_rng(seed)
    W = rng.standard_normal((d, d)) / np.sqrt(d)
    B = rng.standard_normal((d, k)) / np.sqrt(k)
    s0 = rng.standard_normal(d)
    target = rng.standard_normal(d)
    r = 0.1
    ns, nu = N * d, N * k
    n, m = ns + nu, ns

    def split(x):
        S = np.vstack([s0, x[:ns].reshape(N, d)])
        U = x[ns:].reshape(N, k)
        return S, U

    def f(x):
        S, U = split(x)
        return 0.5 * h * (np.sum((S[1:] - target) ** 2) + r * np.sum(U**2))

    def grad_f(x):
        S, U = split(x)
        return h * np.concatenate([(S[1:] - target).ravel(), r * U.ravel()])

    def F(x):
        S, U = split(x)
        Z = S[:-1] @ W.T + U @ B.T
        return (S[1:] - S[:-1] - h * np.tanh(Z)).ravel()

    def jac_F(x):
        S, U = split(x)
        Z = S[:-1] @ W.T + U @ B.T
        D = h * (1.0 - np.tanh(Z) ** 2)
        J = np.zeros((m, n))
        I = np.eye(d)
        for t in range(N):
            rows = slice(t * d, (t + 1) * d)
            J[rows, t * d:(t + 1) * d] = I
            if t > 0:
                J[rows, (t - 1) * d:t * d] = -I - D[t][:, None] * W
            J[rows, ns + t * k:ns + (t + 1) * k] = -D[t][:, None] * B
        return J

    oracle = ProblemOracle(n=n, m=m, eval_f=f, grad_f_fn=grad_f, eval_F=F, jac_F_fn=jac_F)
    # feasible start: zero controls and the matching forward simulation
    S = [s0]
    for _ in range(N):
        S.append(S[-1] + h * np.tanh(W @ S[-1]))
    x0 = np.concatenate([np.concatenate(S[1:]), np.zeros(nu)])
    params = dict(N_stages=N, state_dim=d, control_dim=k, seed=seed)
    return ProblemSpec("dtoc", params, oracle, x0,
                       data=dict(W=W, B=B, s0=s0, target=target, h=h))


def make_orthrega_like(n_points: int = 16, seed: int = 0, noise: float = 0.05) -> ProblemSpec:
    """Orthogonal regression of a centred conic to noisy planar points.

    Variables are ``(cx, cy, h11, h22, h12)`` followed by one foot point
    ``(u_i, v_i)`` per data point. Constraint ``i`` puts the foot point on
    ``h11 du^2 + 2 h12 du dv + h22 dv^2 = 1`` with ``(du, dv)`` the offset from
    the centre; the objective sums squared data-to-foot distances.
    """
    N = int(n_points)
    if N < 3:
        raise DomainError("need n_points >= 3")
    rng = np.random.default_rng(seed)
    center = rng.uniform(-0.5, 0.5, 2)
    axes = rng.uniform(1.0, 2.0, 2)
    phi = rng.uniform(0.0, np.pi)
    R = np.array([[np.cos(phi), -np.sin(phi)], [np.sin(phi), np.cos(phi)]])
    H = R @ np.diag(1.0 / axes**2) @ R.T
    ang = np.sort(rng.uniform(0.0, 2.0 * np.pi, N))
    on_curve = center + (R @ (axes[:, None] * np.vstack([np.cos(ang), np.sin(ang)]))).T
    data = on_curve + noise * rng.standard_normal((N, 2))
    n, m = 5 + 2 * N, N

    def unpack(x):
        return x[:2], x[2], x[3], x[4], x[5:].reshape(N, 2)

    def f(x):
        return float(np.sum((x[5:].reshape(N, 2) - data) ** 2))

    def grad_f(x):
        g = np.zeros(n)
        g[5:] = 2.0 * (x[5:].reshape(N, 2) - data).ravel()
        return g

    def F(x):
        c, h11, h22, h12, P = unpack(x)
        du, dv = P[:, 0] - c[0], P[:, 1] - c[1]
        return h11 * du**2 + 2.0 * h12 * du * dv + h22 * dv**2 - 1.0

    def jac_F(x):
        c, h11, h22, h12, P = unpack(x)
        du, dv = P[:, 0] - c[0], P[:, 1] - c[1]
        J = np.zeros((m, n))
        gu = 2.0 * (h11 * du + h12 * dv)
        gv = 2.0 * (h12 * du + h22 * dv)
        J[:, 0], J[:, 1] = -gu, -gv
        J[:, 2], J[:, 3], J[:, 4] = du**2, dv**2, 2.0 * du * dv
        idx = np.arange(N)
        J[idx, 5 + 2 * idx] = gu
        J[idx, 6 + 2 * idx] = gv
        return J

    oracle = ProblemOracle(n=n, m=m, eval_f=f, grad_f_fn=grad_f, eval_F=F, jac_F_fn=jac_F)
    # start: unit circle around the data mean, feet at the data
    x0 = np.concatenate([data.mean(axis=0), [1.0, 1.0, 0.0], data.ravel()])
    params = dict(n_points=N, seed=seed)
    truth = np.concatenate([center, [H[0, 0], H[1, 1], H[0, 1]], on_curve.ravel()])
    return ProblemSpec("orthrega", params, oracle, x0,
                       data=dict(points=data, truth=truth, noise=noise))


def derivative_check(p: ProblemOracle, x, h: float = 1e-6) -> float:
    """Largest relative error of ``grad_f`` and ``jac_F`` against central
    differences with per-coordinate step ``h * (1 + |x_i|)``.

    The error of an entry ``a`` with difference quotient ``d`` is
    ``|a - d| / max(1, |a|)``.
    """
    if not h > 0:
        raise DomainError("h must be positive")
    x = np.asarray(x, dtype=float)
    g = p.grad_f(x)
    J = p.jac_F(x)
    worst = 0.0
    for i in range(p.n):
        hi = h * (1.0 + abs(x[i]))
        xp, xm = x.copy(), x.copy()
        xp[i] += hi
        xm[i] -= hi
        step = xp[i] - xm[i]
        dg = (p.f(xp) - p.f(xm)) / step
        dJ = (p.F(xp) - p.F(xm)) / step
        worst = max(worst, abs(g[i] - dg) / max(1.0, abs(g[i])))
        worst = max(worst, float(np.max(np.abs(J[:, i] - dJ) / np.maximum(1.0, np.abs(J[:, i])))))
    return worst


REGISTRY: dict[str, Callable[..., ProblemSpec]] = {
    "toy1d": make_toy_1d,
    "eq_qp": make_eq_qp,
    "sphere": make_sphere_quadratic,
    "dtoc": make_dtoc_like,
    "orthrega": make_orthrega_like,
}

_NAME_RE = re.compile(r"^\s*([A-Za-z_][A-Za-z0-9_]*)\s*(?::(.*))?$")


def _coerce(text: str):
    text = text.strip()
    for conv in (int, float):
        try:
            return conv(text)
        except ValueError:
            pass
    return text


def parse_problem_name(name: str) -> tuple[str, dict]:
    """``"eq_qp:n=50,m=20,seed=7"`` -> ``("eq_qp", {"n": 50, "m": 20, "seed": 7})``."""
    match = _NAME_RE.match(name)
    if not match:
        raise KeyError(f"malformed problem name {name!r}")
    family, rest = match.group(1), match.group(2)
    if family not in REGISTRY:
        raise KeyError(f"unknown problem family {family!r}")
    params = {}
    if rest and rest.strip():
        for item in rest.split(","):
            key, sep, val = item.partition("=")
            if not sep or not key.strip():
                raise KeyError(f"malformed parameter {item!r} in {name!r}")
            params[key.strip()] = _coerce(val)
    return family, params


def make_problem(name: str, seed: Optional[int] = None) -> ProblemSpec:
    """Build a registry problem; ``seed`` fills in a missing ``seed`` parameter."""
    family, params = parse_problem_name(name)
    builder = REGISTRY[family]
    if seed is not None and "seed" not in params and "seed" in inspect.signature(builder).parameters:
        params["seed"] = seed
    try:
        return builder(**params)
    except TypeError as exc:
        raise KeyError(f"bad parameters for {family!r}: {exc}") from None
