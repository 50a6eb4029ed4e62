"""Benchmark grid runner: every (problem, q, rho, beta_floor) cell is solved
independently and summarized as one :class:`RunRow`.

A grid is described by a TOML file::

    problems = ["eq_qp:n=50,m=20,cond=100", "dtoc:N_stages=10"]
    q = [1.001, 1.5, 2.0]
    rho = [10.0, 100.0]
    beta = [1.0]
    tol_f = 1e-3          # optional, default 1e-3
    tol_feas = 1e-5       # optional, default 1e-5
    max_iter = 10000      # optional
    time_limit = 1800.0   # optional, seconds per cell
    rho_search = 10.0     # optional continuation factor; omit for fixed rho
    seed = 0              # optional, fills in problems without a seed
"""

from __future__ import annotations

import csv
import io
import math
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .core import DomainError, EvalCounters
from .problems import make_problem
from .solver import QlpConfig, SolveReport, qlp_solve, qlp_with_rho_search

__all__ = [
    "ConfigError",
    "GridConfig",
    "RunRow",
    "CSV_COLUMNS",
    "TRACE_COLUMNS",
    "load_config",
    "run_cell",
    "run_grid",
    "emit_table",
    "parse_csv",
    "emit_trace",
]

CSV_COLUMNS = (
    "problem", "n", "m", "q", "rho", "beta", "iters", "cpu_s", "f_star",
    "feas_norm", "status", "n_f", "n_grad_f", "n_F", "n_jac_F", "n_inner",
)
TRACE_COLUMNS = (
    "problem", "q", "rho_cell", "beta_floor", "k", "rho", "f", "feas", "P",
    "P_next", "beta", "step_norm", "ratio", "psi_bar", "kkt_stat",
    "n_backtracks", "inner_iters",
)
DEFAULT_TIME_LIMIT = 1800.0


class ConfigError(ValueError):
    """The grid description cannot be used."""


@dataclass(frozen=True)
class GridConfig:
    problems: tuple[str, ...]
    q: tuple[float, ...]
    rho: tuple[float, ...]
    beta: tuple[float, ...] = (1.0,)
    tol_f: float = 1e-3
    tol_feas: float = 1e-5
    max_iter: int = 10_000
    time_limit: Optional[float] = DEFAULT_TIME_LIMIT
    rho_search: Optional[float] = None
    seed: Optional[int] = None
    jobs: int = 1
    keep_trace: bool = False

    def __post_init__(self):
        if not (self.problems and self.q and self.rho and self.beta):
            raise ConfigError("problems, q, rho and beta must be nonempty")
        for name in self.problems:
            try:
                make_problem(name, seed=self.seed)
            except KeyError as exc:
                raise ConfigError(str(exc.args[0])) from None
            except DomainError as exc:
                raise ConfigError(f"{name}: {exc}") from None
        if self.jobs < 1:
            raise ConfigError("jobs must be positive")
        if self.rho_search is not None and not self.rho_search > 1:
            raise ConfigError("rho_search factor must exceed 1")
        # surfaces range errors at parse time rather than in every cell
        for q in self.q:
            for rho in self.rho:
                for beta in self.beta:
                    try:
                        self.solver_config(q, rho, beta)
                    except DomainError as exc:
                        raise ConfigError(str(exc)) from None

    def solver_config(self, q: float, rho: float, beta: float) -> QlpConfig:
        return QlpConfig(
            q=q, rho=rho, beta_floor=beta, eps_f=self.tol_f, eps_feas=self.tol_feas,
            max_outer=self.max_iter, wall_clock_limit=self.time_limit,
        )

    def cells(self) -> list[tuple[str, float, float, float]]:
        return [(p, q, r, b) for p in self.problems for q in self.q
                for r in self.rho for b in self.beta]


def _floats(value, key) -> tuple[float, ...]:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        value = [value]
    if not isinstance(value, list) or not all(
            isinstance(v, (int, float)) and not isinstance(v, bool) for v in value):
        raise ConfigError(f"{key!r} must be a number or a list of numbers")
    return tuple(float(v) for v in value)


_KNOWN_KEYS = {"problems", "q", "rho", "beta", "tol_f", "tol_feas", "max_iter",
               "time_limit", "rho_search", "seed", "jobs"}


def load_config(source: Union[str, Path, dict], **overrides) -> GridConfig:
    """Build a :class:`GridConfig` from a TOML path or an already parsed
    mapping; keyword ``overrides`` that are not ``None`` take precedence."""
    if isinstance(source, dict):
        raw = dict(source)
    else:
        try:
            with open(source, "rb") as fh:
                raw = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read {source}: {exc}") from None
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{source}: {exc}") from None
    raw.update({k: v for k, v in overrides.items() if v is not None})
    unknown = set(raw) - _KNOWN_KEYS
    if unknown:
        raise ConfigError(f"unknown keys: {sorted(unknown)}")
    missing = {"problems", "q", "rho"} - set(raw)
    if missing:
        raise ConfigError(f"missing keys: {sorted(missing)}")
    problems = raw["problems"]
    if isinstance(problems, str):
        problems = [problems]
    if not isinstance(problems, list) or not all(isinstance(p, str) for p in problems):
        raise ConfigError("'problems' must be a string or a list of strings")
    try:
        return GridConfig(
            problems=tuple(problems),
            q=_floats(raw["q"], "q"),
            rho=_floats(raw["rho"], "rho"),
            beta=_floats(raw.get("beta", 1.0), "beta"),
            tol_f=float(raw.get("tol_f", 1e-3)),
            tol_feas=float(raw.get("tol_feas", 1e-5)),
            max_iter=int(raw.get("max_iter", 10_000)),
            time_limit=(None if raw.get("time_limit", DEFAULT_TIME_LIMIT) is None
                        else float(raw.get("time_limit", DEFAULT_TIME_LIMIT))),
            rho_search=None if raw.get("rho_search") in (None, 0) else float(raw["rho_search"]),
            seed=None if raw.get("seed") is None else int(raw["seed"]),
            jobs=int(raw.get("jobs", 1)),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(str(exc)) from None


@dataclass
class RunRow:
    """Summary of one grid cell. ``trace`` is only filled on request and is
    ignored by equality."""

    problem: str
    n: int
    m: int
    q: float
    rho: float
    beta: float
    iters: int
    cpu_seconds: float
    f_star: float
    feas: float
    status: str
    counters: EvalCounters
    trace: Optional[list] = field(default=None, compare=False, repr=False)

    @classmethod
    def from_report(cls, problem: str, n: int, m: int, q: float, rho: float,
                    beta: float, report: SolveReport, cpu_seconds: float,
                    keep_trace: bool = False) -> "RunRow":
        return cls(
            problem=problem, n=n, m=m, q=q, rho=rho, beta=beta,
            iters=report.iterations, cpu_seconds=cpu_seconds,
            f_star=report.f_final, feas=report.feas_final,
            status=report.status.value, counters=report.counters.copy(),
            trace=list(report.trace) if keep_trace else None,
        )

    def sort_key(self):
        return (self.problem, self.q, self.rho, self.beta)

    def printed(self) -> "RunRow":
        """The row as it reads back from CSV (rounded to printed precision)."""
        return parse_csv(emit_table([self], "csv"))[0]


def run_cell(problem: str, q: float, rho: float, beta: float, grid: GridConfig) -> RunRow:
    """Solve one cell. Failures become status strings, never exceptions."""
    spec = make_problem(problem, seed=grid.seed)
    cfg = grid.solver_config(q, rho, beta)
    t0 = time.process_time()
    try:
        if grid.rho_search is not None:
            report = qlp_with_rho_search(spec.oracle, spec.x0, cfg, tau=grid.rho_search)
        else:
            report = qlp_solve(spec.oracle, spec.x0, cfg)
    except Exception as exc:  # a cell must never abort the grid
        return RunRow(problem, spec.n, spec.m, q, rho, beta, 0,
                      time.process_time() - t0, math.nan, math.nan,
                      f"Error: {type(exc).__name__}", spec.oracle.counters.copy())
    return RunRow.from_report(problem, spec.n, spec.m, q, rho, beta, report,
                              time.process_time() - t0, grid.keep_trace)


def _run_packed(args):
    return run_cell(*args)


def run_grid(config: Union[str, Path, dict, GridConfig], jobs: Optional[int] = None) -> list[RunRow]:
    """Run every cell of the grid and return rows sorted by
    ``(problem, q, rho, beta)``."""
    grid = config if isinstance(config, GridConfig) else load_config(config)
    if jobs is not None:
        grid = replace(grid, jobs=jobs)
    tasks = [(p, q, r, b, grid) for p, q, r, b in grid.cells()]
    if grid.jobs > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=grid.jobs) as pool:
            rows = list(pool.map(_run_packed, tasks))
    else:
        rows = [_run_packed(t) for t in tasks]
    return sorted(rows, key=RunRow.sort_key)


def _num(v: float) -> str:
    return repr(float(v))


def _csv_record(row: RunRow) -> list[str]:
    c = row.counters
    return [
        row.problem, str(row.n), str(row.m), _num(row.q), _num(row.rho), _num(row.beta),
        str(row.iters), f"{row.cpu_seconds:.3f}", f"{row.f_star:.6g}", f"{row.feas:.2e}",
        row.status, str(c.n_f), str(c.n_grad_f), str(c.n_F), str(c.n_jac_F),
        str(c.n_inner_grad_steps),
    ]


def _md_cell(row: RunRow, text: str) -> str:
    return text if row.status == "Converged" else "-"


def emit_table(rows: list[RunRow], fmt: str = "csv") -> str:
    """Render rows as CSV (fixed columns) or as Markdown grouped by problem.

    ``f_star`` keeps 6 significant digits and the feasibility 2 decimals in
    scientific notation. In Markdown, cells that did not converge show "-".
    """
    if not rows:
        raise DomainError("no rows to emit")
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for row in rows:
            w.writerow(_csv_record(row))
        return buf.getvalue()
    if fmt in ("md", "markdown"):
        out = []
        groups: dict[str, list[RunRow]] = {}
        for row in rows:
            groups.setdefault(row.problem, []).append(row)
        for problem, group in groups.items():
            out.append(f"### {problem} (n={group[0].n}, m={group[0].m})")
            out.append("")
            out.append("| q | rho | beta | # iter | cpu (s) | f* | ‖F‖ | status |")
            out.append("|---|---|---|---|---|---|---|---|")
            for row in sorted(group, key=lambda r: (r.rho, r.beta, r.q)):
                out.append(
                    f"| {row.q:g} | {row.rho:g} | {row.beta:g} "
                    f"| {_md_cell(row, str(row.iters))} "
                    f"| {_md_cell(row, f'{row.cpu_seconds:.2f}')} "
                    f"| {_md_cell(row, f'{row.f_star:.6g}')} "
                    f"| {_md_cell(row, f'{row.feas:.2e}')} | {row.status} |"
                )
            out.append("")
        return "\n".join(out)
    raise DomainError(f"unknown format {fmt!r}")


def parse_csv(text: str) -> list[RunRow]:
    """Inverse of ``emit_table(rows, "csv")`` up to printed precision."""
    reader = csv.reader(io.StringIO(text))
    header = next(reader)
    if tuple(header) != CSV_COLUMNS:
        raise ValueError(f"unexpected header {header}")
    rows = []
    for rec in reader:
        if not rec:
            continue
        d = dict(zip(CSV_COLUMNS, rec))
        rows.append(RunRow(
            problem=d["problem"], n=int(d["n"]), m=int(d["m"]), q=float(d["q"]),
            rho=float(d["rho"]), beta=float(d["beta"]), iters=int(d["iters"]),
            cpu_seconds=float(d["cpu_s"]), f_star=float(d["f_star"]),
            feas=float(d["feas_norm"]), status=d["status"],
            counters=EvalCounters(int(d["n_f"]), int(d["n_grad_f"]), int(d["n_F"]),
                                  int(d["n_jac_F"]), int(d["n_inner"])),
        ))
    return rows


def emit_trace(rows: list[RunRow]) -> str:
    """Per-iteration CSV of every row that kept its trace."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(TRACE_COLUMNS)
    for row in rows:
        for rec in row.trace or ():
            w.writerow([
                row.problem, _num(row.q), _num(row.rho), _num(row.beta), rec.k,
                *(repr(float(getattr(rec, name))) for name in (
                    "rho", "f", "feas", "P", "P_next", "beta", "step_norm", "ratio",
                    "psi_bar", "kkt_stat")),
                rec.n_backtracks, rec.inner_iters,
            ])
    return buf.getvalue()
