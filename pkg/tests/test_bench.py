import csv
import io
import math
import subprocess
import sys

import pytest

from qlp.bench import (
    CSV_COLUMNS,
    TRACE_COLUMNS,
    ConfigError,
    RunRow,
    emit_table,
    emit_trace,
    load_config,
    parse_csv,
    run_cell,
    run_grid,
)
from qlp.cli import main
from qlp.core import EvalCounters
from qlp.problems import make_problem
from qlp.solver import qlp_solve

SMALL = dict(problems=["toy1d", "eq_qp:n=8,m=3"], q=[1.5, 2.0], rho=[10.0], max_iter=50)


def row(**kw):
    base = dict(problem="eq_qp:n=8,m=3", n=8, m=3, q=1.5, rho=10.0, beta=1.0, iters=12,
                cpu_seconds=0.0123, f_star=-1.234567891, feas=1.7612e-06,
                status="Converged", counters=EvalCounters(13, 13, 14, 13, 120))
    base.update(kw)
    return RunRow(**base)


class TestConfig:
    def test_toml(self, tmp_path):
        path = tmp_path / "grid.toml"
        path.write_text('problems = ["toy1d"]\nq = [1.5, 2]\nrho = 10\nseed = 3\n')
        grid = load_config(path)
        assert grid.q == (1.5, 2.0) and grid.rho == (10.0,) and grid.seed == 3
        assert grid.beta == (1.0,) and len(grid.cells()) == 2

    def test_overrides_win(self):
        grid = load_config(SMALL, q=[1.1], max_iter=None)
        assert grid.q == (1.1,) and grid.max_iter == 50

    @pytest.mark.parametrize("bad", [
        dict(SMALL, problems=["nope"]),
        dict(SMALL, q=[1.0]),
        dict(SMALL, rho=[]),
        dict(SMALL, colour="red"),
        {k: v for k, v in SMALL.items() if k != "rho"},
        dict(SMALL, q="two"),
        dict(SMALL, rho_search=0.5),
        dict(SMALL, problems=["eq_qp:n=3,m=5"]),
    ])
    def test_rejected(self, bad):
        with pytest.raises(ConfigError):
            load_config(bad)

    def test_unreadable(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config(tmp_path / "missing.toml")
        bad = tmp_path / "bad.toml"
        bad.write_text("q = [")
        with pytest.raises(ConfigError):
            load_config(bad)


class TestGrid:
    def test_single_cell_matches_direct_solve(self):
        grid = load_config(dict(problems=["eq_qp:n=8,m=3"], q=1.5, rho=10.0, max_iter=50))
        (r,) = run_grid(grid)
        spec = make_problem("eq_qp:n=8,m=3")
        rep = qlp_solve(spec.oracle, spec.x0, grid.solver_config(1.5, 10.0, 1.0))
        assert (r.iters, r.status, r.counters) == (rep.iterations, rep.status.value, rep.counters)
        assert r.f_star == rep.f_final and r.feas == rep.feas_final

    def test_rows_sorted_and_complete(self):
        rows = run_grid(SMALL)
        assert len(rows) == 4
        assert rows == sorted(rows, key=RunRow.sort_key)

    def test_serial_equals_parallel(self):
        a = run_grid(SMALL, jobs=1)
        b = run_grid(SMALL, jobs=2)
        for x, y in zip(a, b):
            x.cpu_seconds = y.cpu_seconds = 0.0
        assert a == b

    def test_time_limit_cell(self):
        grid = load_config(dict(SMALL, problems=["eq_qp:n=8,m=3"], q=2.0, time_limit=0.0))
        (r,) = run_grid(grid)
        assert r.status == "TimeLimit"
        assert "| - |" in emit_table([r], "md")

    def test_failing_cell_becomes_status(self, monkeypatch):
        def boom(*args, **kwargs):
            raise RuntimeError("solver crashed")

        monkeypatch.setattr("qlp.bench.qlp_solve", boom)
        (r,) = run_grid(dict(SMALL, problems=["toy1d"], q=2.0))
        assert r.status.startswith("Error") and math.isnan(r.f_star)

    def test_rho_search_cell(self):
        grid = load_config(dict(problems=["toy1d"], q=1.5, rho=1.0, rho_search=10.0))
        r = run_cell("toy1d", 1.5, 1.0, 1.0, grid)
        assert r.feas <= 1e-5


class TestTable:
    def test_header_and_one_line(self):
        text = emit_table([row()], "csv")
        lines = text.strip().split("\n")
        assert len(lines) == 2
        assert lines[0] == ",".join(CSV_COLUMNS)
        assert CSV_COLUMNS == ("problem", "n", "m", "q", "rho", "beta", "iters", "cpu_s",
                               "f_star", "feas_norm", "status", "n_f", "n_grad_f", "n_F",
                               "n_jac_F", "n_inner")

    def test_number_formats(self):
        rec = next(csv.DictReader(io.StringIO(emit_table([row()], "csv"))))
        assert rec["f_star"] == "-1.23457"
        assert rec["feas_norm"] == "1.76e-06"
        assert rec["cpu_s"] == "0.012"
        assert rec["problem"] == "eq_qp:n=8,m=3"

    def test_round_trip(self):
        rows = [row(), row(q=2.0, status="MaxOuter", f_star=math.nan)]
        back = parse_csv(emit_table(rows, "csv"))
        for a, b in zip(back, [r.printed() for r in rows]):
            assert a.problem == b.problem and a.counters == b.counters and a.q == b.q
        assert parse_csv(emit_table(back, "csv"))[0] == back[0]

    def test_markdown_grouping(self):
        md = emit_table([row(), row(problem="toy1d", n=1, m=1, status="MaxOuter")], "md")
        assert "### eq_qp:n=8,m=3 (n=8, m=3)" in md and "### toy1d (n=1, m=1)" in md
        toy_line = [ln for ln in md.splitlines() if "MaxOuter" in ln][0]
        assert toy_line.count("| - ") == 4
        assert "-1.23457" in md

    def test_trace(self):
        grid = load_config(dict(SMALL, problems=["toy1d"], q=2.0), )
        from dataclasses import replace
        rows = run_grid(replace(grid, keep_trace=True))
        text = emit_trace(rows)
        lines = text.strip().split("\n")
        assert lines[0] == ",".join(TRACE_COLUMNS)
        assert len(lines) == 1 + rows[0].iters


class TestCli:
    def test_runs_from_flags(self, capsys):
        code = main(["--problem", "toy1d", "--q", "2", "--rho", "10", "--max-iter", "20"])
        assert code == 0
        out = capsys.readouterr().out
        assert out.startswith("problem,n,m,")

    def test_config_error_exit_code(self, capsys):
        assert main(["--problem", "unknown", "--q", "2", "--rho", "10"]) == 2
        assert "config error" in capsys.readouterr().err

    def test_files(self, tmp_path):
        cfg = tmp_path / "g.toml"
        cfg.write_text('problems = ["toy1d"]\nq = 1.5\nrho = [1.0, 10.0]\nmax_iter = 30\n')
        out, tr = tmp_path / "t.md", tmp_path / "trace.csv"
        assert main(["--config", str(cfg), "--format", "md", "-o", str(out), "--trace", str(tr)]) == 0
        assert "### toy1d" in out.read_text()
        assert tr.read_text().startswith("problem,")

    def test_module_entry_point(self):
        res = subprocess.run([sys.executable, "-m", "qlp", "--problem", "toy1d", "--q", "2",
                              "--rho", "5", "--max-iter", "5"], capture_output=True, text=True)
        assert res.returncode == 0 and res.stdout.count("\n") == 2
