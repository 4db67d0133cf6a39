import csv
import io
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from odefilter import get_problem, solve
from odefilter.cli import (
    BENCHMARK_HEADER,
    CALIBRATION_HEADER,
    UsageError,
    format_float,
    parse_ladder,
    run,
)


def read_csv(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


# ---------------------------------------------------------------- solve

def test_solve_example(tmp_path):
    out = tmp_path / "sol.csv"
    code = run(["solve", "--problem", "logistic", "--algorithm", "eks1", "--order", "3",
                "--diffusion", "tv", "--abstol", "1e-8", "--reltol", "1e-8", "--output", str(out)])
    assert code == 0
    rows = read_csv(out)
    assert rows[0] == ["t", "mean_1", "std_1"]
    post, _ = solve(get_problem("logistic"), "eks1", q=3, tau_abs=1e-8, tau_rel=1e-8)
    data = np.array(rows[1:], dtype=float)
    # 17 significant digits round-trip exactly
    np.testing.assert_array_equal(data[:, 0], post.times)
    np.testing.assert_array_equal(data[:, 1], post.means[:, 0])
    np.testing.assert_array_equal(data[:, 2], post.stds[:, 0])


def test_solve_json_to_stdout(capsys):
    assert run(["solve", "--problem", "lotka-volterra", "--format", "json"]) == 0
    records = json.loads(capsys.readouterr().out)
    assert set(records[0]) == {"t", "mean_1", "mean_2", "std_1", "std_2"}
    assert records[0]["t"] == 0.0 and records[-1]["t"] == 10.0


def test_solve_prey_decay_variant_fails_with_exit_3(capsys):
    code = run(["solve", "--problem", "lotka-volterra", "--variant", "prey-decay"])
    assert code == 3
    err = capsys.readouterr().err.strip().splitlines()
    assert len(err) == 1
    diag = json.loads(err[0])
    assert diag["outcome"] in ("min-step-failure", "non-finite-state")
    assert diag["t_reached"] < 10.0


# ---------------------------------------------------------------- usage errors

@pytest.mark.parametrize("argv", [
    ["solve", "--problem", "logistic", "--algorithm", "ekf1", "--diffusion", "tv-mv"],
    ["solve", "--problem", "logistic", "--algorithm", "eks2"],
    ["solve", "--problem", "logistic", "--diffusion", "huge"],
    ["solve", "--problem", "logistic", "--order", "7"],
    ["solve", "--problem", "logistic", "--abstol", "-1"],
    ["solve", "--problem", "nope"],
    ["solve", "--problem", "logistic", "--variant", "prey-decay"],
    ["solve"],
    ["benchmark", "--problem", "logistic", "--tolerances", "1e-4:x"],
    ["benchmark", "--problem", "logistic", "--tolerances", "3e-4:1e-6"],
    ["benchmark", "--problem", "logistic", "--algorithms", "eks1,eks1"],
    ["benchmark", "--problem", "logistic", "--jobs", "0"],
    ["calibration-report", "--problem", "logistic", "--algorithms", "dp5"],
    ["frobnicate"],
])
def test_usage_errors_exit_2_before_solving(argv, capsys, monkeypatch):
    import odefilter.cli as cli

    def forbidden(*a, **k):
        raise AssertionError("a solve started")

    monkeypatch.setattr(cli, "solve_adaptive", forbidden)
    monkeypatch.setattr(cli, "work_precision", forbidden)
    assert run(argv) == 2
    assert "usage" in capsys.readouterr().err


def test_help_exits_0(capsys):
    assert run(["--help"]) == 0
    assert "benchmark" in capsys.readouterr().out


def test_parse_ladder():
    assert parse_ladder("1e-4:1e-6") == [(1e-4, 1e-1), (1e-5, 1e-2), (1e-6, 1e-3)]
    assert parse_ladder("1e-8") == [(1e-8, 1e-5)]
    with pytest.raises(UsageError):
        parse_ladder("1e-4:0")


# ---------------------------------------------------------------- list-problems

def test_list_problems(capsys):
    assert run(["list-problems"]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[0] == ["problem", "d", "t0", "t1", "params"]
    assert [r[0] for r in rows[1:]] == ["logistic", "lotka-volterra", "fitzhugh-nagumo",
                                         "vanderpol-stiff", "brusselator"]
    lv = rows[2]
    assert json.loads(lv[4]) == {"alpha": 1.5, "beta": 1.0, "delta": 1.0, "gamma": 3.0,
                                 "variant": "classic"}


# ---------------------------------------------------------------- benchmark

BENCH = ["benchmark", "--problem", "lotka-volterra", "--algorithms", "eks1,ekf0,dp5",
         "--order", "5", "--tolerances", "1e-4:1e-6"]


def test_benchmark_schema_and_round_trip(tmp_path):
    out = tmp_path / "wp.csv"
    assert run(BENCH + ["--output", str(out)]) == 0
    rows = read_csv(out)
    assert rows[0] == BENCHMARK_HEADER
    assert len(rows) == 1 + 3 * 3
    assert [r[1] for r in rows[1:]] == ["eks1"] * 3 + ["ekf0"] * 3 + ["dp5"] * 3
    assert all(r[12] == "success" for r in rows[1:])
    assert all(r[13] == "nan" for r in rows[1:])
    for r in rows[1:]:
        for cell in (r[4], r[5], r[6]):
            assert format_float(float(cell)) == cell


def test_benchmark_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    assert run(BENCH + ["--output", str(a)]) == 0
    assert run(BENCH + ["--output", str(b), "--jobs", "2"]) == 0
    assert a.read_bytes() == b.read_bytes()


def test_benchmark_timing_and_json(capsys):
    assert run(["benchmark", "--problem", "logistic", "--algorithms", "ekf1",
                "--tolerances", "1e-5:1e-5", "--timing", "--format", "json"]) == 0
    [rec] = json.loads(capsys.readouterr().out)
    assert rec["wall_s"] > 0 and rec["algorithm"] == "ekf1"


def test_benchmark_records_failures_in_rows(capsys):
    assert run(["benchmark", "--problem", "lotka-volterra", "--variant", "prey-decay",
                "--algorithms", "ekf1", "--tolerances", "1e-6:1e-6"]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[1][12] != "success" and rows[1][6] == "nan"


# ---------------------------------------------------------------- calibration report

def test_calibration_report(capsys):
    assert run(["calibration-report", "--problem", "logistic", "--algorithms", "eks1,eks0",
                "--diffusion", "tv", "--tolerances", "1e-5:1e-7"]) == 0
    rows = list(csv.reader(io.StringIO(capsys.readouterr().out)))
    assert rows[0] == CALIBRATION_HEADER and len(rows) == 7
    for r in rows[1:]:
        assert float(r[8]) < 1.0 < float(r[9])
        assert math.isfinite(float(r[7]))


def test_calibration_report_without_reference_exits_3(capsys):
    code = run(["calibration-report", "--problem", "vanderpol-stiff", "--tolerances", "1e-3:1e-3",
                "--algorithms", "eks1"])
    assert code == 3
    assert json.loads(capsys.readouterr().err.strip())["outcome"] == "no-reference"


# ---------------------------------------------------------------- entry points

def test_module_entry_point():
    res = subprocess.run([sys.executable, "-m", "odefilter", "list-problems", "--format", "json"],
                         capture_output=True, text=True, check=True)
    assert len(json.loads(res.stdout)) == 5
