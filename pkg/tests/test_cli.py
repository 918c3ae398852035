from __future__ import annotations

import csv
import math
import subprocess
import sys

import pytest

from envsample.cli import EXIT_CENSORED, EXIT_CONFIG, EXIT_OK, main

from conftest import MODELS


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def run(*argv):
    return main([str(a) for a in argv])


def test_sample_rows_and_summary(tmp_path):
    out = tmp_path / "mm1.csv"
    assert run("sample", "--model", MODELS / "mm1.yaml", "--samples", 50, "--seed", 42, "--out", out, "--workers", 1) == 0
    data = rows(out)
    assert data[0] == ["run_id", "seed", "coupling_time", "work", "x1", "censored"]
    body, mean, ci = data[1:-2], data[-2], data[-1]
    assert [r[0] for r in body] == [str(i) for i in range(50)]
    assert all(0 <= int(r[4]) <= 3 for r in body)
    assert mean[0] == "mean" and ci[0] == "ci95"
    col = [float(r[2]) for r in body]
    assert float(mean[2]) == pytest.approx(math.fsum(col) / len(col), rel=1e-12)
    assert mean[-1] == "0"


def test_rerun_is_byte_identical(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for out in (a, b):
        run("run", "--model", MODELS / "negative_network.yaml", "--samples", 40, "--seed", 7, "--out", out)
    assert a.read_bytes() == b.read_bytes()


def test_different_seed_changes_output(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    run("run", "--model", MODELS / "mm1.yaml", "--samples", 30, "--seed", 1, "--out", a)
    run("run", "--model", MODELS / "mm1.yaml", "--samples", 30, "--seed", 2, "--out", b)
    assert a.read_bytes() != b.read_bytes()


@pytest.mark.parametrize("algo", ["psa", "epsa", "split"])
def test_algorithms_agree_on_samples_for_same_seed(tmp_path, algo):
    # all three read the same backward event stream, so the sample is identical
    out = tmp_path / f"{algo}.csv"
    run("run", "--model", MODELS / "mm1.yaml", "--algo", algo, "--samples", 20, "--seed", 3, "--out", out)
    ref = tmp_path / "ref.csv"
    run("run", "--model", MODELS / "mm1.yaml", "--algo", "psa", "--samples", 20, "--seed", 3, "--out", ref)
    assert [r[4] for r in rows(out)[1:-2]] == [r[4] for r in rows(ref)[1:-2]]


def test_censored_runs_exit_nonzero(tmp_path, capsys):
    out = tmp_path / "c.csv"
    args = ["run", "--model", MODELS / "batch_2_1.yaml", "--samples", 5, "--cap", 4, "--out", out]
    assert run(*args) == EXIT_CENSORED
    assert "did not couple" in capsys.readouterr().err
    data = rows(out)
    assert all(r[-1] == "1" and r[4] == "" for r in data[1:-2])
    assert data[-2][-1] == "5"
    assert run(*args, "--allow-censored") == EXIT_OK


def test_comparison_has_load_difference_column(tmp_path):
    out = tmp_path / "cmp.csv"
    assert run("run", "--model", MODELS / "comparison.yaml", "--samples", 20, "--out", out) == 0
    data = rows(out)
    assert data[0][-2:] == ["load_diff", "censored"]
    for r in data[1:-2]:
        x1, x2, y1, y2 = map(int, r[4:8])
        assert float(r[8]) == (y1 + y2) - (x1 + x2)


def test_sweep_writes_one_file_per_point(tmp_path, capsys):
    out = tmp_path / "sweep"
    code = run(
        "sweep", "--model", MODELS / "negative_network.yaml", "--algo", "psa,epsa",
        "--sweep-param", "lam2", "--values", "1/5,1", "--samples", 10, "--out", out,
    )
    assert code == 0
    names = sorted(p.name for p in out.iterdir())
    assert names == [
        "negative_network_lam2=1_5_epsa.csv",
        "negative_network_lam2=1_5_psa.csv",
        "negative_network_lam2=1_epsa.csv",
        "negative_network_lam2=1_psa.csv",
        "summary.csv",
    ]
    summary = rows(out / "summary.csv")
    assert summary[0][:3] == ["param", "value", "algorithm"]
    assert len(summary) == 5
    assert "mean_coupling_time" in capsys.readouterr().out


def test_sweep_uses_model_grid(tmp_path):
    out = tmp_path / "s"
    assert run("sweep", "--model", MODELS / "mm1.yaml", "--samples", 5, "--out", out) == 0
    assert len(list(out.glob("mm1_lam=*_epsa.csv"))) == 3


def test_coupling_time_report(tmp_path, capsys):
    assert run("coupling-time", "--model", MODELS / "mm1.yaml", "--samples", 30) == 0
    text = capsys.readouterr().out
    assert "mean coupling time" in text and "histogram" in text


def test_validate_reports_zone_counts(capsys):
    assert run("validate", "--model", MODELS / "jsw.yaml") == 0
    text = capsys.readouterr().out
    assert "piecewise H=3 K=4" in text
    assert "validation passed" in text


def test_timing_sidecar(tmp_path):
    out, timing = tmp_path / "s.csv", tmp_path / "t.csv"
    run("sample", "--model", MODELS / "mm1.yaml", "--samples", 4, "--out", out, "--timing", timing)
    data = rows(timing)
    assert data[0] == ["run_id", "wall_us"] and len(data) == 5


def test_param_override(tmp_path):
    out = tmp_path / "o.csv"
    assert run("run", "--model", MODELS / "mm1.yaml", "--param", "lam=100", "--samples", 20, "--out", out) == 0
    # with arrivals a hundred times faster than service the queue is almost always full
    assert sum(r[4] == "3" for r in rows(out)[1:-2]) >= 15


@pytest.mark.parametrize(
    "argv",
    [
        ["run", "--model", "missing.yaml"],
        ["run", "--model", MODELS / "mm1.yaml", "--samples", 0],
        ["run", "--model", MODELS / "mm1.yaml", "--algo", "gibbs"],
        ["run", "--model", MODELS / "mm1.yaml", "--seed", -1],
        ["run", "--model", MODELS / "mm1.yaml", "--param", "rho=1"],
        ["run", "--model", MODELS / "mm1.yaml", "--param", "lam"],
        ["sweep", "--model", MODELS / "jsw.yaml"],
    ],
)
def test_configuration_errors_exit_2(argv, capsys):
    assert run(*argv) == EXIT_CONFIG
    assert capsys.readouterr().err.strip()


def test_console_entry_point():
    proc = subprocess.run(
        [sys.executable, "-m", "envsample", "validate", "--model", str(MODELS / "mm1.yaml")],
        capture_output=True,
        text=True,
        check=False,
    )
    assert proc.returncode == 0, proc.stderr
    assert "states=4" in proc.stdout
