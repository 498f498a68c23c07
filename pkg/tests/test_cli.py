import itertools
import json
import math
import subprocess
import sys
import time
from pathlib import Path

import numpy as np
import pytest

from npprior.cli import DEFAULT_OUT, UsageError, build_run_config, main, parse_prior
from npprior.density import DivergenceKind, divergence_of, index_variance
from npprior.io import read_csv, read_density, read_samples_f64le, write_density
from npprior.optimizer import InitKind, SolverConfig
from npprior.sampler import Cauchy, GammaRadial, NonParametric, Normal, Uniform


@pytest.fixture(scope="module")
def solved_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("solve")
    code = main(["solve", "--out", str(out)])
    return code, out


def test_solve_defaults(solved_dir):
    code, out = solved_dir
    assert code == 0
    density, meta = read_density(out / "density.json")
    assert meta["converged"] is True
    assert meta["seed"] == 0
    assert meta["config"]["n"] == 1024 and meta["config"]["xi"] == 0.75
    assert meta["final_kl"] <= 0.02
    assert index_variance(density) >= 0.75 - 1e-6

    header, rows = read_csv(out / "trace.csv")
    assert header == ["iter", "cost_nats", "constraint_violation", "round"]
    for _, grp in itertools.groupby(rows, key=lambda r: r[3]):
        costs = [float(r[1]) for r in grp]
        assert all(b < a for a, b in zip(costs, costs[1:]))
    shape = (out / "shape.txt").read_text()
    assert "symmetry_deviation" in shape and "lobe_count" in shape and "tail_mass" in shape


def test_solve_prints_final_kl(tmp_path, capsys):
    assert main(["solve", "--n", "32", "--xi", "0.5", "--restarts", "1", "--out", str(tmp_path)]) == 0
    out = capsys.readouterr().out
    kl = float(out.split("final_kl_to_midpoint ")[1].split()[0])
    assert kl == read_density(tmp_path / "density.json")[1]["final_kl"]


def test_solve_xi_zero_warns(tmp_path, capsys):
    assert main(["solve", "--n", "64", "--xi", "0", "--restarts", "1", "--out", str(tmp_path)]) == 0
    assert "warning" in capsys.readouterr().err.lower()
    density, _ = read_density(tmp_path / "density.json")
    assert index_variance(density) < 0.05
    assert density.mass.max() > 0.5


def test_solve_tiny_instance_is_fast(tmp_path):
    start = time.perf_counter()
    assert main(["solve", "--n", "8", "--xi", "0.5", "--out", str(tmp_path)]) == 0
    assert time.perf_counter() - start < 1.0


def test_solve_not_converged_still_writes(tmp_path):
    assert main(["solve", "--n", "64", "--xi", "0.5", "--max-iters", "3", "--out", str(tmp_path)]) == 3
    _, meta = read_density(tmp_path / "density.json")
    assert meta["converged"] is False
    assert (tmp_path / "trace.csv").exists() and (tmp_path / "shape.txt").exists()


@pytest.mark.parametrize("argv", [
    ["--xi", "-1"],
    ["--xi", "100", "--n", "8"],
    ["--kind", "hellinger"],
    ["--init", "nope"],
    ["--init", "delta:x"],
    ["--lambda", "1.0"],
    ["--restarts", "0"],
    ["--n", "abc"],
    ["--unknown-flag", "1"],
])
def test_solve_invalid_config_writes_nothing(tmp_path, argv):
    out = tmp_path / "out"
    assert main(["solve", *argv, "--out", str(out)]) == 2
    assert not out.exists()


@pytest.mark.parametrize("doc", [
    {"bogus": 1},
    {"n": "many"},
    {"xi": True},
    [1, 2],
])
def test_solve_bad_config_file(tmp_path, doc):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps(doc))
    out = tmp_path / "out"
    assert main(["solve", "--config", str(cfg), "--out", str(out)]) == 2
    assert not out.exists()


def test_solve_missing_or_broken_config_file(tmp_path):
    assert main(["solve", "--config", str(tmp_path / "missing.json")]) == 2
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    assert main(["solve", "--config", str(bad)]) == 2


def test_solve_unwritable_output(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert main(["solve", "--n", "8", "--xi", "0.5", "--out", str(blocker / "sub")]) == 4


PRECEDENCE_CASES = {
    "xi": (0.5, 0.6, 0.75),
    "seed": (7, 8, 0),
    "restarts": (2, 4, 3),
    "kind": ("kl_qp", "l2", "kl_pq"),
}


@pytest.mark.parametrize("key", PRECEDENCE_CASES)
@pytest.mark.parametrize("in_file, in_flag", list(itertools.product([False, True], repeat=2)))
def test_config_precedence_matrix(key, in_file, in_flag):
    file_value, flag_value, default = PRECEDENCE_CASES[key]
    run = build_run_config({key: file_value} if in_file else {}, {key: flag_value if in_flag else None})
    expected = flag_value if in_flag else file_value if in_file else default
    got = getattr(run.solver, key)
    assert (got.value if hasattr(got, "value") else got) == expected


def test_config_out_and_lambda_keys():
    run = build_run_config({"out": "a", "lambda": 0.3}, {"out": None})
    assert run.out == Path("a") and run.solver.lam == 0.3
    assert build_run_config({}, {}).out == Path(DEFAULT_OUT)
    assert build_run_config({"out": "a"}, {"out": "b"}).out == Path("b")


def test_delta_init_syntax():
    cfg = build_run_config({}, {"init": "delta:512"}).solver
    assert cfg.init is InitKind.DELTA_AT and cfg.init_bin == 512
    with pytest.raises(UsageError):
        build_run_config({"init": "delta:1e9"}, {})


def test_config_file_matches_flags(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({"n": 16, "xi": 0.5, "restarts": 1, "seed": 4}))
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["solve", "--config", str(cfg), "--out", str(a)]) == 0
    assert main(["solve", "--n", "16", "--xi", "0.5", "--restarts", "1", "--seed", "4", "--out", str(b)]) == 0
    assert (a / "density.json").read_text() == (b / "density.json").read_text()


def test_analyze_builtins(tmp_path, capsys):
    assert main(["analyze", "uniform", "normal:0.5,0.1", "cauchy", "--out", str(tmp_path)]) == 0
    header, rows = read_csv(tmp_path / "mismatch.csv")
    assert header == ["name", "kl_prior_vs_midpoint"]
    values = {name: float(v) for name, v in rows}
    assert values["uniform"] == pytest.approx(0.3069, abs=0.003)
    assert values["normal_0.5_0.1"] == pytest.approx(0.1534, abs=0.005)
    assert values["cauchy"] > 0
    for name in values:
        mid, meta = read_density(tmp_path / f"{name}.midpoint.json")
        assert meta["source"] == name and mid.n == 1024
    assert "uniform" in capsys.readouterr().out


def test_analyze_solved_file_matches_metadata(solved_dir, tmp_path):
    _, out = solved_dir
    assert main(["analyze", str(out / "density.json"), "--out", str(tmp_path)]) == 0
    _, rows = read_csv(tmp_path / "mismatch.csv")
    _, meta = read_density(out / "density.json")
    assert abs(float(rows[0][1]) - meta["final_kl"]) <= 1e-9


def test_analyze_malformed_file(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"version": 1, "grid": {"min": 0, "max": 1, "n": 2},
                               "metadata": {}, "mass": [0.5, -0.5]}))
    out = tmp_path / "out"
    assert main(["analyze", "uniform", str(bad), "--out", str(out)]) == 2
    assert "mass[1]" in capsys.readouterr().err
    assert not (out / "mismatch.csv").exists()


@pytest.mark.parametrize("item", ["normal:0.5", "normal:a,b", "uniform:0,1", "gamma", "nothing-here.json"])
def test_analyze_bad_names(tmp_path, item):
    assert main(["analyze", item, "--out", str(tmp_path / "o")]) == 2


def test_parse_prior(tmp_path, solved_report):
    assert parse_prior("uniform") == Uniform()
    assert parse_prior("uniform:-1,2") == Uniform(-1.0, 2.0)
    assert parse_prior("normal:1,3") == Normal(1.0, 3.0)
    assert parse_prior("cauchy:0,2") == Cauchy(0.0, 2.0)
    assert parse_prior("gamma") == GammaRadial()
    assert parse_prior("gamma:5") == GammaRadial(5.0)
    path = tmp_path / "p.json"
    write_density(path, solved_report.density)
    prior = parse_prior(str(path))
    assert isinstance(prior, NonParametric) and prior.density == solved_report.density
    for bad in ("normal:0,-1", "normal:1", "gamma:0", "beta:1,2"):
        with pytest.raises(UsageError):
            parse_prior(bad)


def test_sample_csv_is_deterministic(tmp_path):
    a, b = tmp_path / "a.csv", tmp_path / "b.csv"
    for path in (a, b):
        assert main(["sample", "normal", "--d", "1", "--count", "3", "--seed", "7", "--out", str(path)]) == 0
    assert a.read_bytes() == b.read_bytes()
    lines = a.read_text().split("\n")
    assert len(lines) == 4 and lines[-1] == ""


def test_sample_to_stdout(capsys):
    assert main(["sample", "uniform", "--d", "2", "--count", "4", "--seed", "1"]) == 0
    rows = capsys.readouterr().out.strip().split("\n")
    assert len(rows) == 4 and all(len(r.split(",")) == 2 for r in rows)


def test_sample_f64le_size_and_header(tmp_path):
    path = tmp_path / "s.bin"
    assert main(["sample", "gamma", "--d", "5", "--count", "123", "--format", "f64le", "--out", str(path)]) == 0
    raw = path.read_bytes()
    assert len(raw) == 16 + 8 * 5 * 123
    data = read_samples_f64le(raw)
    assert data.shape == (123, 5) and np.all(np.isfinite(data))


def test_sample_density_file_matches_density(solved_dir, tmp_path):
    _, out = solved_dir
    path = tmp_path / "s.bin"
    assert main(["sample", "--prior", str(out / "density.json"), "--d", "100", "--count", "50000",
                 "--format", "f64le", "--out", str(path)]) == 0
    density, _ = read_density(out / "density.json")
    counts, _ = np.histogram(read_samples_f64le(path.read_bytes()).ravel(), bins=density.grid.edges)
    assert divergence_of(DivergenceKind.KL_PQ, counts / counts.sum(), density.mass) <= 5e-3


@pytest.mark.parametrize("argv, code", [
    (["sample", "normal:0,0"], 2),
    (["sample", "missing.json"], 2),
    (["sample"], 2),
    (["sample", "normal", "--prior", "uniform"], 2),
    (["sample", "normal", "--d", "0"], 2),
    (["sample", "normal", "--format", "npy"], 2),
])
def test_sample_invalid(argv, code):
    assert main(argv) == code


def test_sample_io_failure(tmp_path):
    assert main(["sample", "normal", "--out", str(tmp_path / "missing" / "x.csv")]) == 4


def test_normdiag_outputs(tmp_path, capsys):
    assert main(["normdiag", "normal", "--dims", "5,50", "--count", "4000", "--bins", "40",
                 "--out", str(tmp_path)]) == 0
    header, rows = read_csv(tmp_path / "summary.csv")
    assert header == ["d", "kl", "overlap"]
    assert [int(r[0]) for r in rows] == [5, 50]
    for d in (5, 50):
        h, body = read_csv(tmp_path / f"norms_d{d}.csv")
        assert h == ["bin_center", "prior_mass", "midpoint_mass"]
        assert len(body) == 40
        assert math.isclose(sum(float(r[1]) for r in body), 1.0, abs_tol=1e-9)
    assert "d=5" in capsys.readouterr().out


def test_normdiag_normal_separates_at_high_dimension(tmp_path):
    assert main(["normdiag", "normal", "--dims", "5,200", "--count", "50000", "--out", str(tmp_path)]) == 0
    _, rows = read_csv(tmp_path / "summary.csv")
    overlap = {int(r[0]): float(r[2]) for r in rows}
    assert overlap[5] >= 0.5 and overlap[200] <= 0.05


@pytest.mark.parametrize("argv", [
    ["normdiag", "normal", "--dims", "5,x"],
    ["normdiag", "normal", "--dims", "0"],
    ["normdiag", "normal", "--count", "10"],
    ["normdiag", "beta"],
])
def test_normdiag_invalid(argv, tmp_path):
    assert main([*argv, "--out", str(tmp_path / "o")]) == 2
    assert not (tmp_path / "o").exists()


def test_console_entry_point_help():
    proc = subprocess.run([sys.executable, "-m", "npprior.cli", "--help"], capture_output=True, text=True)
    assert proc.returncode == 0
    assert "normal[:mu,sigma]" in proc.stdout


def test_solve_config_echo_round_trips(solved_dir):
    _, out = solved_dir
    _, meta = read_density(out / "density.json")
    echo = meta["config"]
    rebuilt = build_run_config(echo, {}).solver
    assert rebuilt == SolverConfig()
