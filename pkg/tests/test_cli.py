import csv
import json

import pytest

from lbfgs_admm.cli import ENV_OUT, EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_VIOLATION, main

QUAD = """
iterations = {iters}
seeds = {seeds}

[problem]
kind = "quadratic"
dim = 6
seed = 1
reg_weight = 1.0

[graph]
kind = "ring"
m = 5

[params]
mu_z = 2.0
mu_theta = 1.0
epsilon = 0.1
memory = {memory}
gamma = 10.0

[schedule]
{schedule}
"""

LASSO = """
iterations = 100
[problem]
kind = "quadratic"
Q = [[[1.0]]]
b = [[1.0]]
reg_weight = 0.5
[graph]
kind = "path"
m = 1
[params]
mu_z = 1.0
memory = 5
gamma = 2.0
"""


def write(tmp_path, text, name="exp.toml"):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


def quad(tmp_path, iters=60, seeds="[0]", memory=10, schedule='mode = "sync"'):
    return write(tmp_path, QUAD.format(iters=iters, seeds=seeds, memory=memory, schedule=schedule))


def read_csv(path):
    with open(path) as fh:
        return list(csv.reader(fh))


def test_run_writes_trace_and_summary(tmp_path, capsys):
    out = tmp_path / "out"
    assert main(["-q", "run", "--config", quad(tmp_path), "--out", str(out)]) == EXIT_OK
    rows = read_csv(out / "trace_seed0.csv")
    assert rows[0] == ["iter", "comm", "objective", "rel_error", "consensus_residual"]
    assert len(rows) == 62
    summary = json.loads((out / "summary.json").read_text())
    assert summary["monitors_passed"] and not summary["diverged"]
    assert summary["seeds"]["0"]["final_rel_error"] == float(rows[-1][3])
    assert (out / "reference.json").exists()
    assert "violations: 0" in capsys.readouterr().out


def test_multi_seed_async_writes_mean_error(tmp_path):
    out = tmp_path / "out"
    cfg = quad(tmp_path, iters=40, seeds="[0, 1, 2]", schedule='mode = "async"\nprobs = 0.5')
    assert main(["-q", "run", "--config", cfg, "--out", str(out), "--monitors", "off"]) == EXIT_OK
    mean = read_csv(out / "mean_rel_error.csv")
    assert mean[0] == ["iter", "mean_rel_error", "seeds"]
    per_seed = [read_csv(out / f"trace_seed{s}.csv") for s in range(3)]
    expected = sum(float(t[-1][3]) for t in per_seed) / 3
    assert float(mean[-1][1]) == pytest.approx(expected, rel=1e-12)
    assert mean[-1][2] == "3"


def test_rerun_is_byte_identical(tmp_path):
    cfg = quad(tmp_path, iters=30, schedule='mode = "async"\nprobs = 0.5')
    for d in ("a", "b"):
        assert main(["-q", "run", "--config", cfg, "--out", str(tmp_path / d), "--seed", "3"]) == EXIT_OK
    assert (tmp_path / "a/trace_seed3.csv").read_bytes() == (tmp_path / "b/trace_seed3.csv").read_bytes()


def test_env_var_sets_output_dir(tmp_path, monkeypatch):
    monkeypatch.setenv(ENV_OUT, str(tmp_path / "env"))
    assert main(["-q", "run", "--config", quad(tmp_path, iters=5), "--monitors", "off"]) == EXIT_OK
    assert (tmp_path / "env/trace_seed0.csv").exists()


def test_zero_probability_names_agent(tmp_path, capsys):
    cfg = quad(tmp_path, schedule='mode = "async"\nprobs = [0.5, 0.5, 0.0, 0.5, 0.5]')
    assert main(["-q", "run", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_CONFIG
    assert "agent 2" in capsys.readouterr().err


def test_unknown_field_is_reported_with_path(tmp_path, capsys):
    cfg = write(tmp_path, LASSO.replace("gamma = 2.0", "gamma = 2.0\nbogus = 1"))
    assert main(["oracle", "--config", cfg, "--out", str(tmp_path)]) == EXIT_CONFIG
    assert "params.bogus: unknown field" in capsys.readouterr().err


def test_missing_dataset_is_io_error(tmp_path, capsys):
    cfg = write(tmp_path, '[problem]\nkind = "logistic"\npath = "nope.svm"\n[graph]\nm = 2\n')
    assert main(["run", "--config", cfg, "--out", str(tmp_path / "o")]) == EXIT_IO
    assert "nope.svm" in capsys.readouterr().err


def test_oracle_lasso_1d_is_deterministic(tmp_path, capsys):
    cfg = write(tmp_path, LASSO)
    assert main(["-q", "oracle", "--config", cfg, "--out", str(tmp_path / "a")]) == EXIT_OK
    assert "w* = [0.5]" in capsys.readouterr().out
    assert main(["-q", "oracle", "--config", cfg, "--out", str(tmp_path / "b")]) == EXIT_OK
    first = (tmp_path / "a/reference.json").read_bytes()
    assert first == (tmp_path / "b/reference.json").read_bytes()
    assert json.loads(first)["w_star"] == [0.5]


def test_check_passes_on_quadratic(tmp_path, capsys):
    assert main(["-q", "check", "--config", quad(tmp_path), "--out", str(tmp_path / "o")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "pair_ratio_upper" in out and "all checks passed" in out


def test_check_catches_injected_pair(tmp_path, capsys):
    code = main(["-q", "check", "--config", quad(tmp_path), "--out", str(tmp_path / "o"),
                 "--inject-bad-pair", "1:20"])
    assert code == EXIT_VIOLATION
    assert "first violation: pair_ratio_upper at iteration 20, agent 1" in capsys.readouterr().out


def test_check_without_memory_bounds_hessian_by_gamma(tmp_path):
    out = tmp_path / "o"
    assert main(["-q", "check", "--config", quad(tmp_path, memory=0), "--out", str(out)]) == EXIT_OK
    header, *body = read_csv(out / "check_seed0.csv")
    rows = [r for r in body if r[header.index("name")] == "hessian_norm"]
    m_col, b_col = header.index("measured"), header.index("bound")
    assert rows and all(float(r[b_col]) == 10.0 and float(r[m_col]) == pytest.approx(10.0) for r in rows)
