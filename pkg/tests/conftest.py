from pathlib import Path

import numpy as np
import pytest

from lbfgs_admm.analysis import reference_solve
from lbfgs_admm.config import load_config, build_graph, build_problem
from lbfgs_admm.graph import build_incidence

ROOT = Path(__file__).resolve().parents[1]
CONFIGS = ROOT / "configs"


@pytest.fixture(scope="session")
def quad_cfg():
    return load_config(CONFIGS / "quadratic_sync.toml")


@pytest.fixture(scope="session")
def quad_workload(quad_cfg):
    """Five-agent ring, random quadratics, l1 at agent 0, and its reference solution."""
    problem, graph = build_problem(quad_cfg), build_graph(quad_cfg)
    inc = build_incidence(graph, quad_cfg.params.l_index)
    ref = reference_solve(problem, inc)
    return problem, graph, inc, ref


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_ACCEPTANCE: list[str] = []


@pytest.fixture(scope="session")
def acceptance_log():
    """Collects one PASS/FAIL line per acceptance criterion."""
    return _ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if _ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_ACCEPTANCE):
            terminalreporter.write_line(line)
