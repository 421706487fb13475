"""Experiment configuration: TOML loading, validation with field paths, builders."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import logging
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .data import load_libsvm, partition, scale_features
from .engine import ConfigError, HyperParams, Schedule
from .graph import GENERATORS, NetworkGraph, build_incidence
from .objective import DEFAULT_RIDGE, CompositeProblem, LogisticCost, QuadraticCost, make_regularizer

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

log = logging.getLogger(__name__)


@dataclass
class ProblemConfig:
    kind: str = "quadratic"
    reg_weight: float = 0.0
    # synthetic quadratic
    dim: int = 6
    seed: int = 0
    eig_range: list = field(default_factory=lambda: [1.0, 4.0])
    b_scale: float = 2.0
    Q: list | None = None
    b: list | None = None
    # libsvm logistic
    path: str | None = None
    n_rows: int | None = 5000
    sample: str = "first"
    sample_seed: int = 0
    n_features: int | None = None
    partition: str = "contiguous"
    partition_seed: int = 0
    scaling: str = "none"
    ridge: float = DEFAULT_RIDGE


@dataclass
class GraphConfig:
    kind: str = "ring"
    m: int = 5
    p: float = 0.5
    seed: int = 0
    edges: list | None = None


@dataclass
class ParamsConfig:
    mu_z: float = 1.0
    mu_theta: float | None = None
    epsilon: float = 0.1
    memory: int = 10
    gamma: float = 1.0
    init_mode: str = "constant"
    l_index: int = 0


@dataclass
class ScheduleConfig:
    mode: str = "sync"
    probs: Any = 1.0
    active_count: int | None = None
    ordering: str = "sequential"
    dual: str = "edge"


@dataclass
class MonitorConfig:
    enabled: bool = True
    lemma: bool = True
    dual_shadow: bool = True
    lyapunov: bool = True
    lyapunov_min_fraction: float = 0.99
    lyapunov_checkpoint: int = 50


@dataclass
class OutputConfig:
    dir: str = "runs/out"
    reference: str | None = None


@dataclass
class ExperimentConfig:
    problem: ProblemConfig = field(default_factory=ProblemConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    params: ParamsConfig = field(default_factory=ParamsConfig)
    schedule: ScheduleConfig = field(default_factory=ScheduleConfig)
    monitors: MonitorConfig = field(default_factory=MonitorConfig)
    output: OutputConfig = field(default_factory=OutputConfig)
    iterations: int = 500
    seeds: list = field(default_factory=lambda: [0])
    record_every: int = 1
    base_dir: Path = field(default=Path("."), repr=False)

    def validate(self) -> None:
        p = self.problem
        if p.kind not in ("quadratic", "logistic"):
            raise ConfigError(f"problem.kind must be 'quadratic' or 'logistic', got {p.kind!r}")
        if p.reg_weight < 0:
            raise ConfigError("problem.reg_weight must be nonnegative")
        if p.kind == "logistic" and not p.path:
            raise ConfigError("problem.path is required for kind = 'logistic'")
        if p.ridge < 0:
            raise ConfigError("problem.ridge must be nonnegative")
        if self.graph.kind not in (*GENERATORS, "edges"):
            raise ConfigError(f"graph.kind must be one of {sorted((*GENERATORS, 'edges'))}, got {self.graph.kind!r}")
        if self.graph.m < 1:
            raise ConfigError("graph.m must be at least 1")
        if not 0 <= self.params.l_index < self.graph.m:
            raise ConfigError(f"params.l_index must be in [0, {self.graph.m - 1}]")
        if self.iterations < 0:
            raise ConfigError("iterations must be nonnegative")
        if not self.seeds:
            raise ConfigError("seeds must list at least one seed")
        if self.record_every < 1:
            raise ConfigError("record_every must be at least 1")
        self.hyper_params()
        self.make_schedule().validate(self.graph.m)

    def hyper_params(self) -> HyperParams:
        kw = dataclasses.asdict(self.params)
        return HyperParams(**kw)

    def make_schedule(self) -> Schedule:
        s = self.schedule
        probs = s.probs if np.isscalar(s.probs) else tuple(s.probs)
        if not np.isscalar(s.probs) and len(probs) != self.graph.m:
            raise ConfigError(f"schedule.probs has {len(probs)} entries for {self.graph.m} agents")
        return Schedule(s.mode, probs, s.active_count, s.ordering, s.dual)

    def resolve(self, path: str | None) -> Path | None:
        if path is None:
            return None
        p = Path(path)
        return p if p.is_absolute() else self.base_dir / p

    def problem_key(self) -> str:
        """Digest of everything that determines the optimization problem."""
        blob = {"problem": dataclasses.asdict(self.problem), "graph": dataclasses.asdict(self.graph),
                "l_index": self.params.l_index}
        return hashlib.sha256(json.dumps(blob, sort_keys=True, default=str).encode()).hexdigest()[:16]


_SECTIONS = {
    "problem": ProblemConfig, "graph": GraphConfig, "params": ParamsConfig,
    "schedule": ScheduleConfig, "monitors": MonitorConfig, "output": OutputConfig,
}


def _coerce(value, default, path: str):
    if path == "schedule.probs" and isinstance(value, list):
        return [_coerce(v, 1.0, f"{path}[{k}]") for k, v in enumerate(value)]
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(f"{path}: expected true/false, got {value!r}")
    elif isinstance(default, float) and not isinstance(default, bool):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(f"{path}: expected a number, got {value!r}")
        return float(value)
    elif isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(f"{path}: expected an integer, got {value!r}")
    elif isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(f"{path}: expected a string, got {value!r}")
    return value


def _section(cls, data: dict, path: str):
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a table")
    proto = cls()
    names = {f.name for f in dataclasses.fields(cls)}
    kw = {}
    for key, value in data.items():
        if key not in names:
            raise ConfigError(f"{path}.{key}: unknown field")
        kw[key] = _coerce(value, getattr(proto, key), f"{path}.{key}")
    return cls(**kw)


def config_from_dict(data: dict, base_dir: Path | str = ".") -> ExperimentConfig:
    kw: dict = {"base_dir": Path(base_dir)}
    for key, value in data.items():
        if key in _SECTIONS:
            kw[key] = _section(_SECTIONS[key], value, key)
        elif key in ("iterations", "record_every"):
            kw[key] = _coerce(value, 0, key)
        elif key == "seeds":
            if not isinstance(value, list) or not all(isinstance(s, int) and not isinstance(s, bool) for s in value):
                raise ConfigError("seeds: expected a list of integers")
            kw[key] = value
        else:
            raise ConfigError(f"{key}: unknown field")
    cfg = ExperimentConfig(**kw)
    if "mu_theta" not in data.get("params", {}):
        log.info("params.mu_theta not set; using mu_z / 2 = %g", cfg.params.mu_z / 2.0)
    cfg.validate()
    return cfg


def load_config(path: str | Path) -> ExperimentConfig:
    path = Path(path)
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from None
    return config_from_dict(data, path.parent)


# -- builders ------------------------------------------------------------------


def build_graph(cfg: ExperimentConfig) -> NetworkGraph:
    g = cfg.graph
    if g.kind == "edges":
        if g.edges is None:
            raise ConfigError("graph.edges is required for kind = 'edges'")
        graph = NetworkGraph.from_edges(g.m, [tuple(e) for e in g.edges])
    elif g.kind == "erdos_renyi":
        graph = GENERATORS[g.kind](g.m, g.p, g.seed)
    else:
        graph = GENERATORS[g.kind](g.m)
    build_incidence(graph, cfg.params.l_index)  # rejects disconnected graphs
    return graph


def synthetic_quadratics(m: int, dim: int, seed: int, eig_range, b_scale: float) -> list[QuadraticCost]:
    """Random f_i(w) = w'Q_i w / 2 - b_i'w with spectrum of Q_i drawn from ``eig_range``."""
    rng = np.random.default_rng(seed)
    lo, hi = eig_range
    costs = []
    for _ in range(m):
        U, _ = np.linalg.qr(rng.standard_normal((dim, dim)))
        ev = rng.uniform(lo, hi, dim)
        costs.append(QuadraticCost(U @ np.diag(ev) @ U.T, rng.standard_normal(dim) * b_scale))
    return costs


def build_problem(cfg: ExperimentConfig) -> CompositeProblem:
    p, m = cfg.problem, cfg.graph.m
    if p.kind == "quadratic":
        if p.Q is not None or p.b is not None:
            if p.Q is None or p.b is None or len(p.Q) != m or len(p.b) != m:
                raise ConfigError(f"problem.Q and problem.b must both list {m} entries")
            try:
                costs = [QuadraticCost(Q, b) for Q, b in zip(p.Q, p.b)]
            except ValueError as exc:
                raise ConfigError(f"problem.Q: {exc}") from None
        else:
            if len(p.eig_range) != 2 or not 0 < p.eig_range[0] <= p.eig_range[1]:
                raise ConfigError("problem.eig_range must be [lo, hi] with 0 < lo <= hi")
            costs = synthetic_quadratics(m, p.dim, p.seed, p.eig_range, p.b_scale)
        return CompositeProblem(costs, make_regularizer(p.reg_weight))
    path = cfg.resolve(p.path)
    ds = load_libsvm(path, p.n_features)
    if p.n_rows is not None:
        if p.sample == "first":
            ds = ds.take_first(p.n_rows)
        elif p.sample == "random":
            ds = ds.sample(p.n_rows, p.sample_seed)
        else:
            raise ConfigError(f"problem.sample must be 'first' or 'random', got {p.sample!r}")
    ds = scale_features(ds, p.scaling)
    parts = partition(ds, m, p.partition, p.partition_seed)
    costs = [LogisticCost(part.X, part.y, ridge=p.ridge, weight=1.0 / m) for part in parts]
    return CompositeProblem(costs, make_regularizer(p.reg_weight))
