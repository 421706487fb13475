"""Helpers shared by the experiment scripts and the acceptance tests."""

from __future__ import annotations

import dataclasses

import numpy as np

from .analysis import ReferenceSolution, reference_solve
from .config import ExperimentConfig, build_graph, build_problem
from .engine import RunTrace, run
from .graph import build_incidence


def count_increases(values) -> int:
    """Number of steps where the sequence goes up (oscillation events)."""
    v = np.asarray(values, dtype=float)
    return int(np.sum(np.diff(v) > 0))


def first_hit(trace: RunTrace, re_tol: float, consensus_tol: float, m: int) -> float | None:
    """Communication-round equivalents (broadcasts / m) when both tolerances first hold."""
    for r in trace.rows:
        if abs(r.rel_error) <= re_tol and r.consensus_residual <= consensus_tol:
            return r.comm / m
    return None


def solve(cfg: ExperimentConfig):
    problem, graph = build_problem(cfg), build_graph(cfg)
    ref = reference_solve(problem, build_incidence(graph, cfg.params.l_index))
    return problem, graph, ref


def run_seeds(cfg: ExperimentConfig, problem, graph, ref: ReferenceSolution, **overrides) -> dict[int, RunTrace]:
    params = dataclasses.replace(cfg.params, **overrides)
    hp = dataclasses.replace(cfg, params=params).hyper_params()
    return {s: run(problem, graph, hp, cfg.make_schedule(), cfg.iterations, seed=s,
                   objective_star=ref.objective_star, record_every=cfg.record_every)
            for s in cfg.seeds}


def memory_sweep(cfg: ExperimentConfig, memories=(5, 10, 15), problem=None, graph=None, ref=None) -> dict:
    """Per memory size: mean RE curve and RE-increase counts over ``cfg.seeds``."""
    if problem is None:
        problem, graph, ref = solve(cfg)
    out = {}
    for c in memories:
        traces = run_seeds(cfg, problem, graph, ref, memory=c)
        curves = np.array([t.rel_error for t in traces.values()])
        counts = [count_increases(t.rel_error) for t in traces.values()]
        out[c] = {"iters": next(iter(traces.values())).iters, "mean_re": curves.mean(axis=0),
                  "increases": counts, "mean_increases": float(np.mean(counts))}
    return out
