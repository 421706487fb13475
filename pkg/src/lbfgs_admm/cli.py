"""Command line: ``run``, ``oracle`` and ``check`` on a TOML experiment config."""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
import time
from collections import OrderedDict
from pathlib import Path

import numpy as np

from .analysis import (
    DENSE_DIM_CAP, BoundConstants, DualShadowMonitor, InvariantRow, LemmaMonitor, LyapunovMonitor,
    OracleError, ReferenceSolution, reference_solve,
)
from .config import ExperimentConfig, build_graph, build_problem, load_config
from .data import DataError
from .engine import ConfigError, RunTrace, run
from .graph import GraphError, build_incidence
from .lbfgs import CurvaturePair

log = logging.getLogger("lbfgs_admm")

ENV_OUT = "LBFGS_ADMM_OUT"
EXIT_OK, EXIT_VIOLATION, EXIT_CONFIG, EXIT_DIVERGED, EXIT_IO, EXIT_ORACLE = 0, 1, 2, 3, 4, 5
INVARIANT_HEADER = ("iteration", "agent", "name", "measured", "bound", "passed", "detail")


def output_dir(cfg: ExperimentConfig, flag: str | None) -> Path:
    """--out beats $LBFGS_ADMM_OUT beats output.dir."""
    out = Path(flag or os.environ.get(ENV_OUT) or cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


# -- reference cache -----------------------------------------------------------


def reference_path(cfg: ExperimentConfig, out: Path) -> Path:
    return cfg.resolve(cfg.output.reference) if cfg.output.reference else out / "reference.json"


def write_reference(ref: ReferenceSolution, key: str, path: Path) -> None:
    payload = {"problem_key": key, **ref.to_dict()}
    path.write_text(json.dumps(payload, indent=1, sort_keys=True) + "\n")


def load_or_solve_reference(cfg: ExperimentConfig, problem, graph, out: Path) -> ReferenceSolution:
    path, key = reference_path(cfg, out), cfg.problem_key()
    if path.exists():
        payload = json.loads(path.read_text())
        if payload.get("problem_key") == key:
            log.info("using cached reference %s", path)
            return ReferenceSolution.from_dict(payload)
        log.info("cached reference %s belongs to another problem; recomputing", path)
    ref = reference_solve(problem, build_incidence(graph, cfg.params.l_index))
    write_reference(ref, key, path)
    return ref


# -- monitors --------------------------------------------------------------------


class PairCorruptor:
    """Test hook: scales the newest pair of ``agent`` after tick ``iteration`` so its curvature is absurd."""

    def __init__(self, agent: int, iteration: int, factor: float = 1e6):
        self.agent, self.iteration, self.factor = agent, iteration, factor

    def start(self, net):
        pass

    def observe(self, net):
        if net.t != self.iteration:
            return []
        for act in net.log:
            if act.agent == self.agent and act.pushed and act.pairs_after:
                bad = CurvaturePair.from_vectors(act.pairs_after[-1].s, self.factor * act.pairs_after[-1].q)
                mem = net.agents[self.agent].memory
                mem.pairs[-1] = bad
                act.pairs_after = mem.snapshot()
        return []


def build_monitors(cfg: ExperimentConfig, problem, graph, ref, schedule, force: bool = False) -> tuple[list, object]:
    mc = cfg.monitors
    mons: list = []
    lyap = None
    if not (mc.enabled or force):
        return mons, lyap
    inc = build_incidence(graph, cfg.params.l_index)
    if mc.lemma or force:
        if problem.dim <= DENSE_DIM_CAP:
            mons.append(LemmaMonitor(BoundConstants.from_run(problem, graph, cfg.hyper_params())))
        else:
            log.info("dense lemma monitors skipped: d = %d > %d", problem.dim, DENSE_DIM_CAP)
    if (mc.dual_shadow or force) and schedule.mode == "sync":
        mons.append(DualShadowMonitor(inc))
    if mc.lyapunov or force:
        every = 1 if schedule.mode == "sync" else mc.lyapunov_checkpoint
        lyap = LyapunovMonitor(ref, inc, schedule, every=every)
        mons.append(lyap)
    return mons, lyap


def lyapunov_rows(cfg: ExperimentConfig, schedule, monitors: list) -> list[InvariantRow]:
    """Sync: fraction of decreasing steps per seed. Async: seed-mean checkpoints nonincreasing."""
    rows = []
    live = [m for m in monitors if m is not None]
    if not live:
        return rows
    if schedule.mode == "sync":
        for seed, mon in zip(cfg.seeds, monitors):
            if mon is None:
                continue
            frac = mon.fraction_decreasing
            rows.append(InvariantRow("lyapunov_decreasing", len(mon.values) - 1, -1, frac,
                                     cfg.monitors.lyapunov_min_fraction,
                                     frac >= cfg.monitors.lyapunov_min_fraction, f"seed {seed}"))
        return rows
    n = min(len(m.values) for m in live)
    mean = np.mean([m.values[:n] for m in live], axis=0)
    rises = np.diff(mean)
    worst = float(rises.max()) if rises.size else 0.0
    every = cfg.monitors.lyapunov_checkpoint
    slack = live[0].slack
    rows.append(InvariantRow("lyapunov_mean_checkpoints", (n - 1) * every, -1, worst, slack,
                             worst <= slack, f"{len(live)} seeds, checkpoint every {every}"))
    return rows


# -- writing ----------------------------------------------------------------------


def write_invariants(rows: list[InvariantRow], path: Path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(INVARIANT_HEADER)
        for r in rows:
            wr.writerow([r.iteration, r.agent, r.name, repr(float(r.measured)), repr(float(r.bound)),
                         int(bool(r.passed)), r.detail])


def tally(rows: list[InvariantRow]) -> OrderedDict:
    out: OrderedDict = OrderedDict()
    for r in rows:
        t = out.setdefault(r.name, {"checks": 0, "violations": 0, "max_measured": -np.inf, "bound": r.bound})
        t["checks"] += 1
        t["violations"] += 0 if r.passed else 1
        if r.measured > t["max_measured"]:
            t["max_measured"], t["bound"] = float(r.measured), float(r.bound)
    return out


def mean_rel_error_csv(traces: dict[int, RunTrace]) -> str:
    n = min(len(t.rows) for t in traces.values())
    lines = ["iter,mean_rel_error,seeds"]
    first = next(iter(traces.values()))
    for k in range(n):
        vals = [t.rows[k].rel_error for t in traces.values()]
        lines.append(f"{first.rows[k].iter},{float(np.mean(vals))!r},{len(vals)}")
    return "\n".join(lines) + "\n"


# -- commands ---------------------------------------------------------------------


def cmd_run(cfg: ExperimentConfig, out: Path, monitors_on: bool = True) -> int:
    t_start = time.perf_counter()
    problem, graph = build_problem(cfg), build_graph(cfg)
    params, schedule = cfg.hyper_params(), cfg.make_schedule()
    ref = load_or_solve_reference(cfg, problem, graph, out)
    cfg.monitors.enabled = cfg.monitors.enabled and monitors_on
    traces: dict[int, RunTrace] = {}
    lyaps, seeds_summary, all_rows = [], OrderedDict(), []
    diverged = False
    for seed in cfg.seeds:
        t0 = time.perf_counter()
        mons, lyap = build_monitors(cfg, problem, graph, ref, schedule)
        trace = run(problem, graph, params, schedule, cfg.iterations, seed=seed,
                    objective_star=ref.objective_star, monitors=mons, record_every=cfg.record_every)
        traces[seed] = trace
        lyaps.append(lyap)
        (out / f"trace_seed{seed}.csv").write_text(trace.to_csv())
        if lyap is not None:
            every = lyap.every
            (out / f"lyapunov_seed{seed}.csv").write_text(
                "iter,h_norm_sq\n" + "".join(f"{k * every},{v!r}\n" for k, v in enumerate(lyap.values)))
        if mons:
            write_invariants(trace.invariants, out / f"invariants_seed{seed}.csv")
        all_rows += trace.invariants
        last = trace.rows[-1]
        seeds_summary[str(seed)] = {
            "final_iter": last.iter, "comm": last.comm, "final_objective": last.objective,
            "final_rel_error": last.rel_error, "final_consensus_residual": last.consensus_residual,
            "rows": len(trace.rows), "aborted": trace.aborted,
            "invariants": {k: {"checks": v["checks"], "violations": v["violations"]}
                           for k, v in tally(trace.invariants).items()},
            "wall_time": time.perf_counter() - t0,
        }
        if trace.aborted:
            diverged = True
            log.error("seed %d: %s", seed, trace.aborted)
    if cfg.monitors.enabled:
        extra = lyapunov_rows(cfg, schedule, lyaps)
        all_rows += extra
        if extra:
            write_invariants(extra, out / "lyapunov_checks.csv")
    if len(traces) > 1:
        (out / "mean_rel_error.csv").write_text(mean_rel_error_csv(traces))
    totals = tally(all_rows)
    violations = sum(v["violations"] for v in totals.values())
    summary = {
        "problem_key": cfg.problem_key(),
        "objective_star": ref.objective_star,
        "seeds": seeds_summary,
        "mean_final_rel_error": float(np.mean([s["final_rel_error"] for s in seeds_summary.values()])),
        "invariants": {k: {"checks": v["checks"], "violations": v["violations"]} for k, v in totals.items()},
        "monitors_passed": violations == 0,
        "diverged": diverged,
        "wall_time": time.perf_counter() - t_start,
    }
    (out / "summary.json").write_text(json.dumps(summary, indent=1) + "\n")
    for seed, s in seeds_summary.items():
        print(f"seed {seed}: RE {s['final_rel_error']:.3e}  consensus {s['final_consensus_residual']:.3e}"
              f"  comm {s['comm']}")
    print(f"invariant checks: {sum(v['checks'] for v in totals.values())}, violations: {violations}")
    print(f"outputs in {out}")
    if diverged:
        return EXIT_DIVERGED
    return EXIT_OK if violations == 0 else EXIT_VIOLATION


def cmd_oracle(cfg: ExperimentConfig, out: Path) -> int:
    problem, graph = build_problem(cfg), build_graph(cfg)
    ref = reference_solve(problem, build_incidence(graph, cfg.params.l_index))
    path = reference_path(cfg, out)
    write_reference(ref, cfg.problem_key(), path)
    w = ref.w_star
    shown = np.array2string(w[:8], precision=6) + (" ..." if w.size > 8 else "")
    print(f"w* = {shown}")
    print(f"J* = {ref.objective_star!r}  KKT residual {ref.kkt_residual:.2e}  "
          f"subgradient residual {ref.subgradient_residual:.2e}")
    print(f"reference written to {path}")
    return EXIT_OK


def cmd_check(cfg: ExperimentConfig, out: Path, seed: int, inject: tuple[int, int] | None = None) -> int:
    problem, graph = build_problem(cfg), build_graph(cfg)
    if problem.dim > DENSE_DIM_CAP:
        raise ConfigError(f"check needs d <= {DENSE_DIM_CAP} for dense monitors, got d = {problem.dim}")
    params, schedule = cfg.hyper_params(), cfg.make_schedule()
    ref = load_or_solve_reference(cfg, problem, graph, out)
    mons, lyap = build_monitors(cfg, problem, graph, ref, schedule, force=True)
    if inject is not None:
        mons.insert(0, PairCorruptor(*inject))
    trace = run(problem, graph, params, schedule, cfg.iterations, seed=seed,
                objective_star=ref.objective_star, monitors=mons)
    rows = list(trace.invariants)
    if schedule.mode == "sync":
        cfg.seeds = [seed]
        rows += lyapunov_rows(cfg, schedule, [lyap])
    write_invariants(rows, out / f"check_seed{seed}.csv")
    totals = tally(rows)
    print(f"{'check':<26}{'checks':>8}{'violations':>12}{'max measured':>16}{'bound':>16}")
    for name, t in totals.items():
        print(f"{name:<26}{t['checks']:>8}{t['violations']:>12}{t['max_measured']:>16.6g}{t['bound']:>16.6g}")
    if trace.aborted:
        print(f"run aborted: {trace.aborted}")
        return EXIT_DIVERGED
    bad = next((r for r in rows if not r.passed), None)
    if bad is not None:
        print(f"first violation: {bad.name} at iteration {bad.iteration}, agent {bad.agent}: "
              f"measured {bad.measured:.6g} vs bound {bad.bound:.6g} {bad.detail}".rstrip())
        return EXIT_VIOLATION
    print("all checks passed")
    return EXIT_OK


def _fault(text: str) -> tuple[int, int]:
    try:
        agent, it = text.split(":")
        return int(agent), int(it)
    except ValueError:
        raise argparse.ArgumentTypeError("expected AGENT:ITERATION") from None


def parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="lbfgs-admm", description=__doc__)
    ap.add_argument("-q", "--quiet", action="store_true", help="only log warnings and errors")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("run", "oracle", "check"):
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="TOML experiment file")
        p.add_argument("--out", help=f"output directory (default: ${ENV_OUT} or output.dir)")
        p.add_argument("--seed", type=int, help="run only this seed")
        if name == "run":
            p.add_argument("--monitors", choices=("on", "off"), default="on")
        if name == "check":
            p.add_argument("--inject-bad-pair", type=_fault, metavar="AGENT:ITER",
                           help="corrupt one stored pair (fault-injection hook)")
    return ap


def main(argv=None) -> int:
    args = parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, format="%(levelname)s %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.seeds = [args.seed]
        out = output_dir(cfg, args.out)
        if args.command == "run":
            return cmd_run(cfg, out, args.monitors == "on")
        if args.command == "oracle":
            return cmd_oracle(cfg, out)
        return cmd_check(cfg, out, cfg.seeds[0], args.inject_bad_pair)
    except (ConfigError, GraphError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OSError, DataError) as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO
    except OracleError as exc:
        print(f"oracle error: {exc}", file=sys.stderr)
        return EXIT_ORACLE


if __name__ == "__main__":
    sys.exit(main())
