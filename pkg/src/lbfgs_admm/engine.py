"""Decentralized L-BFGS-ADMM: per-agent state and the synchronous/asynchronous loops.

Each agent i keeps its primal copy ``w``, the dual accumulator ``phi`` and the
latest ``w_j`` received from every neighbor. Agent ``l_index`` also owns the
regularizer copy ``theta`` and its multiplier ``lam``. One iteration ("tick"):

* every active agent forms the local augmented-Lagrangian gradient, takes the
  quasi-Newton step ``w <- w - H^{-1} h`` and broadcasts ``w``;
* agent l runs the proximal step on ``theta`` and the ``lam`` ascent;
* the dual accumulators absorb ``(mu_z/2) * sum_j (w_i - w_j)``;
* each active agent stores its new curvature pair.

In synchronous mode all agents read iteration-t values (Jacobi) and the duals
use the freshly broadcast iterates, which is the vectorized recursion

    w+   = w - H^{-1}(grad F(w) + phi + S lam + mu_z/2 L_s w + mu_theta S(S'w - theta))
    theta+ = prox_{g/mu_theta}(S'w+ + lam/mu_theta)
    phi+ = phi + mu_z/2 L_s w+
    lam+ = lam + mu_theta (S'w+ - theta+)
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .graph import NetworkGraph, build_incidence
from .lbfgs import CurvaturePair, LbfgsMemory
from .objective import CompositeProblem

DIVERGENCE_NORM = 1e12
TRACE_HEADER = ("iter", "comm", "objective", "rel_error", "consensus_residual")


class ConfigError(ValueError):
    pass


class DivergenceError(RuntimeError):
    pass


@dataclass
class HyperParams:
    mu_z: float
    mu_theta: float | None = None
    epsilon: float = 0.1
    memory: int = 10
    gamma: float = 1.0
    init_mode: str = "constant"
    l_index: int = 0

    def __post_init__(self):
        if self.mu_theta is None:
            self.mu_theta = self.mu_z / 2.0
        for name in ("mu_z", "mu_theta", "epsilon", "gamma"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"params.{name} must be positive, got {getattr(self, name)}")
        if self.memory < 0:
            raise ConfigError("params.memory must be nonnegative")
        if self.init_mode not in ("constant", "adaptive"):
            raise ConfigError(f"params.init_mode must be 'constant' or 'adaptive', got {self.init_mode!r}")


@dataclass
class Schedule:
    """Which agents are active at each tick.

    ``mode="sync"`` activates everyone with Jacobi reads. In ``"async"`` mode
    agents are independently active with probability ``probs[i]``, or, when
    ``active_count`` is set, exactly that many agents are drawn uniformly.
    ``ordering="sequential"`` processes active agents one by one in shuffled
    order; ``"jacobi"`` lets them all read the tick-start snapshot.
    ``dual="edge"`` updates each edge touching an active agent once per tick
    (both endpoints' accumulators); ``"agent"`` updates only the active
    agent's own accumulator.
    """

    mode: str = "sync"
    probs: float | Sequence[float] = 1.0
    active_count: int | None = None
    ordering: str = "sequential"
    dual: str = "edge"

    def validate(self, m: int) -> np.ndarray:
        if self.mode not in ("sync", "async"):
            raise ConfigError(f"schedule.mode must be 'sync' or 'async', got {self.mode!r}")
        if self.ordering not in ("sequential", "jacobi"):
            raise ConfigError(f"schedule.ordering must be 'sequential' or 'jacobi', got {self.ordering!r}")
        if self.dual not in ("edge", "agent"):
            raise ConfigError(f"schedule.dual must be 'edge' or 'agent', got {self.dual!r}")
        probs = np.broadcast_to(np.asarray(self.probs, dtype=float), (m,)).copy()
        for i, p in enumerate(probs):
            if not 0.0 < p <= 1.0:
                raise ConfigError(f"schedule.probs[{i}] = {p}: activation probability of agent {i} must be in (0, 1]")
        if self.active_count is not None and not 1 <= self.active_count <= m:
            raise ConfigError(f"schedule.active_count must be in [1, {m}]")
        return probs

    def activation_probs(self, m: int) -> np.ndarray:
        """Marginal activation probability of each agent."""
        if self.mode == "sync":
            return np.ones(m)
        if self.active_count is not None:
            return np.full(m, self.active_count / m)
        return self.validate(m)


@dataclass
class AgentState:
    index: int
    neighbors: tuple[int, ...]
    w: np.ndarray
    phi: np.ndarray
    buffer: np.ndarray
    grad: np.ndarray
    memory: LbfgsMemory
    tau: int = 0
    theta: np.ndarray | None = None
    lam: np.ndarray | None = None


@dataclass
class Activation:
    """What one agent did during a tick; recorded only when monitors are attached."""

    agent: int
    w_old: np.ndarray
    w_new: np.ndarray
    grad_old: np.ndarray
    grad_new: np.ndarray
    init_scale: float
    next_init_scale: float
    pairs_before: tuple[CurvaturePair, ...]
    pairs_after: tuple[CurvaturePair, ...]
    pushed: bool
    coef: float
    theta_old: np.ndarray | None = None
    theta_new: np.ndarray | None = None
    lam_old: np.ndarray | None = None
    lam_new: np.ndarray | None = None


@dataclass
class Network:
    problem: CompositeProblem
    graph: NetworkGraph
    params: HyperParams
    agents: list[AgentState]
    comm: int = 0
    t: int = 0
    record: bool = False
    log: list[Activation] = field(default_factory=list)

    @classmethod
    def zeros(cls, problem: CompositeProblem, graph: NetworkGraph, params: HyperParams) -> "Network":
        if problem.m != graph.m:
            raise ConfigError(f"problem has {problem.m} local costs but graph has {graph.m} agents")
        if not 0 <= params.l_index < graph.m:
            raise ConfigError(f"params.l_index {params.l_index} outside [0, {graph.m})")
        build_incidence(graph, params.l_index)  # connectivity check
        d = problem.dim
        agents = []
        for i in range(graph.m):
            nb = graph.neighbors[i]
            zero = np.zeros(d)
            agents.append(AgentState(
                index=i, neighbors=nb, w=zero.copy(), phi=zero.copy(),
                buffer=np.zeros((len(nb), d)), grad=problem.costs[i].gradient(zero),
                memory=LbfgsMemory(params.memory),
                theta=zero.copy() if i == params.l_index else None,
                lam=zero.copy() if i == params.l_index else None,
            ))
        return cls(problem, graph, params, agents)

    # -- views ---------------------------------------------------------------

    @property
    def W(self) -> np.ndarray:
        return np.array([a.w for a in self.agents])

    @property
    def Phi(self) -> np.ndarray:
        return np.array([a.phi for a in self.agents])

    @property
    def holder(self) -> AgentState:
        return self.agents[self.params.l_index]

    @property
    def theta(self) -> np.ndarray:
        return self.holder.theta

    @property
    def lam(self) -> np.ndarray:
        return self.holder.lam

    def coef(self, i: int) -> float:
        p = self.params
        return p.mu_z * len(self.agents[i].neighbors) + (p.mu_theta if i == p.l_index else 0.0) + p.epsilon

    def init_scale(self, i: int) -> float:
        fallback = 1.0 / self.params.gamma
        if self.params.init_mode == "adaptive":
            return self.agents[i].memory.adaptive_scale(fallback)
        return fallback

    # -- per-agent pieces ----------------------------------------------------

    def local_gradient(self, i: int) -> np.ndarray:
        a, p = self.agents[i], self.params
        h = a.grad + a.phi
        if a.neighbors:
            h = h + 0.5 * p.mu_z * (len(a.neighbors) * a.w - a.buffer.sum(axis=0))
        if i == p.l_index:
            h = h + p.mu_theta * (a.w - a.theta) + a.lam
        return h

    def _primal(self, i: int) -> dict:
        a = self.agents[i]
        h = self.local_gradient(i)
        scale = self.init_scale(i)
        r = a.memory.two_loop(h, scale)
        w_old, grad_old = a.w, a.grad
        a.w = w_old - r
        if not np.all(np.isfinite(a.w)) or np.linalg.norm(a.w) > DIVERGENCE_NORM:
            raise DivergenceError(f"agent {i} diverged at iteration {self.t} (|w| = {np.linalg.norm(a.w):.3g})")
        a.grad = self.problem.costs[i].gradient(a.w)
        return {"w_old": w_old, "grad_old": grad_old, "init_scale": scale}

    def _deliver(self, i: int) -> None:
        a = self.agents[i]
        for j in a.neighbors:
            b = self.agents[j]
            b.buffer[b.neighbors.index(i)] = a.w
        self.comm += 1

    def _dual_self(self, i: int) -> None:
        a = self.agents[i]
        if a.neighbors:
            a.phi = a.phi + 0.5 * self.params.mu_z * (len(a.neighbors) * a.w - a.buffer.sum(axis=0))

    def _dual_edges(self, active: Sequence[int]) -> None:
        touched = set(active)
        half = 0.5 * self.params.mu_z
        incr = {}
        for i, j in self.graph.edges:
            if i in touched or j in touched:
                ai, aj = self.agents[i], self.agents[j]
                # each endpoint uses its own iterate and its buffered copy of the other
                incr.setdefault(i, []).append(half * (ai.w - ai.buffer[ai.neighbors.index(j)]))
                incr.setdefault(j, []).append(half * (aj.w - aj.buffer[aj.neighbors.index(i)]))
        for k, parts in incr.items():
            self.agents[k].phi = self.agents[k].phi + np.sum(parts, axis=0)

    def _regularizer(self, i: int) -> tuple | None:
        if i != self.params.l_index:
            return None
        a, p = self.agents[i], self.params
        theta_old, lam_old = a.theta, a.lam
        a.theta = self.problem.regularizer.prox(a.w + a.lam / p.mu_theta, 1.0 / p.mu_theta)
        a.lam = a.lam + p.mu_theta * (a.w - a.theta)
        return theta_old, lam_old

    def _store_pair(self, i: int, pre: dict, reg: tuple | None) -> None:
        a = self.agents[i]
        before = a.memory.snapshot() if self.record else ()
        s = a.w - pre["w_old"]
        coef = self.coef(i)
        q = a.grad - pre["grad_old"] + coef * s
        pushed = a.memory.push(s, q)
        a.tau += 1
        if self.record:
            act = Activation(
                agent=i, w_old=pre["w_old"], w_new=a.w.copy(), grad_old=pre["grad_old"], grad_new=a.grad,
                init_scale=pre["init_scale"], next_init_scale=self.init_scale(i),
                pairs_before=before, pairs_after=a.memory.snapshot(), pushed=pushed, coef=coef,
            )
            if reg is not None:
                act.theta_old, act.lam_old = reg
                act.theta_new, act.lam_new = a.theta.copy(), a.lam.copy()
            self.log.append(act)

    # -- whole activations -----------------------------------------------------

    def agent_step(self, i: int, dual: str = "agent") -> None:
        """One activation of agent ``i`` reading its current buffer."""
        pre = self._primal(i)
        if dual == "agent":
            self._dual_self(i)
        self._deliver(i)
        reg = self._regularizer(i)
        self._store_pair(i, pre, reg)

    def _jacobi(self, active: Sequence[int], dual: str) -> None:
        pre = {i: self._primal(i) for i in active}
        for i in active:
            self._deliver(i)
        if dual == "agent":
            for i in active:
                self._dual_self(i)
        else:
            self._dual_edges(active)
        regs = {i: self._regularizer(i) for i in active}
        for i in active:
            self._store_pair(i, pre[i], regs[i])

    def sync_iteration(self) -> None:
        self.log = []
        self._jacobi(range(self.graph.m), "agent")
        self.t += 1

    def async_iteration(self, schedule: Schedule, rng: np.random.Generator) -> list[int]:
        self.log = []
        m = self.graph.m
        if schedule.active_count is not None:
            active = sorted(rng.choice(m, size=schedule.active_count, replace=False).tolist())
        else:
            probs = schedule.activation_probs(m)
            active = [i for i, u in enumerate(rng.random(m)) if u < probs[i]]
        order = [int(i) for i in rng.permutation(active)]
        if schedule.ordering == "jacobi":
            self._jacobi(sorted(order), schedule.dual)
        else:
            for i in order:
                self.agent_step(i, dual=schedule.dual)
            if schedule.dual == "edge":
                self._dual_edges(order)
        self.t += 1
        return order

    # -- metrics -------------------------------------------------------------

    def consensus_residual(self) -> float:
        if not self.graph.edges:
            return 0.0
        W = self.W
        return max(float(np.linalg.norm(W[i] - W[j])) for i, j in self.graph.edges)

    def agent_objectives(self) -> np.ndarray:
        return self.problem.objectives(self.W)


# -- tracing -------------------------------------------------------------------


@dataclass
class TraceRow:
    iter: int
    comm: int
    objective: float
    rel_error: float
    consensus_residual: float


@dataclass
class RunTrace:
    rows: list[TraceRow] = field(default_factory=list)
    invariants: list = field(default_factory=list)
    aborted: str | None = None

    @property
    def rel_error(self) -> np.ndarray:
        return np.array([r.rel_error for r in self.rows])

    @property
    def iters(self) -> np.ndarray:
        return np.array([r.iter for r in self.rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(TRACE_HEADER)
        for r in self.rows:
            wr.writerow([r.iter, r.comm, repr(r.objective), repr(r.rel_error), repr(r.consensus_residual)])
        return buf.getvalue()


def relative_error_from(avg_obj: float, avg_obj0: float, objective_star: float | None) -> float:
    if objective_star is None:
        return math.nan
    den = avg_obj0 - objective_star
    if den <= 0:
        return math.nan
    return (avg_obj - objective_star) / den


Monitor = Callable[[Network], list]


def run(problem: CompositeProblem, graph: NetworkGraph, params: HyperParams, schedule: Schedule,
        iterations: int, seed: int = 0, objective_star: float | None = None,
        monitors: Sequence = (), record_every: int = 1) -> RunTrace:
    """Run from the zero state for ``iterations`` ticks.

    ``monitors`` are objects with ``start(net)`` and ``observe(net)`` methods;
    whatever rows ``observe`` returns are appended to ``trace.invariants``.
    """
    schedule.validate(graph.m)
    net = Network.zeros(problem, graph, params)
    net.record = bool(monitors)
    rng = np.random.default_rng(seed)
    trace = RunTrace()
    obj0 = float(net.agent_objectives().mean())

    def record():
        W = net.W
        vals = problem.objectives(np.vstack([W, W.mean(axis=0)]))
        objs = vals[:-1]
        trace.rows.append(TraceRow(
            iter=net.t, comm=net.comm,
            objective=float(vals[-1]),
            rel_error=relative_error_from(float(objs.mean()), obj0, objective_star),
            consensus_residual=net.consensus_residual(),
        ))

    for mon in monitors:
        mon.start(net)
    record()
    try:
        for t in range(iterations):
            if schedule.mode == "sync":
                net.sync_iteration()
            else:
                net.async_iteration(schedule, rng)
            for mon in monitors:
                trace.invariants.extend(mon.observe(net))
            if net.t % record_every == 0 or t == iterations - 1:
                record()
    except DivergenceError as exc:
        trace.aborted = str(exc)
    return trace
