"""Reference solutions, error metrics, and runtime checks of the convergence lemmas.

Everything here works on small dense matrices (d <= 64) and is kept out of
the engine's hot path.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field
from math import comb

import numpy as np
from scipy.optimize import minimize

from .engine import HyperParams, Network, Schedule
from .graph import IncidenceSet, SpectralData, build_incidence
from .lbfgs import CURVATURE_GUARD, CurvaturePair, dense_hessian, dense_inverse
from .objective import CompositeProblem, L1Regularizer, ZeroRegularizer

DENSE_DIM_CAP = 64
BOUND_SLACK = 1e-9
PAIR_NOISE_CAP = 1e-6
MACHINE_EPS = float(np.finfo(float).eps)


class OracleError(RuntimeError):
    pass


# -- reference solution -------------------------------------------------------


@dataclass
class ReferenceSolution:
    w_star: np.ndarray
    theta_star: np.ndarray
    alpha_star: np.ndarray | None
    lambda_star: np.ndarray
    objective_star: float
    kkt_residual: float
    subgradient_residual: float
    gradient_map_norm: float
    iterations: int

    def to_dict(self) -> dict:
        return {
            "w_star": self.w_star.tolist(),
            "theta_star": self.theta_star.tolist(),
            "alpha_star": None if self.alpha_star is None else self.alpha_star.tolist(),
            "lambda_star": self.lambda_star.tolist(),
            "objective_star": self.objective_star,
            "kkt_residual": self.kkt_residual,
            "subgradient_residual": self.subgradient_residual,
            "gradient_map_norm": self.gradient_map_norm,
            "iterations": self.iterations,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ReferenceSolution":
        arr = lambda v: None if v is None else np.asarray(v, dtype=float)  # noqa: E731
        return cls(
            w_star=arr(d["w_star"]), theta_star=arr(d["theta_star"]), alpha_star=arr(d["alpha_star"]),
            lambda_star=arr(d["lambda_star"]), objective_star=float(d["objective_star"]),
            kkt_residual=float(d["kkt_residual"]), subgradient_residual=float(d["subgradient_residual"]),
            gradient_map_norm=float(d["gradient_map_norm"]), iterations=int(d["iterations"]),
        )


def _gradient_map(problem: CompositeProblem, w: np.ndarray, L: float) -> float:
    step = problem.regularizer.prox(w - problem.smooth_gradient(w) / L, 1.0 / L)
    return float(L * np.linalg.norm(w - step))


def _smooth_lipschitz(problem: CompositeProblem) -> float:
    L = sum(c.M_f for c in problem.costs) if problem.M_f is not None else 1.0
    return max(L, 1e-12)


def _warm_start(problem: CompositeProblem) -> np.ndarray | None:
    """Quasi-Newton estimate via the split w = u - v with u, v >= 0 (l1) or plain L-BFGS."""
    reg, d = problem.regularizer, problem.dim
    if isinstance(reg, ZeroRegularizer):
        res = minimize(problem.smooth_value, np.zeros(d), jac=problem.smooth_gradient, method="L-BFGS-B",
                       options={"maxiter": 20000, "ftol": 0.0, "gtol": 1e-14})
        return res.x
    if not isinstance(reg, L1Regularizer):
        return None

    def fun(x):
        w = x[:d] - x[d:]
        g = problem.smooth_gradient(w)
        return problem.smooth_value(w) + reg.weight * x.sum(), np.concatenate([g + reg.weight, reg.weight - g])

    res = minimize(fun, np.zeros(2 * d), jac=True, method="L-BFGS-B", bounds=[(0, None)] * (2 * d),
                   options={"maxiter": 20000, "ftol": 0.0, "gtol": 1e-14, "maxcor": 20})
    return res.x[:d] - res.x[d:]


def _fista(problem: CompositeProblem, tol: float, max_iter: int,
           w0: np.ndarray | None = None) -> tuple[np.ndarray, float, int]:
    """Accelerated proximal gradient with backtracking and gradient-based restart."""
    F, grad, reg = problem.smooth_value, problem.smooth_gradient, problem.regularizer
    L = _smooth_lipschitz(problem)
    w = np.zeros(problem.dim) if w0 is None else np.array(w0, dtype=float)
    y, t = w.copy(), 1.0
    for k in range(1, max_iter + 1):
        gy, fy = grad(y), F(y)
        while True:
            w_new = reg.prox(y - gy / L, 1.0 / L)
            diff = w_new - y
            if F(w_new) <= fy + gy @ diff + 0.5 * L * (diff @ diff) + 1e-15 * abs(fy):
                break
            L *= 2.0
        t_new = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t * t))
        if (y - w_new) @ (w_new - w) > 0:  # restart
            t_new, y = 1.0, w_new.copy()
        else:
            y = w_new + ((t - 1.0) / t_new) * (w_new - w)
        w, t = w_new, t_new
        if k % 10 == 0 and _gradient_map(problem, w, L) <= tol:
            return w, L, k
    return w, L, max_iter


def _newton_polish(problem: CompositeProblem, w: np.ndarray, L: float, steps: int = 30) -> np.ndarray:
    """Newton's method on the support of ``w`` with signs frozen (l1 or no regularizer)."""
    reg = problem.regularizer
    if isinstance(reg, L1Regularizer):
        support = np.flatnonzero(w)
        sign_term = reg.weight * np.sign(w[support])
    elif isinstance(reg, ZeroRegularizer):
        support = np.arange(w.size)
        sign_term = 0.0
    else:
        return w
    if support.size == 0:
        return w
    best, best_gm = w, _gradient_map(problem, w, L)
    cur = w.copy()
    for _ in range(steps):
        g = problem.smooth_gradient(cur)[support] + sign_term
        H = problem.smooth_hessian(cur)[np.ix_(support, support)]
        try:
            step = np.linalg.solve(H, g)
        except np.linalg.LinAlgError:
            break
        nxt = cur.copy()
        nxt[support] -= step
        if isinstance(reg, L1Regularizer) and np.any(np.sign(nxt[support]) != np.sign(w[support])):
            break
        cur = nxt
        gm = _gradient_map(problem, cur, L)
        if gm < best_gm:
            best, best_gm = cur.copy(), gm
        if np.linalg.norm(step) <= 1e-15 * max(1.0, np.linalg.norm(cur)):
            break
    return best


def _min_norm(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    if A.shape[1] == 0:
        return np.zeros((0, B.shape[1]))
    return np.linalg.lstsq(A, B, rcond=None)[0]


def recover_duals(problem: CompositeProblem, w_star: np.ndarray, inc: IncidenceSet | None):
    """Multipliers of the consensus constraints at the optimum.

    Summing the stationarity rows over agents removes the edge duals, which
    pins ``lambda* = -sum_i grad f_i(w*)``; the edge duals then solve
    ``E_s' alpha = -(grad F(w*) + S lambda*)`` in the least-squares sense, and
    the minimum-norm solution lies in the column space of ``E_s``.
    """
    grads = np.array([c.gradient(w_star) for c in problem.costs])
    lam = -grads.sum(axis=0)
    if inc is None:
        return lam, None, 0.0
    rhs = -grads
    rhs[inc.l_index] -= lam
    alpha = _min_norm(inc.e_s.T, rhs)
    resid = grads + inc.e_s.T @ alpha
    resid[inc.l_index] += lam
    return lam, alpha, float(np.linalg.norm(resid))


def reference_solve(problem: CompositeProblem, inc: IncidenceSet | None = None, tol: float = 1e-10,
                    max_iter: int = 200_000) -> ReferenceSolution:
    L = _smooth_lipschitz(problem)
    w, iters = _warm_start(problem), 0
    if w is not None:
        w = _newton_polish(problem, w, L)
    if w is None or _gradient_map(problem, w, L) > tol:
        w, L, iters = _fista(problem, tol, max_iter, w0=w)
        w = _newton_polish(problem, w, L)
    gm = _gradient_map(problem, w, L)
    if gm > tol:
        raise OracleError(f"reference solver stopped at gradient-map norm {gm:.3e} > {tol:.1e} after {iters} iterations")
    lam, alpha, kkt = recover_duals(problem, w, inc)
    return ReferenceSolution(
        w_star=w, theta_star=w.copy(), alpha_star=alpha, lambda_star=lam,
        objective_star=problem.objective(w), kkt_residual=kkt,
        subgradient_residual=problem.regularizer.subgradient_distance(w, lam),
        gradient_map_norm=gm, iterations=iters,
    )


def relative_error(agent_objectives, initial_average: float, ref: ReferenceSolution | float) -> float:
    """Averaged relative cost error; NaN when the start is already optimal."""
    j_star = ref.objective_star if isinstance(ref, ReferenceSolution) else float(ref)
    den = initial_average - j_star
    if den <= 0:
        return math.nan
    return (float(np.mean(agent_objectives)) - j_star) / den


# -- dense whole-network oracles ----------------------------------------------


class _PairRing:
    """Minimal pair store for the dense oracles (same guard as the engine)."""

    def __init__(self, capacity: int):
        self.capacity = capacity
        self.pairs: list[CurvaturePair] = []

    def push(self, s, q):
        sq = float(s @ q)
        if not (sq > CURVATURE_GUARD * np.linalg.norm(s) * np.linalg.norm(q) and sq > 0):
            return
        if self.capacity:
            self.pairs.append(CurvaturePair(s.copy(), q.copy(), 1.0 / sq))
            self.pairs = self.pairs[-self.capacity:]

    def scale(self, params: HyperParams) -> float:
        if params.init_mode == "adaptive" and self.pairs:
            p = self.pairs[-1]
            return float(p.s @ p.q) / float(p.q @ p.q)
        return 1.0 / params.gamma


def explicit_recursion(problem: CompositeProblem, inc: IncidenceSet, params: HyperParams, iterations: int):
    """Vectorized (w, theta, phi, lambda) recursion with dense per-agent inverse estimates.

    Returns a list of ``(W, theta, Phi, lam)`` tuples, starting at the zero state.
    """
    m, d = problem.m, problem.dim
    l = inc.l_index
    Ls = inc.l_s
    deg = inc.graph.degrees
    W, Phi = np.zeros((m, d)), np.zeros((m, d))
    theta, lam = np.zeros(d), np.zeros(d)
    rings = [_PairRing(params.memory) for _ in range(m)]
    out = [(W.copy(), theta.copy(), Phi.copy(), lam.copy())]
    for _ in range(iterations):
        G = np.array([c.gradient(W[i]) for i, c in enumerate(problem.costs)])
        grad_L = G + Phi + 0.5 * params.mu_z * (Ls @ W)
        grad_L[l] += lam + params.mu_theta * (W[l] - theta)
        W_new = np.empty_like(W)
        for i in range(m):
            hinv = dense_inverse(rings[i].pairs, rings[i].scale(params), d)
            W_new[i] = W[i] - hinv @ grad_L[i]
        theta = problem.regularizer.prox(W_new[l] + lam / params.mu_theta, 1.0 / params.mu_theta)
        Phi = Phi + 0.5 * params.mu_z * (Ls @ W_new)
        lam = lam + params.mu_theta * (W_new[l] - theta)
        G_new = np.array([c.gradient(W_new[i]) for i, c in enumerate(problem.costs)])
        for i in range(m):
            s = W_new[i] - W[i]
            coef = params.mu_z * deg[i] + (params.mu_theta if i == l else 0.0) + params.epsilon
            rings[i].push(s, G_new[i] - G[i] + coef * s)
        W = W_new
        out.append((W.copy(), theta.copy(), Phi.copy(), lam.copy()))
    return out


def five_variable_admm(problem: CompositeProblem, inc: IncidenceSet, params: HyperParams, iterations: int):
    """ADMM on (w, theta, z; y, lambda) with explicit Kronecker matrices.

    The w-minimization is replaced by one quasi-Newton step on the augmented
    Lagrangian; theta and z are exact minimizations; y and lambda take dual
    ascent steps. Returns ``(w, z, theta, y, lam)`` per iteration with
    ``w`` of shape (m, d) and ``y`` of shape (2n, d).
    """
    m, d, n = problem.m, problem.dim, inc.graph.n
    I = np.eye(d)
    A = np.kron(np.vstack([inc.a_s, inc.a_d]), I)
    B = np.kron(np.vstack([np.eye(n), np.eye(n)]), I)
    S = np.kron(inc.selector[:, None], I)
    mz, mt = params.mu_z, params.mu_theta
    deg = inc.graph.degrees
    l = inc.l_index
    w, z, y = np.zeros(m * d), np.zeros(n * d), np.zeros(2 * n * d)
    theta, lam = np.zeros(d), np.zeros(d)
    rings = [_PairRing(params.memory) for _ in range(m)]

    def grad_F(v):
        return np.concatenate([c.gradient(v[i * d:(i + 1) * d]) for i, c in enumerate(problem.costs)])

    def snap():
        return (w.reshape(m, d).copy(), z.reshape(n, d).copy(), theta.copy(), y.reshape(2 * n, d).copy(), lam.copy())

    out = [snap()]
    for _ in range(iterations):
        gF = grad_F(w)
        grad_L = gF + A.T @ y + S @ lam + mz * A.T @ (A @ w - B @ z) + mt * S @ (S.T @ w - theta)
        hinv = np.zeros((m * d, m * d))
        for i in range(m):
            hinv[i * d:(i + 1) * d, i * d:(i + 1) * d] = dense_inverse(rings[i].pairs, rings[i].scale(params), d)
        w_new = w - hinv @ grad_L
        theta = problem.regularizer.prox(S.T @ w_new + lam / mt, 1.0 / mt)
        # B'y + mu_z B'(A w - B z) = 0 with B'B = 2I
        z = (B.T @ y / mz + B.T @ A @ w_new) / 2.0
        y = y + mz * (A @ w_new - B @ z)
        lam = lam + mt * (S.T @ w_new - theta)
        gF_new = grad_F(w_new)
        for i in range(m):
            sl = slice(i * d, (i + 1) * d)
            s = w_new[sl] - w[sl]
            coef = mz * deg[i] + (mt if i == l else 0.0) + params.epsilon
            rings[i].push(s, gF_new[sl] - gF[sl] + coef * s)
        w = w_new
        out.append(snap())
    return out


# -- invariant monitors ---------------------------------------------------------


@dataclass
class InvariantRow:
    name: str
    iteration: int
    agent: int
    measured: float
    bound: float
    passed: bool
    detail: str = ""


@dataclass
class BoundConstants:
    m_f: float
    M_f: float
    mu_z: float
    mu_theta: float
    epsilon: float
    gamma: float
    c: int
    d_max: int
    m: int
    d_min: int = 1

    @classmethod
    def from_run(cls, problem: CompositeProblem, net_or_graph, params: HyperParams) -> "BoundConstants":
        graph = getattr(net_or_graph, "graph", net_or_graph)
        if problem.m_f is None or problem.M_f is None:
            raise ValueError("curvature bounds m_f/M_f are unknown for this problem")
        return cls(problem.m_f, problem.M_f, params.mu_z, params.mu_theta, params.epsilon,
                   params.gamma, params.memory, graph.d_max, graph.m, int(graph.degrees.min()))

    @property
    def pair_lower(self) -> float:
        # a lone agent (m = 1) has no neighbour term
        return self.m_f + min(self.d_min, 1) * self.mu_z + self.epsilon

    @property
    def pair_upper(self) -> float:
        """Upper curvature bound with the maximum degree in place of m."""
        return self.M_f + self.d_max * self.mu_z + self.epsilon + self.mu_theta

    @property
    def pair_upper_stated(self) -> float:
        return self.M_f + self.m * self.mu_z + self.epsilon + self.mu_theta

    def hessian_norm_bound(self, gamma: float | None = None) -> float:
        g = self.gamma if gamma is None else gamma
        return g + self.c * self.pair_upper

    def tau_bounds(self) -> dict[str, float]:
        return {
            "pair_bound": 2 * self.gamma + 2 * self.c * self.pair_upper,
            "reduced": 2 * self.gamma + 2 * self.c * (self.M_f + self.d_max * self.mu_z + self.epsilon),
            "theta_weighted": 2 * self.gamma + 2 * self.c * (self.M_f + self.mu_theta * (self.d_max + 2) + self.epsilon),
        }

    @property
    def tau_bound(self) -> float:
        return max(self.tau_bounds().values())


def check_pair_bounds(pair: CurvaturePair, k: BoundConstants, iteration: int = 0, agent: int = 0,
                      q_noise: float = 0.0) -> list[InvariantRow]:
    """Curvature ratio ||q||^2 / <q, s> against its lower and upper bounds.

    ``q_noise`` is an estimate of the absolute rounding error in ``q``. Pairs
    whose relative noise exceeds ``PAIR_NOISE_CAP`` carry no curvature
    information and are reported as skipped rather than checked.
    """
    ratio = pair.ratio
    qn, sn = float(np.linalg.norm(pair.q)), float(np.linalg.norm(pair.s))
    rel_noise = q_noise / qn if qn > 0 else math.inf
    if rel_noise > PAIR_NOISE_CAP:
        return [InvariantRow("pair_ratio_skipped", iteration, agent, rel_noise, PAIR_NOISE_CAP, True,
                             "pair below rounding floor")]
    slack = BOUND_SLACK + 10.0 * rel_noise * qn * sn * pair.rho
    lo_ok = ratio >= k.pair_lower * (1 - slack)
    hi_ok = ratio <= k.pair_upper * (1 + slack)
    return [
        InvariantRow("pair_ratio_lower", iteration, agent, ratio, k.pair_lower, bool(lo_ok)),
        InvariantRow("pair_ratio_upper", iteration, agent, ratio, k.pair_upper, bool(hi_ok),
                     f"stated-form bound {k.pair_upper_stated:.6g}: {'ok' if ratio <= k.pair_upper_stated * (1 + slack) else 'VIOLATED'}"),
    ]


def _sym_norm(a: np.ndarray) -> float:
    """Spectral norm of a symmetric matrix."""
    return float(np.abs(np.linalg.eigvalsh(a)).max()) if a.size else 0.0


def check_trace_bound(hess: np.ndarray, k: BoundConstants, gamma: float | None = None,
                      iteration: int = 0, agent: int = 0) -> InvariantRow:
    norm = _sym_norm(hess)
    bound = k.hessian_norm_bound(gamma)
    return InvariantRow("hessian_norm", iteration, agent, norm, bound, bool(norm <= bound * (1 + BOUND_SLACK)))


def error_term(grad_old, grad_new, hess_old, coef: float, s) -> np.ndarray:
    """Per-agent block of e^t = grad F(w^t) - grad F(w^{t+1}) + (H^t - coef I) s."""
    return grad_old - grad_new + hess_old @ s - coef * s


def check_error_bound(grad_old, grad_new, s, hess_old, hess_new, coef: float, k: BoundConstants | None = None,
                      iteration: int = 0, agent: int = 0) -> list[InvariantRow]:
    e = error_term(grad_old, grad_new, hess_old, coef, s)
    tau = _sym_norm(hess_old - hess_new)
    lhs = float(np.linalg.norm(e))
    rhs = tau * float(np.linalg.norm(s))
    # e^t is a difference of O(|grad|) terms; allow for their rounding
    atol = 1e-12 * (float(np.linalg.norm(grad_old) + np.linalg.norm(grad_new))
                    + (_sym_norm(hess_old) + coef) * float(np.linalg.norm(s)))
    rows = [InvariantRow("error_bound", iteration, agent, lhs, rhs, bool(lhs <= rhs * (1 + BOUND_SLACK) + atol))]
    if k is not None:
        rows.append(InvariantRow("tau_uniform", iteration, agent, tau, k.tau_bound,
                                 bool(tau <= k.tau_bound * (1 + BOUND_SLACK)),
                                 ", ".join(f"{n}={v:.6g}" for n, v in k.tau_bounds().items())))
    return rows


def check_dual_monotone(lam_old, lam_new, theta_old, theta_new, iteration: int = 0, agent: int = 0) -> InvariantRow:
    val = float((lam_new - lam_old) @ (theta_new - theta_old))
    return InvariantRow("dual_monotone", iteration, agent, val, -1e-12, bool(val >= -1e-12))


class LemmaMonitor:
    """Per-activation checks of the error, pair, norm and dual-monotonicity lemmas.

    A pair stored below the rounding floor (see ``check_pair_bounds``) whose
    ratio falls outside the pair bounds voids the premise of the norm bound;
    while one sits in an agent's memory its norm and uniform-tau rows are
    reported as skipped.
    """

    def __init__(self, constants: BoundConstants, dense_cap: int = DENSE_DIM_CAP):
        self.k = constants
        self.dense_cap = dense_cap

    def start(self, net: Network):
        if net.problem.dim > self.dense_cap:
            raise ValueError(f"dense monitors need d <= {self.dense_cap}, got {net.problem.dim}")
        self.noisy = {i: deque(maxlen=net.params.memory) for i in range(net.graph.m)}
        self._last: dict[int, tuple] = {}

    def _hessian(self, i: int, pairs, init_scale: float, d: int) -> np.ndarray:
        # an agent's previous estimate is usually the next activation's starting one
        pairs = tuple(pairs)
        hit = self._last.get(i)
        if hit is not None and hit[1] == init_scale and len(hit[0]) == len(pairs) \
                and all(a is b for a, b in zip(hit[0], pairs)):
            return hit[2]
        return dense_hessian(pairs, init_scale, d)

    def observe(self, net: Network) -> list[InvariantRow]:
        rows = []
        d = net.problem.dim
        for act in net.log:
            t, i = net.t, act.agent
            hess_new = self._hessian(i, act.pairs_after, act.next_init_scale, d)
            clean_before = not any(self.noisy[i])
            if act.pushed:
                q_noise = 8 * MACHINE_EPS * (
                    float(np.linalg.norm(act.grad_old) + np.linalg.norm(act.grad_new))
                    + act.coef * float(np.linalg.norm(act.w_old) + np.linalg.norm(act.w_new)))
                pair = act.pairs_after[-1] if act.pairs_after else CurvaturePair.from_vectors(
                    act.w_new - act.w_old, act.grad_new - act.grad_old + act.coef * (act.w_new - act.w_old))
                qn = float(np.linalg.norm(pair.q))
                in_bounds = self.k.pair_lower <= pair.ratio <= self.k.pair_upper
                self.noisy[i].append(q_noise > PAIR_NOISE_CAP * qn and not in_bounds)
                rows += check_pair_bounds(pair, self.k, t, i, q_noise)
                # the secant equation only holds for a freshly stored pair
                if net.params.memory > 0:
                    hess_old = self._hessian(i, act.pairs_before, act.init_scale, d)
                    uniform = clean_before and not any(self.noisy[i])
                    rows += check_error_bound(act.grad_old, act.grad_new, act.w_new - act.w_old,
                                              hess_old, hess_new, act.coef, self.k if uniform else None, t, i)
                    if not uniform:
                        rows.append(InvariantRow("tau_skipped", t, i, 0.0, 0.0, True,
                                                 "memory holds a pair below rounding floor"))
            if any(self.noisy[i]):
                rows.append(InvariantRow("hessian_norm_skipped", t, i, _sym_norm(hess_new),
                                         self.k.hessian_norm_bound(1.0 / act.next_init_scale), True,
                                         "memory holds a pair below rounding floor"))
            else:
                rows.append(check_trace_bound(hess_new, self.k, 1.0 / act.next_init_scale, t, i))
            self._last[i] = (tuple(act.pairs_after), act.next_init_scale, hess_new)
            if act.theta_new is not None:
                rows.append(check_dual_monotone(act.lam_old, act.lam_new, act.theta_old, act.theta_new, t, i))
        return rows


class DualShadowMonitor:
    """Tracks alpha <- alpha + (mu_z/2) E_s w and checks phi = E_s' alpha (synchronous runs)."""

    def __init__(self, inc: IncidenceSet, tol: float = 1e-10):
        self.inc, self.tol = inc, tol

    def start(self, net: Network):
        self.alpha = np.zeros((self.inc.graph.n, net.problem.dim))

    def observe(self, net: Network) -> list[InvariantRow]:
        self.alpha = self.alpha + 0.5 * net.params.mu_z * (self.inc.e_s @ net.W)
        Phi = net.Phi
        scale = max(1.0, float(np.abs(Phi).max()))
        err = float(np.abs(Phi - self.inc.e_s.T @ self.alpha).max())
        total = float(np.abs(Phi.sum(axis=0)).max())
        return [
            InvariantRow("shadow_dual", net.t, -1, err, self.tol * scale, err <= self.tol * scale),
            InvariantRow("dual_sum", net.t, -1, total, self.tol * scale, total <= self.tol * scale),
        ]


# -- Lyapunov distance and the theoretical rate --------------------------------


def edge_probabilities(graph, schedule: Schedule | None) -> np.ndarray:
    """Probability that an edge is refreshed in a tick (one of its endpoints active)."""
    if schedule is None or schedule.mode == "sync":
        return np.ones(graph.n)
    m = graph.m
    if schedule.active_count is not None:
        k = schedule.active_count
        p_none = comb(m - 2, k) / comb(m, k) if m >= 2 else 0.0
        return np.full(graph.n, 1.0 - p_none)
    p = schedule.activation_probs(m)
    return np.array([1.0 - (1.0 - p[i]) * (1.0 - p[j]) for i, j in graph.edges])


def h_norm_distance(net: Network, ref: ReferenceSolution, inc: IncidenceSet,
                    schedule: Schedule | None = None) -> float:
    """||u - u*||^2 in the H (or H Omega^{-1}) metric, u = (w, z, theta, alpha, lambda).

    ``z = E_u w / 2`` and ``alpha`` is the minimum-norm solution of
    ``E_s' alpha = phi``.
    """
    p = net.params
    probs = np.ones(net.graph.m) if schedule is None else schedule.activation_probs(net.graph.m)
    pe = edge_probabilities(net.graph, schedule)
    pl = probs[inc.l_index]
    W = net.W
    dW = W - ref.w_star[None, :]
    dz = 0.5 * inc.e_u @ dW
    alpha = _min_norm(inc.e_s.T, net.Phi)
    d_alpha = alpha - (ref.alpha_star if ref.alpha_star is not None else 0.0)
    d_theta = net.theta - ref.theta_star
    d_lam = net.lam - ref.lambda_star
    return float(
        p.epsilon * np.sum(np.sum(dW ** 2, axis=1) / probs)
        + 2 * p.mu_z * np.sum(np.sum(dz ** 2, axis=1) / pe)
        + p.mu_theta * (d_theta @ d_theta) / pl
        + (2 / p.mu_z) * np.sum(np.sum(d_alpha ** 2, axis=1) / pe)
        + (1 / p.mu_theta) * (d_lam @ d_lam) / pl
    )


class LyapunovMonitor:
    """Records the H-norm distance each tick; summarised by ``fraction_decreasing``."""

    def __init__(self, ref: ReferenceSolution, inc: IncidenceSet, schedule: Schedule | None = None,
                 slack: float = 1e-12, every: int = 1):
        self.ref, self.inc, self.schedule, self.slack, self.every = ref, inc, schedule, slack, every
        self.values: list[float] = []

    def start(self, net: Network):
        self.values = [h_norm_distance(net, self.ref, self.inc, self.schedule)]

    def observe(self, net: Network) -> list[InvariantRow]:
        if net.t % self.every == 0:
            self.values.append(h_norm_distance(net, self.ref, self.inc, self.schedule))
        return []

    @property
    def fraction_decreasing(self) -> float:
        v = np.asarray(self.values)
        if v.size < 2:
            return 1.0
        return float(np.mean(np.diff(v) <= self.slack))

    def contraction_factors(self, floor: float = 1e-20) -> np.ndarray:
        v = np.asarray(self.values)
        keep = v[:-1] > floor
        return v[1:][keep] / v[:-1][keep]


@dataclass
class DeltaResult:
    delta: float
    rate: float
    vacuous: bool
    terms: list[float] = field(default_factory=list)
    zeta: float = 0.0
    tau: float = 0.0


def default_zeta(m_f: float, M_f: float) -> float:
    return 2.0 * (m_f + M_f) / (2.0 * m_f * M_f) * 2.0


def theoretical_delta(k: BoundConstants, spectral: SpectralData, zeta: float | None = None,
                      tau: float | None = None, p_min: float = 1.0) -> DeltaResult:
    """Linear-rate constant delta and the implied rate 1 - delta p_min / (1 + delta).

    ``tau`` defaults to the uniform bound on ||H^t - H^{t+1}||.
    """
    zeta = default_zeta(k.m_f, k.M_f) if zeta is None else zeta
    tau = k.tau_bound if tau is None else tau
    eps, mt = k.epsilon, k.mu_theta
    s_plus, s_lu = spectral.sigma_min_plus, spectral.sigma_max_lu
    terms = [
        (2 * k.m_f * k.M_f / (k.m_f + k.M_f) - 1.0 / zeta) / (eps + mt * (s_lu + 2)),
        0.5,
        0.4 * mt * s_plus / (k.m_f + k.M_f),
        mt * s_plus * (eps - zeta * tau ** 2) / (5 * (tau ** 2 + eps ** 2)),
        s_plus / (5 * max(1.0, s_lu)),
    ]
    delta = min(terms)
    if delta <= 0:
        return DeltaResult(delta, 1.0, True, terms, zeta, tau)
    return DeltaResult(delta, 1.0 - delta * p_min / (1.0 + delta), False, terms, zeta, tau)


def standard_monitors(net_problem: CompositeProblem, graph, params: HyperParams, ref: ReferenceSolution | None,
                      schedule: Schedule, lemma: bool = True) -> list:
    """Monitor set used by ``check`` runs."""
    inc = build_incidence(graph, params.l_index)
    mons: list = []
    if lemma:
        mons.append(LemmaMonitor(BoundConstants.from_run(net_problem, graph, params)))
    if schedule.mode == "sync":
        mons.append(DualShadowMonitor(inc))
    if ref is not None:
        mons.append(LyapunovMonitor(ref, inc, schedule))
    return mons
