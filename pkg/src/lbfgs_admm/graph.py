"""Communication graphs and the incidence/Laplacian matrices built from them.

Agents are indexed ``0..m-1``. Every undirected edge ``(i, j)`` is stored with
``i < j`` and the lower endpoint is taken as the source.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

ZERO_EIG_TOL = 1e-9


class GraphError(ValueError):
    pass


@dataclass(frozen=True)
class NetworkGraph:
    m: int
    edges: tuple[tuple[int, int], ...]
    neighbors: tuple[tuple[int, ...], ...] = field(init=False, repr=False)

    def __post_init__(self):
        if self.m < 1:
            raise GraphError("graph needs at least one agent")
        seen = set()
        adj: list[list[int]] = [[] for _ in range(self.m)]
        for i, j in self.edges:
            if not (0 <= i < self.m and 0 <= j < self.m):
                raise GraphError(f"edge {(i, j)} references an agent outside [0, {self.m})")
            if i == j:
                raise GraphError(f"self-loop at agent {i}")
            if i > j:
                raise GraphError(f"edge {(i, j)} must be ordered with i < j")
            if (i, j) in seen:
                raise GraphError(f"duplicate edge {(i, j)}")
            seen.add((i, j))
            adj[i].append(j)
            adj[j].append(i)
        object.__setattr__(self, "neighbors", tuple(tuple(sorted(a)) for a in adj))

    @classmethod
    def from_edges(cls, m: int, edges: Sequence[Sequence[int]]) -> "NetworkGraph":
        """Normalise orientation and order, then validate."""
        norm = sorted((min(int(a), int(b)), max(int(a), int(b))) for a, b in edges)
        return cls(m, tuple(norm))

    @property
    def n(self) -> int:
        return len(self.edges)

    @property
    def degrees(self) -> np.ndarray:
        return np.array([len(nb) for nb in self.neighbors], dtype=int)

    @property
    def d_max(self) -> int:
        return int(self.degrees.max()) if self.m else 0

    def components(self) -> list[list[int]]:
        label = [-1] * self.m
        comps = []
        for start in range(self.m):
            if label[start] >= 0:
                continue
            stack, comp = [start], []
            label[start] = len(comps)
            while stack:
                v = stack.pop()
                comp.append(v)
                for u in self.neighbors[v]:
                    if label[u] < 0:
                        label[u] = len(comps)
                        stack.append(u)
            comps.append(sorted(comp))
        return comps

    def is_connected(self) -> bool:
        return len(self.components()) == 1


# -- generators ------------------------------------------------------------


def path_graph(m: int) -> NetworkGraph:
    return NetworkGraph(m, tuple((i, i + 1) for i in range(m - 1)))


def ring_graph(m: int) -> NetworkGraph:
    if m < 3:
        return path_graph(m)
    return NetworkGraph.from_edges(m, [(i, (i + 1) % m) for i in range(m)])


def complete_graph(m: int) -> NetworkGraph:
    return NetworkGraph(m, tuple((i, j) for i in range(m) for j in range(i + 1, m)))


def erdos_renyi_graph(m: int, p: float, seed: int = 0, max_tries: int = 1000) -> NetworkGraph:
    """G(m, p), redrawn until connected."""
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        edges = [(i, j) for i in range(m) for j in range(i + 1, m) if rng.random() < p]
        g = NetworkGraph(m, tuple(edges))
        if g.is_connected():
            return g
    raise GraphError(f"no connected G({m}, {p}) found in {max_tries} draws")


GENERATORS = {
    "path": path_graph,
    "ring": ring_graph,
    "complete": complete_graph,
    "erdos_renyi": erdos_renyi_graph,
}


def graph_from_config(cfg: dict) -> NetworkGraph:
    """``{"kind": "ring", "m": 5}`` or ``{"m": 3, "edges": [[0, 1], [1, 2]]}``."""
    cfg = dict(cfg)
    if "edges" in cfg:
        return NetworkGraph.from_edges(int(cfg["m"]), cfg["edges"])
    kind = cfg.pop("kind", None)
    if kind not in GENERATORS:
        raise GraphError(f"graph.kind must be one of {sorted(GENERATORS)}, got {kind!r}")
    return GENERATORS[kind](**cfg)


# -- incidence structure -----------------------------------------------------


@dataclass(frozen=True)
class IncidenceSet:
    """Dense n-by-m incidence factors; the I_d Kronecker factor is implicit."""

    graph: NetworkGraph
    l_index: int
    a_s: np.ndarray
    a_d: np.ndarray

    @property
    def e_s(self) -> np.ndarray:
        return self.a_s - self.a_d

    @property
    def e_u(self) -> np.ndarray:
        return self.a_s + self.a_d

    @property
    def l_s(self) -> np.ndarray:
        return self.e_s.T @ self.e_s

    @property
    def l_u(self) -> np.ndarray:
        return self.e_u.T @ self.e_u

    @property
    def degree(self) -> np.ndarray:
        return np.diag(self.graph.degrees)

    @property
    def selector(self) -> np.ndarray:
        """The m-vector s_l (S = s_l kron I_d)."""
        s = np.zeros(self.graph.m)
        s[self.l_index] = 1.0
        return s


def build_incidence(g: NetworkGraph, l_index: int) -> IncidenceSet:
    if not 0 <= l_index < g.m:
        raise GraphError(f"l_index {l_index} outside [0, {g.m})")
    comps = g.components()
    if len(comps) > 1:
        raise GraphError(f"graph is disconnected; component not reachable from agent 0: {comps[1]}")
    a_s = np.zeros((g.n, g.m))
    a_d = np.zeros((g.n, g.m))
    for k, (i, j) in enumerate(g.edges):
        a_s[k, i] = 1.0
        a_d[k, j] = 1.0
    return IncidenceSet(g, l_index, a_s, a_d)


@dataclass(frozen=True)
class SpectralData:
    sigma_min_plus: float
    sigma_max_lu: float
    sigma_min_lu: float


def spectral_quantities(inc: IncidenceSet) -> SpectralData:
    # C = [E_s; s_l^T];  C C^T has the same nonzero spectrum as C^T C = L_s + s_l s_l^T
    c = np.vstack([inc.e_s, inc.selector[None, :]])
    eig_c = np.linalg.eigvalsh(c @ c.T)
    positive = eig_c[eig_c > ZERO_EIG_TOL]
    eig_u = np.linalg.eigvalsh(inc.l_u)
    return SpectralData(
        sigma_min_plus=float(positive.min()),
        sigma_max_lu=float(eig_u.max()),
        sigma_min_lu=float(max(eig_u.min(), 0.0)),
    )
