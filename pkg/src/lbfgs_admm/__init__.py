"""Decentralized composite optimization with quasi-Newton ADMM agents."""

from .engine import HyperParams, Network, RunTrace, Schedule, run
from .graph import NetworkGraph, build_incidence, complete_graph, path_graph, ring_graph
from .objective import CompositeProblem, L1Regularizer, LogisticCost, QuadraticCost

__all__ = [
    "CompositeProblem", "HyperParams", "L1Regularizer", "LogisticCost", "Network", "NetworkGraph",
    "QuadraticCost", "RunTrace", "Schedule", "build_incidence", "complete_graph", "path_graph",
    "ring_graph", "run",
]
