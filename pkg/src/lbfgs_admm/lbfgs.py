"""Limited-memory BFGS storage and the two-loop inverse-Hessian product."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

CURVATURE_GUARD = 1e-12


@dataclass(frozen=True)
class CurvaturePair:
    s: np.ndarray
    q: np.ndarray
    rho: float

    @classmethod
    def from_vectors(cls, s, q) -> "CurvaturePair":
        s = np.array(s, dtype=float)
        q = np.array(q, dtype=float)
        return cls(s, q, 1.0 / float(s @ q))

    @property
    def ratio(self) -> float:
        """||q||^2 / <q, s>, the curvature measured along s."""
        return float(self.q @ self.q) * self.rho


def curvature_ok(s: np.ndarray, q: np.ndarray, kappa: float = CURVATURE_GUARD) -> bool:
    sq = float(s @ q)
    return sq > kappa * float(np.linalg.norm(s) * np.linalg.norm(q)) and sq > 0.0


def two_loop(pairs: Sequence[CurvaturePair], h: np.ndarray, init_scale: float) -> np.ndarray:
    """Apply the L-BFGS inverse-Hessian estimate to ``h``.

    ``pairs`` is ordered oldest first. The seed matrix is ``init_scale * I``.
    """
    r = np.array(h, dtype=float)
    alphas = np.empty(len(pairs))
    for k in range(len(pairs) - 1, -1, -1):
        p = pairs[k]
        alphas[k] = p.rho * (p.s @ r)
        r -= alphas[k] * p.q
    r *= init_scale
    for k, p in enumerate(pairs):
        beta = p.rho * (p.q @ r)
        r += (alphas[k] - beta) * p.s
    return r


def dense_inverse(pairs: Iterable[CurvaturePair], init_scale: float, d: int) -> np.ndarray:
    """Explicit inverse estimate from the product-form BFGS recursion.

    Reference implementation for testing; O(c d^3).
    """
    hinv = init_scale * np.eye(d)
    eye = np.eye(d)
    for p in pairs:
        v = eye - p.rho * np.outer(p.q, p.s)
        hinv = v.T @ hinv @ v + p.rho * np.outer(p.s, p.s)
    return hinv


def dense_hessian(pairs: Iterable[CurvaturePair], init_scale: float, d: int) -> np.ndarray:
    """Direct BFGS update of the Hessian estimate, seeded with ``I / init_scale``."""
    hess = np.eye(d) / init_scale
    for p in pairs:
        hs = hess @ p.s
        hess = hess - hs[:, None] * (hs / (p.s @ hs)) + p.q[:, None] * (p.rho * p.q)
    return hess


@dataclass
class LbfgsMemory:
    capacity: int
    pairs: deque = field(init=False)
    skipped: int = 0

    def __post_init__(self):
        if self.capacity < 0:
            raise ValueError("capacity must be nonnegative")
        self.pairs = deque(maxlen=self.capacity)

    def __len__(self):
        return len(self.pairs)

    def push(self, s, q) -> bool:
        """Store a pair, evicting the oldest at capacity.

        Pairs failing the curvature guard are dropped and counted in
        ``skipped``; returns whether the pair was kept.
        """
        s = np.asarray(s, dtype=float)
        q = np.asarray(q, dtype=float)
        if s.shape != q.shape:
            raise ValueError(f"s and q shapes differ: {s.shape} vs {q.shape}")
        if not curvature_ok(s, q):
            self.skipped += 1
            return False
        if self.capacity:
            self.pairs.append(CurvaturePair.from_vectors(s, q))
        return True

    def adaptive_scale(self, fallback: float) -> float:
        """<s, q> / <q, q> of the newest pair, or ``fallback`` when empty."""
        if not self.pairs:
            return fallback
        p = self.pairs[-1]
        return float(p.s @ p.q) / float(p.q @ p.q)

    def two_loop(self, h, init_scale: float) -> np.ndarray:
        if init_scale <= 0:
            raise ValueError("init_scale must be positive")
        return two_loop(self.pairs, h, init_scale)

    def dense_inverse(self, init_scale: float, d: int | None = None) -> np.ndarray:
        if d is None:
            if not self.pairs:
                raise ValueError("dimension needed for an empty memory")
            d = self.pairs[0].s.size
        return dense_inverse(self.pairs, init_scale, d)

    def snapshot(self) -> tuple[CurvaturePair, ...]:
        return tuple(self.pairs)
