"""Local smooth costs, the shared regularizer, and their oracles."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.sparse as sp
from scipy.special import expit, log_expit

DEFAULT_RIDGE = 1e-6


class LocalCost:
    """Smooth strongly convex local term f_i.

    Subclasses provide ``value``, ``gradient`` and ``hessian``, and expose the
    curvature bounds ``m_f`` / ``M_f`` (``None`` when unknown).
    """

    dim: int
    m_f: float | None = None
    M_f: float | None = None

    def value(self, w: np.ndarray) -> float:
        raise NotImplementedError

    def gradient(self, w: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def hessian(self, w: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def values(self, W: np.ndarray) -> np.ndarray:
        """``value`` at each row of ``W``."""
        return np.array([self.value(w) for w in W])


class QuadraticCost(LocalCost):
    """0.5 w'Qw - b'w + const."""

    def __init__(self, Q, b, const: float = 0.0):
        Q = np.array(Q, dtype=float)
        b = np.array(b, dtype=float)
        if Q.ndim != 2 or Q.shape[0] != Q.shape[1] or Q.shape[0] != b.size:
            raise ValueError("Q must be square and match b")
        if not np.allclose(Q, Q.T, rtol=0, atol=1e-12 * max(1.0, np.abs(Q).max())):
            raise ValueError("Q must be symmetric")
        eig = np.linalg.eigvalsh(Q)
        if eig[0] <= 0:
            raise ValueError(f"Q must be positive definite (min eigenvalue {eig[0]:.3g})")
        self.Q, self.b, self.const = Q, b, float(const)
        self.dim = b.size
        self.m_f, self.M_f = float(eig[0]), float(eig[-1])

    def value(self, w):
        return 0.5 * float(w @ self.Q @ w) - float(self.b @ w) + self.const

    def gradient(self, w):
        return self.Q @ w - self.b

    def values(self, W):
        W = np.atleast_2d(W)
        return 0.5 * np.einsum("ij,jk,ik->i", W, self.Q, W) - W @ self.b + self.const

    def hessian(self, w):
        return self.Q

    def minimizer(self) -> np.ndarray:
        return np.linalg.solve(self.Q, self.b)


def quadratic_cost(Q, b) -> QuadraticCost:
    return QuadraticCost(Q, b)


class ZeroCost(LocalCost):
    def __init__(self, dim: int):
        self.dim = dim
        self.m_f = self.M_f = 0.0

    def value(self, w):
        return 0.0

    def gradient(self, w):
        return np.zeros(self.dim)

    def hessian(self, w):
        return np.zeros((self.dim, self.dim))


class LogisticCost(LocalCost):
    """weight * ( mean_j[ log(1 + exp(-x_j'w)) + (1 - y_j) x_j'w ] + ridge/2 ||w||^2 ).

    Labels are in {0, 1}; the per-sample term is the negative log-likelihood of
    P(y = 1 | x) = sigmoid(x'w).
    """

    def __init__(self, X, y, ridge: float = DEFAULT_RIDGE, weight: float = 1.0):
        self.X = sp.csr_matrix(X, dtype=float)
        self.y = np.asarray(y, dtype=float)
        if self.X.shape[0] != self.y.size or self.y.size == 0:
            raise ValueError("X and y must be non-empty with matching rows")
        if not np.all((self.y == 0) | (self.y == 1)):
            raise ValueError("labels must be 0 or 1")
        if ridge < 0 or weight <= 0:
            raise ValueError("need ridge >= 0 and weight > 0")
        self.ridge, self.weight = float(ridge), float(weight)
        self.dim = self.X.shape[1]
        self._scale = self.weight / self.y.size
        row_sq = np.asarray(self.X.multiply(self.X).sum(axis=1)).ravel()
        self.m_f = self.weight * self.ridge
        # sigmoid' <= 1/4
        self.M_f = self.weight * (self.ridge + float(row_sq.max()) / 4.0)

    def value(self, w):
        z = self.X @ w
        loss = -log_expit(z) + (1.0 - self.y) * z
        return self._scale * float(loss.sum()) + 0.5 * self.weight * self.ridge * float(w @ w)

    def values(self, W):
        W = np.atleast_2d(W)
        Z = np.asarray(self.X @ W.T)
        loss = -log_expit(Z) + (1.0 - self.y)[:, None] * Z
        return self._scale * loss.sum(axis=0) + 0.5 * self.weight * self.ridge * np.einsum("ij,ij->i", W, W)

    def gradient(self, w):
        z = self.X @ w
        return self._scale * (self.X.T @ (expit(z) - self.y)) + self.weight * self.ridge * w

    def hessian(self, w):
        sig = expit(self.X @ w)
        dmat = sp.diags(sig * (1.0 - sig))
        hess = self._scale * (self.X.T @ dmat @ self.X)
        return np.asarray(hess.todense()) + self.weight * self.ridge * np.eye(self.dim)


def logistic_gradient(cost: LogisticCost, w) -> np.ndarray:
    return cost.gradient(np.asarray(w, dtype=float))


# -- regularizers ------------------------------------------------------------


def prox_l1(v, threshold: float) -> np.ndarray:
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    v = np.asarray(v, dtype=float)
    return np.sign(v) * np.maximum(np.abs(v) - threshold, 0.0)


class Regularizer:
    def value(self, theta) -> float:
        raise NotImplementedError

    def prox(self, v, step: float) -> np.ndarray:
        """argmin_x g(x) + ||x - v||^2 / (2 step)."""
        raise NotImplementedError

    def subgradient_distance(self, theta, lam) -> float:
        """Distance from ``lam`` to the subdifferential of g at ``theta``."""
        raise NotImplementedError


@dataclass(frozen=True)
class L1Regularizer(Regularizer):
    weight: float

    def value(self, theta):
        return self.weight * float(np.abs(theta).sum())

    def prox(self, v, step):
        return prox_l1(v, self.weight * step)

    def subgradient_distance(self, theta, lam):
        theta, lam = np.asarray(theta), np.asarray(lam)
        nz = theta != 0
        res = np.where(nz, lam - self.weight * np.sign(theta),
                       np.maximum(np.abs(lam) - self.weight, 0.0))
        return float(np.linalg.norm(res))


@dataclass(frozen=True)
class ZeroRegularizer(Regularizer):
    def value(self, theta):
        return 0.0

    def prox(self, v, step):
        return np.array(v, dtype=float)

    def subgradient_distance(self, theta, lam):
        return float(np.linalg.norm(lam))


def make_regularizer(weight: float) -> Regularizer:
    return L1Regularizer(weight) if weight > 0 else ZeroRegularizer()


@dataclass
class CompositeProblem:
    """minimize sum_i f_i(w) + g(w) over a common w."""

    costs: Sequence[LocalCost]
    regularizer: Regularizer = field(default_factory=ZeroRegularizer)

    def __post_init__(self):
        dims = {c.dim for c in self.costs}
        if len(dims) != 1:
            raise ValueError(f"local costs disagree on dimension: {sorted(dims)}")

    @property
    def m(self) -> int:
        return len(self.costs)

    @property
    def dim(self) -> int:
        return self.costs[0].dim

    @property
    def m_f(self) -> float | None:
        vals = [c.m_f for c in self.costs]
        return None if any(v is None for v in vals) else min(vals)

    @property
    def M_f(self) -> float | None:
        vals = [c.M_f for c in self.costs]
        return None if any(v is None for v in vals) else max(vals)

    def smooth_value(self, w) -> float:
        return sum(c.value(w) for c in self.costs)

    def smooth_gradient(self, w) -> np.ndarray:
        return sum(c.gradient(w) for c in self.costs)

    def smooth_hessian(self, w) -> np.ndarray:
        return sum(c.hessian(w) for c in self.costs)

    def objective(self, w) -> float:
        return self.smooth_value(w) + self.regularizer.value(w)

    def objectives(self, W) -> np.ndarray:
        """Objective at each row of ``W``."""
        W = np.atleast_2d(W)
        return sum(c.values(W) for c in self.costs) + np.array([self.regularizer.value(w) for w in W])
