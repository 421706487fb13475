"""LIBSVM datasets: loading, row partitioning across agents, feature scaling."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp


class DataError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    X: sp.csr_matrix
    y: np.ndarray
    scale: np.ndarray | None = None

    def __post_init__(self):
        if self.X.shape[0] == 0:
            raise DataError("dataset is empty")
        if self.X.shape[0] != self.y.size:
            raise DataError("row count of X and y differ")

    @property
    def dim(self) -> int:
        return self.X.shape[1]

    def __len__(self) -> int:
        return self.y.size

    def rows(self, idx) -> "Dataset":
        idx = np.asarray(idx, dtype=int)
        return Dataset(self.X[idx], self.y[idx], self.scale)

    def take_first(self, n: int) -> "Dataset":
        return self.rows(np.arange(min(n, len(self))))

    def sample(self, n: int, seed: int) -> "Dataset":
        rng = np.random.default_rng(seed)
        return self.rows(np.sort(rng.choice(len(self), size=min(n, len(self)), replace=False)))


def remap_labels(raw: np.ndarray) -> np.ndarray:
    """{0,1} labels pass through; otherwise the smallest raw label maps to 0 and all others to 1."""
    uniq = np.unique(raw)
    if np.all(np.isin(uniq, (0.0, 1.0))):
        return raw.astype(float)
    return (raw != uniq[0]).astype(float)


def load_libsvm(path, n_features: int | None = None) -> Dataset:
    """Parse ``label idx:val idx:val ...`` lines with 1-based feature indices."""
    path = Path(path)
    labels, indptr, indices, values = [], [0], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            try:
                labels.append(float(tokens[0]))
                for tok in tokens[1:]:
                    idx, val = tok.split(":")
                    idx = int(idx)
                    if idx < 1 or (n_features is not None and idx > n_features):
                        raise DataError(f"{path}:{lineno}: feature index {idx} out of range")
                    indices.append(idx - 1)
                    values.append(float(val))
            except DataError:
                raise
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: malformed line ({exc})") from None
            indptr.append(len(indices))
    if not labels:
        raise DataError(f"{path}: no data rows")
    dim = n_features if n_features is not None else (max(indices) + 1 if indices else 0)
    X = sp.csr_matrix((values, indices, indptr), shape=(len(labels), dim))
    X.sort_indices()
    return Dataset(X, remap_labels(np.asarray(labels)))


def write_libsvm(ds: Dataset, path) -> None:
    with open(path, "w") as fh:
        for r in range(len(ds)):
            lo, hi = ds.X.indptr[r], ds.X.indptr[r + 1]
            feats = " ".join(f"{j + 1}:{float(v)!r}" for j, v in zip(ds.X.indices[lo:hi], ds.X.data[lo:hi]))
            label = int(ds.y[r]) if float(ds.y[r]).is_integer() else repr(float(ds.y[r]))
            fh.write(f"{label} {feats}\n" if feats else f"{label}\n")


def partition(ds: Dataset, m: int, mode: str = "contiguous", seed: int = 0) -> list[Dataset]:
    """Split rows into ``m`` parts whose sizes differ by at most one."""
    if m < 1 or m > len(ds):
        raise DataError(f"cannot split {len(ds)} rows across {m} agents")
    if mode == "contiguous":
        order = np.arange(len(ds))
    elif mode == "shuffled":
        order = np.random.default_rng(seed).permutation(len(ds))
    else:
        raise DataError(f"partition mode must be 'contiguous' or 'shuffled', got {mode!r}")
    return [ds.rows(part) for part in np.array_split(order, m)]


def scale_features(ds: Dataset, mode: str = "max-abs") -> Dataset:
    """Divide each column by its largest magnitude (zero columns untouched)."""
    if mode == "none":
        return Dataset(ds.X, ds.y, np.ones(ds.dim))
    if mode != "max-abs":
        raise DataError(f"scaling mode must be 'none' or 'max-abs', got {mode!r}")
    col_max = np.asarray(abs(ds.X).max(axis=0).todense()).ravel()
    scale = np.where(col_max > 0, col_max, 1.0)
    X = sp.csr_matrix(ds.X @ sp.diags(1.0 / scale))
    return Dataset(X, ds.y, scale)
