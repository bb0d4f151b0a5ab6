"""Pseudo-ground-truth abundances from k-means segmentation of pixel spectra."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .hsi import DataError, check_abundances, load_matrix_csv

EXTERNAL_ASC_TOL = 1e-3


@dataclass
class KMeansResult:
    centroids: np.ndarray  # B x K
    labels: np.ndarray     # length N, values in [0, K)
    inertia: float
    n_iter: int = 0
    inertia_history: list[float] = field(default_factory=list)


def _sq_distances(X: np.ndarray, C: np.ndarray) -> np.ndarray:
    """Squared distances, points X (N x B) to centroids C (K x B) -> N x K."""
    # direct differences (no |x|^2 - 2x.c + |c|^2 expansion) keep Lloyd's cost monotone in floats
    d = np.empty((X.shape[0], C.shape[0]))
    for k in range(C.shape[0]):
        d[:, k] = ((X - C[k]) ** 2).sum(axis=1)
    return d


def _kmeans_pp(X: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    N = X.shape[0]
    centers = [X[rng.integers(N)]]
    closest = _sq_distances(X, np.asarray(centers))[:, 0]
    for _ in range(1, K):
        total = closest.sum()
        if total <= 0:
            # all remaining points coincide with chosen centers
            idx = rng.integers(N)
        else:
            idx = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            idx = min(idx, N - 1)
        centers.append(X[idx])
        closest = np.minimum(closest, _sq_distances(X, X[idx:idx + 1])[:, 0])
    return np.asarray(centers)


def kmeans(Y: np.ndarray, K: int, seed: int = 0, max_iter: int = 300, tol: float = 1e-6,
           check_monotone: bool = False) -> KMeansResult:
    """Lloyd's algorithm with k-means++ seeding on the columns of ``Y`` (B x N).

    Stops when the largest centroid shift, relative to the data scale, drops
    below ``tol``. An empty cluster is re-seeded at the point farthest from its
    current centroid.
    """
    Y = np.asarray(Y, dtype=np.float64)
    X = Y.T
    N = X.shape[0]
    if not 1 <= K <= N:
        raise ValueError(f"need 1 <= K <= N, got K={K}, N={N}")
    rng = np.random.default_rng(seed)
    C = _kmeans_pp(X, K, rng)
    scale = max(float(np.abs(X).max()), 1e-12)
    history: list[float] = []
    labels = np.zeros(N, dtype=np.int64)
    it = 0
    for it in range(1, max_iter + 1):
        d = _sq_distances(X, C)
        labels = d.argmin(axis=1)
        point_cost = d[np.arange(N), labels]
        history.append(float(point_cost.sum()))
        if check_monotone and len(history) > 1:
            assert history[-1] <= history[-2], history[-2:]
        newC = np.empty_like(C)
        counts = np.bincount(labels, minlength=K)
        for k in range(K):
            if counts[k]:
                newC[k] = X[labels == k].mean(axis=0)
            else:
                far = int(point_cost.argmax())
                newC[k] = X[far]
                labels[far] = k
                point_cost[far] = 0.0
        shift = float(np.sqrt(((newC - C) ** 2).sum(axis=1)).max()) / scale
        C = newC
        if shift < tol:
            break
    d = _sq_distances(X, C)
    labels = d.argmin(axis=1)
    # same summation order as the history entries
    inertia = float(d[np.arange(N), labels].sum())
    return KMeansResult(C.T.copy(), labels, inertia, it, history)


def one_hot_pseudo_gt(labels: np.ndarray, K: int) -> np.ndarray:
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= K):
        raise ValueError(f"labels must lie in [0, {K})")
    L = np.zeros((K, labels.size))
    L[labels, np.arange(labels.size)] = 1.0
    return L


def kmeans_pseudo_gt(Y: np.ndarray, K: int, seed: int = 0) -> np.ndarray:
    return one_hot_pseudo_gt(kmeans(Y, K, seed=seed).labels, K)


def load_external_pgt(path, K: int, N: int) -> np.ndarray:
    """Read a K x N abundance CSV produced by another unmixing method.

    Columns within 1e-3 of summing to one are renormalised; anything further
    off is treated as corrupt.
    """
    S = load_matrix_csv(path)
    if S.shape != (K, N):
        raise DataError(f"{path}: expected shape {(K, N)}, got {S.shape}")
    sums = S.sum(axis=0)
    bad = np.abs(sums - 1.0) > EXTERNAL_ASC_TOL
    if bad.any():
        j = int(np.argmax(bad))
        raise DataError(f"{path}: column {j} sums to {sums[j]:.6g}")
    S = np.clip(S / sums, 0.0, 1.0)
    return check_abundances(S / S.sum(axis=0))
