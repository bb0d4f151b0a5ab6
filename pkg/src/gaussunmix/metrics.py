"""Abundance and endmember error metrics, plus source alignment."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

EPS = 1e-7

METRIC_NAMES = ("armse", "aaad", "aaid", "asad", "asid")


@dataclass
class EvalReport:
    armse: float
    aaad: float
    aaid: float
    asad: float
    asid: float
    permutation: list[int]

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2) + "\n"

    def csv_header(self) -> str:
        return ",".join(METRIC_NAMES) + ",permutation"

    def csv_row(self) -> str:
        vals = ",".join(repr(float(getattr(self, m))) for m in METRIC_NAMES)
        return vals + "," + " ".join(str(p) for p in self.permutation)


def _columns_angle(X: np.ndarray, Xhat: np.ndarray) -> np.ndarray:
    nx = np.linalg.norm(X, axis=0)
    nh = np.linalg.norm(Xhat, axis=0)
    if np.any(nx == 0) or np.any(nh == 0):
        raise ValueError("angle undefined for zero-norm columns")
    cos = np.sum(X * Xhat, axis=0) / (nx * nh)
    return np.arccos(np.clip(cos, -1.0, 1.0))


def _sym_kl_columns(P: np.ndarray, Q: np.ndarray) -> np.ndarray:
    P = np.maximum(P, EPS)
    Q = np.maximum(Q, EPS)
    return np.sum((P - Q) * (np.log(P) - np.log(Q)), axis=0)


def _to_probabilities(X: np.ndarray) -> np.ndarray:
    norms = np.abs(X).sum(axis=0)
    if np.any(norms == 0):
        raise ValueError("zero-norm spectrum cannot be normalised")
    return X / norms


def sad_matrix(A: np.ndarray, Ahat: np.ndarray) -> np.ndarray:
    """Spectral angle between every true column i and estimated column j."""
    na = np.linalg.norm(A, axis=0)
    nh = np.linalg.norm(Ahat, axis=0)
    if np.any(na == 0) or np.any(nh == 0):
        raise ValueError("angle undefined for zero-norm columns")
    cos = (A.T @ Ahat) / np.outer(na, nh)
    return np.arccos(np.clip(cos, -1.0, 1.0))


def _optimal_cost(cost: np.ndarray) -> float:
    if cost.size == 0:
        return 0.0
    rows, cols = linear_sum_assignment(cost)
    return float(cost[rows, cols].sum())


def assignment(cost: np.ndarray, rtol: float = 1e-12) -> np.ndarray:
    """Minimum-cost bijection: ``perm[i]`` is the column assigned to row i.

    Among optimal bijections the lexicographically smallest is returned (ties
    go to the lowest column index): rows are fixed in order, each to the first
    column that still admits an optimal completion.
    """
    cost = np.asarray(cost, dtype=np.float64)
    K = cost.shape[0]
    best = _optimal_cost(cost)
    slack = rtol * max(1.0, abs(best))
    rows, cols = list(range(K)), list(range(K))
    perm = np.empty(K, dtype=np.int64)
    fixed = 0.0
    for i in range(K):
        rows.remove(i)
        for j in sorted(cols):
            rest = [c for c in cols if c != j]
            if fixed + cost[i, j] + _optimal_cost(cost[np.ix_(rows, rest)]) <= best + slack:
                perm[i] = j
                fixed += cost[i, j]
                cols = rest
                break
    return perm


def align(A_true: np.ndarray, A_est: np.ndarray) -> np.ndarray:
    """Permutation with ``A_est[:, perm]`` matched to ``A_true`` by minimum total SAD."""
    if A_true.shape != A_est.shape:
        raise ValueError(f"shape mismatch {A_true.shape} vs {A_est.shape}")
    return assignment(sad_matrix(A_true, A_est))


def armse(S, Shat) -> float:
    S, Shat = np.asarray(S, float), np.asarray(Shat, float)
    K, N = S.shape
    return float(np.sqrt(np.sum((S - Shat) ** 2) / (N * K)))


def aaad(S, Shat) -> float:
    return float(np.mean(_columns_angle(np.asarray(S, float), np.asarray(Shat, float))))


def aaid(S, Shat) -> float:
    return float(np.mean(_sym_kl_columns(np.asarray(S, float), np.asarray(Shat, float))))


def asad(A, Ahat) -> float:
    return float(np.mean(_columns_angle(np.asarray(A, float), np.asarray(Ahat, float))))


def asid(A, Ahat) -> float:
    P = _to_probabilities(np.asarray(A, float))
    Phat = _to_probabilities(np.asarray(Ahat, float))
    return float(np.mean(_sym_kl_columns(P, Phat)))


def evaluate(S, Shat, A, Ahat) -> EvalReport:
    """Align sources once on endmembers, then score both abundance and endmember estimates."""
    perm = align(np.asarray(A, float), np.asarray(Ahat, float))
    Shat_a = np.asarray(Shat, float)[perm]
    Ahat_a = np.asarray(Ahat, float)[:, perm]
    return EvalReport(
        armse=armse(S, Shat_a),
        aaad=aaad(S, Shat_a),
        aaid=aaid(S, Shat_a),
        asad=asad(A, Ahat_a),
        asid=asid(A, Ahat_a),
        permutation=[int(p) for p in perm],
    )
