"""Row-wise argmax/softmax and the accuracy measures built on them.

Accuracy functions take a layer tensor ``L`` of shape (|K|, |Q|, |V|) whose
axes follow the database's K, Q, V orders, and score only the fibers of
pairs (k, q) that occur in the database.
"""
from __future__ import annotations

import numpy as np

from .db import Database


def argmax_rows(m: np.ndarray) -> np.ndarray:
    """1 wherever an entry equals its row maximum (ties give several 1s)."""
    m = np.asarray(m, dtype=float)
    return (m == m.max(axis=-1, keepdims=True)).astype(float)


def softmax_rows(m: np.ndarray) -> np.ndarray:
    m = np.asarray(m, dtype=float)
    z = np.exp(m - m.max(axis=-1, keepdims=True))
    return z / z.sum(axis=-1, keepdims=True)


def check_tau(tau: float) -> float:
    tau = float(tau)
    if not 0.5 <= tau <= 1.0:
        raise ValueError(f"tau must lie in [0.5, 1], got {tau}")
    return tau


def softmax_threshold(m: np.ndarray, tau: float) -> np.ndarray:
    """Indicator of softmax probabilities that reach ``tau``.

    At tau = 1 every finite row is all zeros: a probability of exactly 1 would
    need the other logits to be -inf, so it is never counted as reached even
    when it rounds to 1.0 in floating point.
    """
    tau = check_tau(tau)
    if tau == 1.0:
        return np.zeros_like(np.asarray(m, dtype=float))
    return (softmax_rows(m) >= tau).astype(float)


def _fibers(L: np.ndarray, db: Database) -> tuple[np.ndarray, np.ndarray]:
    L = np.asarray(L, dtype=float)
    if L.shape != (len(db.K), len(db.Q), len(db.V)):
        raise ValueError(
            f"L has shape {L.shape}, database needs {(len(db.K), len(db.Q), len(db.V))}"
        )
    ki, qi, vi = db.index_arrays()
    return L[ki, qi], vi


def tau_accuracy(L: np.ndarray, db: Database, tau: float) -> float:
    """Fraction of triples whose object gets softmax probability >= tau."""
    rows, vi = _fibers(L, db)
    hits = softmax_threshold(rows, tau)[np.arange(len(vi)), vi]
    return float(hits.mean())


def memorizes(L: np.ndarray, db: Database, tau: float) -> bool:
    return tau_accuracy(L, db, tau) == 1.0


def argmax_accuracy(L: np.ndarray, db: Database) -> float:
    """Fraction of triples whose object is the unique maximum of its fiber."""
    rows, vi = _fibers(L, db)
    n = len(vi)
    target = rows[np.arange(n), vi]
    others = rows.copy()
    others[np.arange(n), vi] = -np.inf
    if rows.shape[1] == 1:
        return 1.0
    return float(np.mean(target > others.max(axis=1)))


def accuracy_table(L: np.ndarray, db: Database, taus) -> dict:
    """Argmax accuracy plus tau-accuracy for each tau, keyed ``"argmax"`` and by tau."""
    out = {"argmax": argmax_accuracy(L, db)}
    for t in taus:
        out[float(t)] = tau_accuracy(L, db, t)
    return out
