"""Dense 3-tensors: the database tensor, slices and fibers, matrix rank, and
heuristic CP rank estimation.

Matrices and 3-tensors are plain float64 ``numpy`` arrays (C order, so the
flattened data is row-major with the last index fastest).
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .db import Database, stats


def db_tensor(db: Database) -> np.ndarray:
    """0/1 tensor of shape (|K|, |Q|, |V|) with a 1 at every triple."""
    D = np.zeros((len(db.K), len(db.Q), len(db.V)))
    ki, qi, vi = db.index_arrays()
    D[ki, qi, vi] = 1.0
    return D


def slice_(t: np.ndarray, axis: int, index: int) -> np.ndarray:
    """Slice with one index fixed; ``axis`` is 1-based (1 -> D[k,:,:])."""
    if axis not in (1, 2, 3):
        raise ValueError(f"axis must be 1, 2 or 3, got {axis}")
    n = t.shape[axis - 1]
    if not 0 <= index < n:
        raise IndexError(f"index {index} out of range for axis {axis} of size {n}")
    return np.take(t, index, axis=axis - 1)


def fiber(t: np.ndarray, i: int | None, j: int | None, k: int | None) -> np.ndarray:
    """Vector with exactly two indices fixed; pass ``None`` for the free one."""
    idx = [i, j, k]
    if sum(x is None for x in idx) != 1:
        raise ValueError("exactly one index must be None")
    key = []
    for ax, x in enumerate(idx):
        if x is None:
            key.append(slice(None))
        else:
            if not 0 <= x < t.shape[ax]:
                raise IndexError(f"index {x} out of range for axis {ax + 1}")
            key.append(x)
    return t[tuple(key)]


def exact_rank(m: np.ndarray) -> int:
    """Rank of an integer matrix by fraction-free (Bareiss) elimination."""
    rows = [[int(x) for x in row] for row in np.asarray(m)]
    if not rows or not rows[0]:
        return 0
    nr, nc = len(rows), len(rows[0])
    rank = 0
    prev = 1
    for c in range(nc):
        piv = next((r for r in range(rank, nr) if rows[r][c] != 0), None)
        if piv is None:
            continue
        rows[rank], rows[piv] = rows[piv], rows[rank]
        p = rows[rank][c]
        for r in range(rank + 1, nr):
            f = rows[r][c]
            rows[r] = [(p * rows[r][j] - f * rows[rank][j]) // prev for j in range(nc)]
        prev = p
        rank += 1
        if rank == nr:
            break
    return rank


def matrix_rank(m: np.ndarray, tol: float | str = "auto") -> int:
    """Number of singular values above ``tol``.

    ``"auto"`` uses max(rows, cols) * eps * largest singular value. Matrices
    whose entries are all 0 or 1 are ranked by exact integer elimination.
    """
    m = np.asarray(m, dtype=float)
    if m.ndim != 2:
        raise ValueError(f"expected a matrix, got shape {m.shape}")
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix has non-finite entries")
    if m.size == 0:
        return 0
    s = np.linalg.svd(m, compute_uv=False)
    if tol == "auto":
        tol = max(m.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    if np.all((m == 0) | (m == 1)):
        return exact_rank(m)
    return int(np.sum(s > tol))


def db_rank_upper_bound(db: Database) -> int:
    s = stats(db)
    return min(s.sum_Vk, s.sum_Vq)


@dataclass
class CPFactors:
    rank: int
    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    residual: float

    def reconstruct(self) -> np.ndarray:
        return np.einsum("is,js,ks->ijk", self.A, self.B, self.C)


@dataclass(frozen=True)
class CPConfig:
    max_iters: int = 500
    restarts: int = 20
    seed: int = 0
    conv_tol: float = 1e-9
    fit_tol: float = 1e-6


def _als_run(t, r, rng, max_iters, conv_tol, history=None):
    d1, d2, d3 = t.shape
    norm = np.linalg.norm(t)
    A, B, C = (rng.standard_normal((d, r)) / np.sqrt(r) for d in (d1, d2, d3))
    prev = np.inf
    res = np.inf
    for _ in range(max_iters):
        A = np.einsum("ijk,js,ks->is", t, B, C) @ np.linalg.pinv((B.T @ B) * (C.T @ C))
        B = np.einsum("ijk,is,ks->js", t, A, C) @ np.linalg.pinv((A.T @ A) * (C.T @ C))
        C = np.einsum("ijk,is,js->ks", t, A, B) @ np.linalg.pinv((A.T @ A) * (B.T @ B))
        res = np.linalg.norm(t - np.einsum("is,js,ks->ijk", A, B, C)) / norm
        if history is not None:
            history.append(res)
        if abs(prev - res) < conv_tol:
            break
        prev = res
    return A, B, C, float(res)


def cp_als(t: np.ndarray, r: int, cfg: CPConfig = CPConfig(), history: list | None = None) -> CPFactors:
    """Best rank-``r`` CP fit over ``cfg.restarts`` random starts.

    Each restart alternates exact least-squares updates of one factor matrix.
    The returned residual is ||t - reconstruction||_F / ||t||_F. If
    ``history`` is given it receives one list of per-iteration residuals per
    restart.
    """
    t = np.asarray(t, dtype=float)
    if t.ndim != 3:
        raise ValueError(f"expected a 3-tensor, got shape {t.shape}")
    d1, d2, d3 = t.shape
    norm = np.linalg.norm(t)
    if r == 0:
        if norm > 0:
            raise ValueError("rank 0 cannot fit a nonzero tensor")
        return CPFactors(0, np.zeros((d1, 0)), np.zeros((d2, 0)), np.zeros((d3, 0)), 0.0)
    if r > min(d1 * d2, d1 * d3, d2 * d3):
        raise ValueError(f"rank {r} exceeds the generic maximum for shape {t.shape}")
    if norm == 0:
        z = CPFactors(r, np.zeros((d1, r)), np.zeros((d2, r)), np.zeros((d3, r)), 0.0)
        return z
    # one child stream per restart, so restart i is reproducible on its own
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.restarts)
    best = None
    for ss in streams:
        h = [] if history is not None else None
        A, B, C, res = _als_run(t, r, np.random.default_rng(ss), cfg.max_iters, cfg.conv_tol, h)
        if history is not None:
            history.append(h)
        if best is None or res < best.residual:
            best = CPFactors(r, A, B, C, res)
        if res < cfg.fit_tol * 1e-3:
            break
    return best


class RankExceeded(Exception):
    """No CP fit with rank <= r_max reached the fit tolerance."""

    def __init__(self, r_max: int, best_residual: float):
        super().__init__(f"no rank <= {r_max} fits (best residual {best_residual:.3g})")
        self.r_max = r_max
        self.best_residual = best_residual


def tensor_rank_estimate(t: np.ndarray, r_max: int, cfg: CPConfig = CPConfig()) -> int:
    """Smallest r <= r_max whose best CP-ALS fit has residual below
    ``cfg.fit_tol``.

    This is a heuristic: ALS can miss a fit that exists, so the answer is an
    upper-bound-style estimate, never a certificate.
    """
    if r_max < 1:
        raise ValueError("r_max must be >= 1")
    t = np.asarray(t, dtype=float)
    if not np.any(t):
        return 0
    best = np.inf
    for r in range(1, r_max + 1):
        if r > min(t.shape[0] * t.shape[1], t.shape[0] * t.shape[2], t.shape[1] * t.shape[2]):
            break
        f = cp_als(t, r, cfg)
        best = min(best, f.residual)
        if f.residual < cfg.fit_tol:
            return r
    raise RankExceeded(r_max, best)


def tensor_to_json(t: np.ndarray) -> str:
    t = np.asarray(t, dtype=float)
    return json.dumps({"dims": list(t.shape), "data": t.ravel().tolist()})


def tensor_from_json(s: str) -> np.ndarray:
    obj = json.loads(s)
    dims = tuple(obj["dims"])
    data = np.asarray(obj["data"], dtype=float)
    if data.size != int(np.prod(dims)):
        raise ValueError(f"data length {data.size} does not match dims {dims}")
    return data.reshape(dims)
