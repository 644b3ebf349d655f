"""Constructions showing that row-wise argmax and softmax can raise matrix rank.

A Gram matrix of n distinct unit vectors in R^r has rank r, a unit diagonal
and off-diagonal entries below 1, so its row-wise argmax is the n x n
identity. Scaling it by a large enough c makes exp(cM) strictly diagonally
dominant, which makes softmax(cM) invertible.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .metrics import argmax_rows, softmax_rows, softmax_threshold
from .tensor import matrix_rank

OVERFLOW_EXPONENT = 700.0


@dataclass(frozen=True)
class SpherePointSet:
    points: np.ndarray  # (n, r), unit rows
    min_pairwise_gap: float

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def r(self) -> int:
        return self.points.shape[1]


def _min_gap(pts: np.ndarray) -> float:
    G = pts @ pts.T
    n = len(G)
    if n < 2:
        return math.inf
    off = G[~np.eye(n, dtype=bool)]
    return float(1.0 - off.max())


def sphere_points(n: int, r: int, seed: int = 0, min_gap: float = 1e-3,
                  basis: bool = False, max_tries: int = 1000) -> SpherePointSet:
    """``n`` distinct unit vectors in R^r spanning the space.

    Draws are normalized standard normals, rejected until every pair has
    1 - <v_i, v_j> >= ``min_gap`` and the points have full column rank.
    ``basis=True`` (requires n == r) returns the standard basis instead.
    """
    if not n >= r >= 2:
        raise ValueError(f"need n >= r >= 2, got n={n}, r={r}")
    if basis:
        if n != r:
            raise ValueError("basis mode needs n == r")
        pts = np.eye(n)
        return SpherePointSet(pts, _min_gap(pts))
    rng = np.random.default_rng(seed)
    for _ in range(max_tries):
        pts = rng.standard_normal((n, r))
        pts /= np.linalg.norm(pts, axis=1, keepdims=True)
        gap = _min_gap(pts)
        if gap >= min_gap and matrix_rank(pts) == r:
            return SpherePointSet(pts, gap)
    raise RuntimeError(f"no acceptable point set for n={n}, r={r}, min_gap={min_gap} "
                       f"after {max_tries} draws")


def gram(pts: SpherePointSet) -> np.ndarray:
    G = pts.points @ pts.points.T
    G = (G + G.T) / 2
    np.fill_diagonal(G, 1.0)
    return G


class ScaleUnreachable(ArithmeticError):
    """The dominance scale would overflow exp()."""

    def __init__(self, needed: float, limit: float):
        super().__init__(f"scale {needed:.4g} exceeds overflow guard {limit:.4g}")
        self.needed = needed
        self.limit = limit


def _dominant(m: np.ndarray, c: float) -> bool:
    # compare exp(c*M_ii) against sum_{j != i} exp(c*M_ij) after dividing by exp(c*M_ii)
    rel = np.exp(c * (m - np.diag(m)[:, None]))
    np.fill_diagonal(rel, 0.0)
    return bool(np.all(rel.sum(axis=1) < 1.0))


def dominance_scale(m: np.ndarray, resolution: float = 1e-3) -> float:
    """Smallest c (to within ``resolution``) making exp(c*M) strictly row
    diagonally dominant.

    Doubles c from ``resolution`` until dominance holds, then bisects.
    Raises :class:`ScaleUnreachable` once c * max|M| would pass 700.
    """
    m = np.asarray(m, dtype=float)
    n = m.shape[0]
    if m.ndim != 2 or m.shape[1] != n:
        raise ValueError("expected a square matrix")
    off = m[~np.eye(n, dtype=bool)].reshape(n, n - 1) if n > 1 else np.zeros((n, 0))
    if n > 1 and not np.all(np.diag(m)[:, None] > off):
        raise ValueError("diagonal must strictly exceed every off-diagonal entry in its row")
    scale_max = np.abs(m).max()
    limit = OVERFLOW_EXPONENT / scale_max if scale_max > 0 else math.inf
    hi = resolution
    while not _dominant(m, hi):
        hi *= 2.0
        if hi > limit:
            raise ScaleUnreachable(hi, limit)
    lo = hi / 2.0
    if lo < resolution:
        return hi
    while hi - lo > resolution:
        mid = (lo + hi) / 2.0
        if _dominant(m, mid):
            hi = mid
        else:
            lo = mid
    return hi


@dataclass
class RankDistortion:
    n: int
    r: int
    seed: int
    scale: float
    rank_M: int
    rank_argmax: int
    rank_softmax: int
    rank_threshold: dict = field(default_factory=dict)  # tau -> rank

    def rows(self) -> list[tuple[str, int]]:
        out = [("M", self.rank_M), ("argmax(M)", self.rank_argmax), ("softmax(cM)", self.rank_softmax)]
        out += [(f"softmax_>={t}(cM)", k) for t, k in self.rank_threshold.items()]
        return out


def rank_distortion_report(n: int, r: int, taus=(0.5, 0.75, 0.95, 0.99), seed: int = 0,
                           basis: bool = False) -> RankDistortion:
    pts = sphere_points(n, r, seed, basis=basis)
    M = gram(pts)
    c = dominance_scale(M)
    S = c * M
    return RankDistortion(
        n=n, r=r, seed=seed, scale=c,
        rank_M=matrix_rank(M),
        rank_argmax=matrix_rank(argmax_rows(M)),
        rank_softmax=matrix_rank(softmax_rows(S)),
        rank_threshold={float(t): matrix_rank(softmax_threshold(S, t)) for t in taus},
    )
