"""Single-layer attention-only decoder (no biases, layer norm or positional
encodings) and the tensors that describe it on a database.

Per-head weights are stored stacked along a leading head axis.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .db import Database


@dataclass(frozen=True)
class LayerConfig:
    n_vocab: int
    n_heads: int
    d_model: int
    d_head_qk: int
    d_head_vo: int

    def __post_init__(self):
        if min(self.n_vocab, self.n_heads, self.d_model, self.d_head_qk, self.d_head_vo) < 1:
            raise ValueError(f"all dimensions must be positive: {self}")
        if not (self.d_head_qk <= self.d_model and self.d_head_vo <= self.d_model):
            raise ValueError(f"head dimensions must not exceed d_model: {self}")
        if self.d_model > self.n_vocab:
            raise ValueError(f"d_model must not exceed n_vocab: {self}")

    @property
    def n_params(self) -> int:
        """Non-embedding parameter count."""
        return 2 * self.n_heads * self.d_model * (self.d_head_vo + self.d_head_qk)


@dataclass
class LayerWeights:
    config: LayerConfig
    W_E: np.ndarray  # (n_vocab, d_model)
    W_U: np.ndarray  # (d_model, n_vocab)
    W_Q: np.ndarray  # (n_heads, d_model, d_head_qk)
    W_K: np.ndarray  # (n_heads, d_head_qk, d_model)
    W_V: np.ndarray  # (n_heads, d_model, d_head_vo)
    W_O: np.ndarray  # (n_heads, d_head_vo, d_model)

    NAMES = ("W_E", "W_U", "W_Q", "W_K", "W_V", "W_O")

    def __post_init__(self):
        c = self.config
        H, D = c.n_heads, c.d_model
        expected = {
            "W_E": (c.n_vocab, D),
            "W_U": (D, c.n_vocab),
            "W_Q": (H, D, c.d_head_qk),
            "W_K": (H, c.d_head_qk, D),
            "W_V": (H, D, c.d_head_vo),
            "W_O": (H, c.d_head_vo, D),
        }
        for name, shape in expected.items():
            arr = np.asarray(getattr(self, name), dtype=float)
            if arr.shape != shape:
                raise ValueError(f"{name} has shape {arr.shape}, expected {shape}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"{name} has non-finite entries")
            setattr(self, name, arr)

    def params(self) -> dict[str, np.ndarray]:
        return {n: getattr(self, n) for n in self.NAMES}

    def replace(self, **arrays) -> "LayerWeights":
        p = self.params()
        p.update(arrays)
        return LayerWeights(self.config, **p)

    def copy(self) -> "LayerWeights":
        return LayerWeights(self.config, **{n: a.copy() for n, a in self.params().items()})


def init_weights(cfg: LayerConfig, seed: int) -> LayerWeights:
    """I.i.d. normal entries with standard deviation 1/sqrt(d_model)."""
    rng = np.random.default_rng(seed)
    std = 1.0 / np.sqrt(cfg.d_model)
    H, D = cfg.n_heads, cfg.d_model
    return LayerWeights(
        cfg,
        W_E=rng.normal(0.0, std, (cfg.n_vocab, D)),
        W_U=rng.normal(0.0, std, (D, cfg.n_vocab)),
        W_Q=rng.normal(0.0, std, (H, D, cfg.d_head_qk)),
        W_K=rng.normal(0.0, std, (H, cfg.d_head_qk, D)),
        W_V=rng.normal(0.0, std, (H, D, cfg.d_head_vo)),
        W_O=rng.normal(0.0, std, (H, cfg.d_head_vo, D)),
    )


@dataclass
class CircuitSet:
    W_EU: np.ndarray  # (n_vocab, n_vocab)
    W_QK: np.ndarray  # (n_heads, n_vocab, n_vocab)
    W_VO: np.ndarray  # (n_heads, n_vocab, n_vocab)


def circuits(w: LayerWeights) -> CircuitSet:
    W_E, W_U = w.W_E, w.W_U
    return CircuitSet(
        W_EU=W_E @ W_U,
        W_QK=W_E @ w.W_Q @ w.W_K @ W_E.T,
        W_VO=W_E @ w.W_V @ w.W_O @ W_U,
    )


def _causal_softmax(S: np.ndarray) -> np.ndarray:
    n = S.shape[-1]
    future = np.triu(np.ones((n, n), dtype=bool), k=1)
    S = np.where(future, -np.inf, S)
    S = S - S.max(axis=-1, keepdims=True)
    P = np.exp(S)
    return P / P.sum(axis=-1, keepdims=True)


def forward_batch(w: LayerWeights, X: np.ndarray, return_cache: bool = False):
    """Logits for a batch of equal-length token sequences.

    ``X`` is an integer array of shape (batch, n); the result has shape
    (batch, n, n_vocab). With ``return_cache`` the intermediates needed by the
    backward pass are returned as well.
    """
    X = np.asarray(X)
    B, n = X.shape
    H = w.config.n_heads
    e = w.W_E[X.reshape(-1)]                           # (B*n, D)
    # head-major layout: (H, B*n, .) so per-head products are plain matmuls
    qr = e @ w.W_Q                                     # (H, B*n, dqk)
    kr = e @ w.W_K.transpose(0, 2, 1)                  # (H, B*n, dqk)
    q4 = qr.reshape(H, B, n, -1)
    k4 = kr.reshape(H, B, n, -1)
    P = _causal_softmax(q4 @ k4.swapaxes(-1, -2))      # (H, B, n, n)
    ev = e @ w.W_V                                     # (H, B*n, dvo)
    vals = (ev @ w.W_O).reshape(H, B, n, -1)           # (H, B, n, D)
    resid = e + (P @ vals).sum(axis=0).reshape(B * n, -1)
    Z = (resid @ w.W_U).reshape(B, n, -1)
    if return_cache:
        return Z, dict(X=X, e=e, q4=q4, k4=k4, P=P, ev=ev, vals=vals, resid=resid)
    return Z


def forward(w: LayerWeights, x) -> np.ndarray:
    """(n, n_vocab) logits for one token sequence of length n >= 1."""
    x = np.asarray(x, dtype=np.intp).reshape(-1)
    if x.size == 0:
        raise ValueError("empty sequence")
    if np.any(x < 0) or np.any(x >= w.config.n_vocab):
        raise ValueError(f"token id out of range for vocabulary of size {w.config.n_vocab}")
    return forward_batch(w, x[None])[0]


def backward_batch(w: LayerWeights, cache: dict, dZ: np.ndarray) -> dict[str, np.ndarray]:
    """Gradients of a scalar with respect to every weight, given dscalar/dZ."""
    X, e, q4, k4, P, ev, vals, resid = (
        cache[k] for k in ("X", "e", "q4", "k4", "P", "ev", "vals", "resid")
    )
    H, B, n, _ = P.shape
    D = e.shape[-1]
    dZ = dZ.reshape(B * n, -1)
    gW_U = resid.T @ dZ
    dres = dZ @ w.W_U.T                                # (B*n, D)
    dres4 = dres.reshape(B, n, D)

    dP = dres4 @ vals.swapaxes(-1, -2)                 # (H, B, n, n)
    dvals = (P.swapaxes(-1, -2) @ dres4).reshape(H, B * n, D)
    gW_O = ev.swapaxes(-1, -2) @ dvals
    dev = dvals @ w.W_O.swapaxes(-1, -2)               # (H, B*n, dvo)
    gW_V = e.T @ dev
    de = dres + (dev @ w.W_V.swapaxes(-1, -2)).sum(axis=0)

    # masked entries have P == 0, so they drop out of the softmax backward
    dS = P * (dP - (dP * P).sum(axis=-1, keepdims=True))
    dq = (dS @ k4).reshape(H, B * n, -1)
    dk = (dS.swapaxes(-1, -2) @ q4).reshape(H, B * n, -1)
    gW_Q = e.T @ dq
    gW_K = dk.swapaxes(-1, -2) @ e
    de += (dq @ w.W_Q.swapaxes(-1, -2)).sum(axis=0) + (dk @ w.W_K).sum(axis=0)

    gW_E = np.zeros_like(w.W_E)
    np.add.at(gW_E, X.reshape(-1), de)
    return dict(W_E=gW_E, W_U=gW_U, W_Q=gW_Q, W_K=gW_K, W_V=gW_V, W_O=gW_O)


# ---------------------------------------------------------------------------
# Tensors aligned to a database


@dataclass
class LayerTensorBundle:
    """A, V, E and L tensors of a layer on a database.

    Axis labels are vocabulary ids: ``k_ids`` for K, ``q_ids`` for Q,
    ``v_ids`` for V and ``t_ids`` for K followed by the predicates not in K.
    """

    E: np.ndarray  # (|K|, |Q|, |V|)
    A: np.ndarray  # (H, |K|, |Q|, |K u Q|)
    V: np.ndarray  # (H, |K u Q|, |Q|, |V|)
    L: np.ndarray  # (|K|, |Q|, |V|)
    k_ids: np.ndarray
    q_ids: np.ndarray
    v_ids: np.ndarray
    t_ids: np.ndarray

    def AV(self) -> np.ndarray:
        """Per-head products (H, |K|, |Q|, |V|); q-slice h is A[h,:,q,:] @ V[h,:,q,:]."""
        return np.einsum("hkqt,htqv->hkqv", self.A, self.V)


def _kq_ids(db: Database) -> np.ndarray:
    k_ids = [t.id for t in db.K]
    seen = set(k_ids)
    return np.array(k_ids + [t.id for t in db.Q if t.id not in seen], dtype=np.intp)


def build_bundle(w: LayerWeights, db: Database, circ: CircuitSet | None = None) -> LayerTensorBundle:
    """Tensors of the layer restricted to the database's index sets.

    Database token ids are used directly as layer vocabulary ids. When
    ``circ`` is given, those circuits are used instead of recomputing them
    from ``w`` (``w`` may then be ``None``).
    """
    if circ is None:
        circ = circuits(w)
    n_vocab = circ.W_EU.shape[0]
    if len(db.vocab) > n_vocab:
        raise ValueError(f"database has {len(db.vocab)} tokens but layer vocabulary has {n_vocab}")
    k_ids = np.array([t.id for t in db.K], dtype=np.intp)
    q_ids = np.array([t.id for t in db.Q], dtype=np.intp)
    v_ids = np.array([t.id for t in db.V], dtype=np.intp)
    t_ids = _kq_ids(db)
    tpos = {int(t): i for i, t in enumerate(t_ids)}
    H = circ.W_QK.shape[0]
    nK, nQ, nV, nT = len(k_ids), len(q_ids), len(v_ids), len(t_ids)

    E = np.broadcast_to(circ.W_EU[np.ix_(q_ids, v_ids)], (nK, nQ, nV)).copy()
    V = np.broadcast_to(circ.W_VO[:, t_ids][:, :, v_ids][:, :, None, :], (H, nT, nQ, nV)).copy()

    A = np.zeros((H, nK, nQ, nT))
    ki, qi, _ = db.index_arrays()
    kid, qid = k_ids[ki], q_ids[qi]
    same = kid == qid
    logits = np.stack([circ.W_QK[:, qid, kid], circ.W_QK[:, qid, qid]], axis=-1)  # (H, N, 2)
    logits -= logits.max(axis=-1, keepdims=True)
    p = np.exp(logits)
    p /= p.sum(axis=-1, keepdims=True)
    # k == q: both attended positions hold the same token, so it gets all the weight
    p[:, same, 0] = 0.0
    p[:, same, 1] = 1.0
    tk = np.array([tpos[int(t)] for t in kid], dtype=np.intp)
    tq = np.array([tpos[int(t)] for t in qid], dtype=np.intp)
    A[:, ki, qi, tk] = p[..., 0]
    A[:, ki, qi, tq] += p[..., 1]

    L = E + np.einsum("hkqt,htqv->kqv", A, V)
    return LayerTensorBundle(E=E, A=A, V=V, L=L, k_ids=k_ids, q_ids=q_ids, v_ids=v_ids, t_ids=t_ids)


@dataclass(frozen=True)
class LayerRankBounds:
    lower_estimate: int
    upper_bound: int


def layer_rank_bounds(cfg: LayerConfig, db: Database) -> LayerRankBounds:
    lower = cfg.d_model + cfg.n_heads * cfg.d_head_vo
    upper = cfg.d_model + cfg.n_heads * cfg.d_head_vo * len(db.Q)
    return LayerRankBounds(lower, upper)


def memorization_condition(cfg: LayerConfig, db: Database) -> bool:
    """Whether the database rank bound fits under the layer's rank estimate."""
    from .tensor import db_rank_upper_bound

    return db_rank_upper_bound(db) <= layer_rank_bounds(cfg, db).lower_estimate


# ---------------------------------------------------------------------------
# Model file format


def weights_to_dict(w: LayerWeights) -> dict:
    c = w.config
    return {
        "config": {
            "n_vocab": c.n_vocab,
            "n_heads": c.n_heads,
            "d_model": c.d_model,
            "d_head_qk": c.d_head_qk,
            "d_head_vo": c.d_head_vo,
        },
        "weights": {
            "W_E": w.W_E.tolist(),
            "W_U": w.W_U.tolist(),
            "heads": [
                {"W_Q": w.W_Q[h].tolist(), "W_K": w.W_K[h].tolist(),
                 "W_V": w.W_V[h].tolist(), "W_O": w.W_O[h].tolist()}
                for h in range(c.n_heads)
            ],
        },
    }


def weights_from_dict(obj: dict) -> LayerWeights:
    cfg = LayerConfig(**obj["config"])
    ws = obj["weights"]
    heads = ws["heads"]
    if len(heads) != cfg.n_heads:
        raise ValueError(f"{len(heads)} heads in file, config says {cfg.n_heads}")

    def stack(name):
        return np.array([h[name] for h in heads], dtype=float)

    return LayerWeights(
        cfg,
        W_E=np.array(ws["W_E"], dtype=float),
        W_U=np.array(ws["W_U"], dtype=float),
        W_Q=stack("W_Q"), W_K=stack("W_K"), W_V=stack("W_V"), W_O=stack("W_O"),
    )


def save_weights(w: LayerWeights, path) -> None:
    # json writes floats with repr(), the shortest string that round-trips exactly
    with open(path, "w") as f:
        json.dump(weights_to_dict(w), f)


def load_weights(path) -> LayerWeights:
    with open(path) as f:
        return weights_from_dict(json.load(f))
