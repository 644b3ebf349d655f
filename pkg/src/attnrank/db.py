"""Databases of subject-predicate-object triples viewed as partial functions.

A database maps (subject, predicate) pairs to a single object. Tokens are
numbered by first appearance in the triple list, and the subject, predicate
and object sets inherit that order.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable

import numpy as np


class DatabaseError(ValueError):
    pass


@dataclass(frozen=True)
class Token:
    id: int
    text: str


@dataclass(frozen=True)
class Triple:
    k: Token
    q: Token
    v: Token


@dataclass(frozen=True)
class DBStats:
    n_triples: int
    n_k: int
    n_q: int
    n_v: int
    sum_Vk: int
    sum_Vq: int

    def as_tuple(self) -> tuple[int, ...]:
        return (self.n_triples, self.n_k, self.n_q, self.n_v, self.sum_Vk, self.sum_Vq)


def _ordered_unique(items: Iterable[str]) -> list[str]:
    return list(dict.fromkeys(items))


@dataclass(frozen=True, eq=False)
class Database:
    """Immutable functional set of triples.

    Build with :meth:`from_texts` (or :func:`parse_triples`); the derived index
    sets ``K``, ``Q``, ``V`` and the per-token maps are computed once.
    """

    triples: tuple[Triple, ...]
    vocab: tuple[Token, ...]
    K: tuple[Token, ...] = field(repr=False)
    Q: tuple[Token, ...] = field(repr=False)
    V: tuple[Token, ...] = field(repr=False)

    @classmethod
    def from_texts(cls, rows: Iterable[tuple[str, str, str]]) -> "Database":
        rows = [tuple(r) for r in rows]
        if not rows:
            raise DatabaseError("empty database")
        seen: dict[tuple[str, str], str] = {}
        for k, q, v in rows:
            for t in (k, q, v):
                if not t or any(c.isspace() for c in t):
                    raise DatabaseError(f"invalid token {t!r}")
            if (k, q) in seen:
                if seen[(k, q)] == v:
                    raise DatabaseError(f"duplicate triple ({k}, {q}, {v})")
                raise DatabaseError(
                    f"({k}, {q}) maps to both {seen[(k, q)]!r} and {v!r}; not a partial function"
                )
            seen[(k, q)] = v

        texts = _ordered_unique(t for row in rows for t in row)
        vocab = tuple(Token(i, t) for i, t in enumerate(texts))
        by_text = {t.text: t for t in vocab}
        triples = tuple(Triple(by_text[k], by_text[q], by_text[v]) for k, q, v in rows)
        K = tuple(by_text[t] for t in _ordered_unique(r[0] for r in rows))
        Q = tuple(by_text[t] for t in _ordered_unique(r[1] for r in rows))
        V = tuple(by_text[t] for t in _ordered_unique(r[2] for r in rows))
        return cls(triples, vocab, K, Q, V)

    def __len__(self) -> int:
        return len(self.triples)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Database):
            return NotImplemented
        return self.rows() == other.rows()

    def __hash__(self) -> int:
        return hash(self.rows())

    def rows(self) -> tuple[tuple[str, str, str], ...]:
        return tuple((t.k.text, t.q.text, t.v.text) for t in self.triples)

    def token(self, text: str) -> Token:
        for t in self.vocab:
            if t.text == text:
                return t
        raise KeyError(text)

    # per-token maps, keyed by token text
    @property
    def V_k(self) -> dict[str, set[str]]:
        out: dict[str, set[str]] = {k.text: set() for k in self.K}
        for t in self.triples:
            out[t.k.text].add(t.v.text)
        return out

    @property
    def V_q(self) -> dict[str, set[str]]:
        out: dict[str, set[str]] = {q.text: set() for q in self.Q}
        for t in self.triples:
            out[t.q.text].add(t.v.text)
        return out

    @property
    def Q_k(self) -> dict[str, set[str]]:
        out: dict[str, set[str]] = {k.text: set() for k in self.K}
        for t in self.triples:
            out[t.k.text].add(t.q.text)
        return out

    @property
    def K_q(self) -> dict[str, set[str]]:
        out: dict[str, set[str]] = {q.text: set() for q in self.Q}
        for t in self.triples:
            out[t.q.text].add(t.k.text)
        return out

    def index_arrays(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Positions of each triple's k, q, v within K, Q, V respectively."""
        kpos = {t.id: i for i, t in enumerate(self.K)}
        qpos = {t.id: i for i, t in enumerate(self.Q)}
        vpos = {t.id: i for i, t in enumerate(self.V)}
        ki = np.array([kpos[t.k.id] for t in self.triples], dtype=np.intp)
        qi = np.array([qpos[t.q.id] for t in self.triples], dtype=np.intp)
        vi = np.array([vpos[t.v.id] for t in self.triples], dtype=np.intp)
        return ki, qi, vi

    def token_ids(self) -> np.ndarray:
        """(n_triples, 3) array of vocabulary ids."""
        return np.array([(t.k.id, t.q.id, t.v.id) for t in self.triples], dtype=np.intp)


def parse_triples(text: str) -> Database:
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        fields = s.split()
        if len(fields) != 3:
            raise DatabaseError(f"line {lineno}: expected 3 fields, got {len(fields)}")
        rows.append(tuple(fields))
    return Database.from_texts(rows)


def serialize(db: Database) -> str:
    return "".join(f"{k} {q} {v}\n" for k, q, v in db.rows())


def stats(db: Database) -> DBStats:
    return DBStats(
        n_triples=len(db),
        n_k=len(db.K),
        n_q=len(db.Q),
        n_v=len(db.V),
        sum_Vk=sum(len(s) for s in db.V_k.values()),
        sum_Vq=sum(len(s) for s in db.V_q.values()),
    )


@dataclass(frozen=True)
class RandomDBConfig:
    n_k: int
    n_q: int
    n_v: int
    n_triples: int
    shared_tokens: bool = False


def random_database(cfg: RandomDBConfig, seed: int) -> Database:
    """Sample a functional database.

    ``n_triples`` distinct (k, q) pairs are drawn uniformly without
    replacement; each gets an object drawn uniformly from the ``n_v`` object
    tokens. With ``shared_tokens`` the subject, predicate and object pools are
    all prefixes of one token pool, so they overlap.
    """
    if min(cfg.n_k, cfg.n_q, cfg.n_v, cfg.n_triples) < 1:
        raise DatabaseError(f"all sizes must be positive: {cfg}")
    if cfg.n_triples > cfg.n_k * cfg.n_q:
        raise DatabaseError(
            f"infeasible: {cfg.n_triples} triples but only {cfg.n_k * cfg.n_q} (k, q) pairs"
        )
    rng = np.random.default_rng(seed)
    if cfg.shared_tokens:
        ks = [f"t{i}" for i in range(cfg.n_k)]
        qs = [f"t{i}" for i in range(cfg.n_q)]
        vs = [f"t{i}" for i in range(cfg.n_v)]
    else:
        ks = [f"k{i}" for i in range(cfg.n_k)]
        qs = [f"q{i}" for i in range(cfg.n_q)]
        vs = [f"v{i}" for i in range(cfg.n_v)]
    pairs = rng.choice(cfg.n_k * cfg.n_q, size=cfg.n_triples, replace=False)
    objs = rng.integers(0, cfg.n_v, size=cfg.n_triples)
    rows = [(ks[p // cfg.n_q], qs[p % cfg.n_q], vs[o]) for p, o in zip(pairs, objs)]
    return Database.from_texts(rows)
