import numpy as np
import pytest

from attnrank.attention import LayerConfig, LayerWeights
from attnrank.db import parse_triples

COUNTRIES = """\
# two tables flattened to subject-predicate-object triples
a beta s
b beta s
c beta m
a lambda m
b lambda s
c lambda m
m kappa r
s kappa d
"""

CONSTANT_OBJECT = """\
a f v
b g v
c h v
d i v
e j v
"""

# the born_in / lives_in facts only
BETA_LAMBDA = "\n".join(COUNTRIES.splitlines()[1:7]) + "\n"


@pytest.fixture
def fig1_db():
    return parse_triples(COUNTRIES)


@pytest.fixture
def ex2_db():
    return parse_triples(CONSTANT_OBJECT)


@pytest.fixture
def bl_db():
    return parse_triples(BETA_LAMBDA)


def labelled(mat, row_tokens, col_tokens, rows, cols):
    """Reorder a matrix whose axes are ``row_tokens``/``col_tokens`` into ``rows``/``cols`` order."""
    rt = [t.text if hasattr(t, "text") else t for t in row_tokens]
    ct = [t.text if hasattr(t, "text") else t for t in col_tokens]
    return np.asarray(mat)[np.ix_([rt.index(r) for r in rows], [ct.index(c) for c in cols])]


def handbuilt_weights(db, vo_scale=1.0):
    """Weights whose circuits are an all-ones W_QK, the worked W_VO and W_EU = 0.

    Inputs a, b, c, beta, lambda embed to the first five basis directions;
    the two unembedding directions for m and s are the last two. W_U ignores
    the input directions, so W_EU vanishes.
    """
    vocab = [t.text for t in db.vocab]
    n = len(vocab)
    inputs = ["a", "b", "c", "beta", "lambda"]
    d_model = n
    cfg = LayerConfig(n, 1, d_model, 1, 2)
    W_E = np.zeros((n, d_model))
    for i, tok in enumerate(inputs):
        W_E[vocab.index(tok), i] = 1.0
    W_U = np.zeros((d_model, n))
    W_U[5, vocab.index("m")] = 1.0
    W_U[6, vocab.index("s")] = 1.0
    W_Q = np.zeros((1, d_model, 1))
    W_Q[0, :5, 0] = 1.0
    W_K = np.zeros((1, 1, d_model))
    W_K[0, 0, :5] = 1.0
    vo = {"a": (0, 0), "b": (0, 4), "c": (4, 0), "beta": (0, 2), "lambda": (2, 0)}
    W_V = np.zeros((1, d_model, 2))
    for i, tok in enumerate(inputs):
        W_V[0, i] = vo[tok]
    W_O = np.zeros((1, 2, d_model))
    W_O[0, 0, 5] = vo_scale
    W_O[0, 1, 6] = vo_scale
    return LayerWeights(cfg, W_E=W_E, W_U=W_U, W_Q=W_Q, W_K=W_K, W_V=W_V, W_O=W_O)


@pytest.fixture
def handbuilt():
    return handbuilt_weights


# one summary line per acceptance criterion, printed at the end of the run
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2].rstrip(":"))):
            terminalreporter.write_line(line)
