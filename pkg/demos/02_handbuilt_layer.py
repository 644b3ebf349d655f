# %% [markdown]
# # A one-head layer written by hand
#
# Take only the born-in (beta) and lives-in (lambda) facts. With an all-ones
# query-key circuit every subject shares attention equally with the predicate,
# and a hand-picked value-output circuit makes argmax of the layer tensor
# reproduce the database.

# %%
import numpy as np

from attnrank import LayerConfig, LayerWeights, argmax_rows, build_bundle, db_tensor, parse_triples

db = parse_triples("a beta s\nb beta s\nc beta m\na lambda m\nb lambda s\nc lambda m\n")
vocab = [t.text for t in db.vocab]
n = len(vocab)
inputs = ["a", "b", "c", "beta", "lambda"]

# %%
W_E = np.zeros((n, n))
for i, tok in enumerate(inputs):
    W_E[vocab.index(tok), i] = 1.0
W_U = np.zeros((n, n))
W_U[5, vocab.index("m")] = 1.0
W_U[6, vocab.index("s")] = 1.0
W_Q = np.zeros((1, n, 1))
W_Q[0, :5, 0] = 1.0
W_K = W_Q.transpose(0, 2, 1).copy()
vo = {"a": (0, 0), "b": (0, 4), "c": (4, 0), "beta": (0, 2), "lambda": (2, 0)}
W_V = np.zeros((1, n, 2))
for i, tok in enumerate(inputs):
    W_V[0, i] = vo[tok]
W_O = np.zeros((1, 2, n))
W_O[0, 0, 5] = W_O[0, 1, 6] = 1.0
w = LayerWeights(LayerConfig(n, 1, n, 1, 2), W_E, W_U, W_Q, W_K, W_V, W_O)

# %% [markdown]
# The attention-times-value slices, one per predicate. Columns follow the
# object order of the database.

# %%
b = build_bundle(w, db)
print("objects:", [vocab[i] for i in b.v_ids])
for j, q in enumerate(db.Q):
    print(q.text)
    print(b.AV()[0][:, j])

# %%
D = db_tensor(db)
for j, q in enumerate(db.Q):
    print(q.text, "argmax reproduces the slice:", np.array_equal(argmax_rows(b.L[:, j]), D[:, j]))
