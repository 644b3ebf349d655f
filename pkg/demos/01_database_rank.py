# %% [markdown]
# # A tiny fact database and its rank
#
# Two tables (where people were born, where they live) plus a country-to-capital
# table, flattened into subject / predicate / object triples.

# %%
import numpy as np

from attnrank import CPConfig, cp_als, db_rank_upper_bound, db_tensor, matrix_rank, parse_triples, stats

db = parse_triples("""
a beta s
b beta s
c beta m
a lambda m
b lambda s
c lambda m
m kappa r
s kappa d
""")
print(stats(db))
print("K:", [t.text for t in db.K])
print("Q:", [t.text for t in db.Q])
print("V:", [t.text for t in db.V])

# %% [markdown]
# The 0/1 tensor has one nonzero per stored (k, q) fiber. Slicing along K or Q
# gives matrices whose rank is the number of distinct objects in that slice.

# %%
D = db_tensor(db)
print(D.shape)
for j, q in enumerate(db.Q):
    print(q.text, "slice rank", matrix_rank(D[:, j]), "distinct objects", len(db.V_q[q.text]))

# %% [markdown]
# Summing those slice ranks over either axis bounds the tensor rank. CP-ALS
# then finds the smallest rank that reconstructs D.

# %%
bound = db_rank_upper_bound(db)
print("upper bound", bound)
for r in range(3, bound + 1):
    f = cp_als(D, r, CPConfig(restarts=10))
    print(f"rank {r}: relative residual {f.residual:.2e}")
