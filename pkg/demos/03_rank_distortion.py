# %% [markdown]
# # argmax and softmax raise rank
#
# The Gram matrix of n unit vectors in r dimensions has rank r, yet each row
# peaks on its diagonal, so argmax returns the n x n identity.

# %%
import numpy as np

from attnrank import argmax_rows, dominance_scale, gram, matrix_rank, softmax_rows, sphere_points

for n, r in [(6, 2), (6, 3), (8, 4)]:
    M = gram(sphere_points(n, r, seed=0))
    c = dominance_scale(M)
    S = softmax_rows(c * M)
    print(f"n={n} r={r}: rank M {matrix_rank(M)}, rank argmax {matrix_rank(argmax_rows(M))}, "
          f"scale {c:.3f}, rank softmax(cM) {matrix_rank(S)}")

# %% [markdown]
# For the identity the smallest scale that makes every diagonal entry outweigh
# the rest of its row is ln(n - 1).

# %%
print(dominance_scale(np.eye(5)), np.log(4))
