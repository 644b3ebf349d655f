# %% [markdown]
# # Training a layer to memorize the database

# %%
from attnrank import LayerConfig, TrainConfig, evaluate, init_weights, parse_triples, train
from attnrank.attention import layer_rank_bounds

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

# %%
cfg = LayerConfig(len(db.vocab), n_heads=2, d_model=6, d_head_qk=6, d_head_vo=6)
print(layer_rank_bounds(cfg, db), "params", cfg.n_params)
rep = train(init_weights(cfg, seed=0), db, TrainConfig(max_epochs=2000, record_every=250))
for h in rep.history:
    print(h.epoch, round(h.loss, 4), h.acc_argmax, {t: round(a, 3) for t, a in h.acc.items()})

# %% [markdown]
# A layer with a single one-dimensional head and d_model = 1 is far below the
# database rank, and argmax accuracy stalls.

# %%
small = LayerConfig(len(db.vocab), 1, 1, 1, 1)
rep = train(init_weights(small, seed=0), db, TrainConfig(max_epochs=2000, record_every=0))
print(evaluate(rep.weights, db))
