# %% [markdown]
# # A small sweep: corpus, results, heatmap, scatter slope
#
# A 40-pair version of the default sweep with 300 instead of 2000 epochs, so
# it runs in well under a minute. Most layers are still far from memorizing
# at that point, but accuracy already falls off to the right of each row.

# %%
import tempfile
from dataclasses import replace
from pathlib import Path

from attnrank import experiments as ex
from attnrank.heatmap import bin_heatmap, render_heatmap

out = Path(tempfile.mkdtemp())
cfg = replace(ex.SweepConfig(), n_pairs=40)
cfg = replace(cfg, train=replace(cfg.train, max_epochs=300))
corpus = ex.generate_corpus(cfg, out / "corpus")
print(corpus.manifest()["counts"], corpus.manifest_hash()[:12])

# %%
st = ex.scatter_tables(corpus.databases, corpus.layers)
print(f"triples per unit of database rank bound: {st.slope:.2f}")

# %%
rows = ex.run_sweep(corpus, out / "results.csv")
grid = bin_heatmap(rows, "acc_argmax")
render_heatmap(grid, out / "argmax.svg")
print(grid.layer_edges, grid.db_edges)
print(grid.mean.round(2))
print("written to", out)
