# %% [markdown]
# # Value-output width against query-key width
#
# Along a diagonal of constant d_vo + d_qk the parameter count is fixed, but
# only d_vo enters the layer rank estimate.

# %%
from attnrank import experiments as ex
from attnrank.training import TrainConfig

g = ex.GridConfig(cells=((1, 4), (2, 3), (3, 2), (4, 1)), n_seeds=3, n_databases=2,
                  train=TrainConfig(max_epochs=1000))
for (vo, qk), acc in sorted(ex.vo_qk_grid(g).items()):
    print(f"d_vo={vo} d_qk={qk}  tau=0.95 accuracy {acc:.3f}")
