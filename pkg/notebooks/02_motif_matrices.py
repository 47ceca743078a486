# %% [markdown]
# # Motif matrices and K-step powers

# %%
import numpy as np

from mcn import Graph, MotifKind, PsiKind, k_step_matrix, motif_adjacency

rng = np.random.default_rng(0)
n = 12
iu, ju = np.triu_indices(n, 1)
keep = rng.random(iu.size) < 0.3
g = Graph.from_edges(n, np.stack([iu[keep], ju[keep]], axis=1))
tri = motif_adjacency(g, MotifKind.TRIANGLE)

# %% [markdown]
# Each Ψ adds a self-loop, so every node keeps its own embedding even when it
# sits in no triangle. The transition form is row-stochastic.

# %%
for psi in PsiKind:
    m = k_step_matrix(tri, 1, psi).matrix.toarray()
    print(f"{psi.value:10s} diag>0 {np.all(np.diag(m) > 0)}  row sums {np.round(m.sum(axis=1)[:4], 3)}")

# %% [markdown]
# Raising the motif adjacency to a power before the transform widens each
# node's receptive field.

# %%
for k in (1, 2, 3):
    m = k_step_matrix(tri, k, PsiKind.SYMNORM).matrix
    print(k, "nnz", m.nnz)
