# %% [markdown]
# # Counting motifs on a small graph
#
# A 4-clique with a path hanging off one corner. Every motif adjacency
# keeps the edge set of the graph and only changes the weights.

# %%
import itertools

import numpy as np

from mcn import Graph, MotifKind, brute_force_motif_oracle, motif_adjacency, node_motif_counts

edges = list(itertools.combinations(range(4), 2)) + [(3, 4), (4, 5), (5, 6)]
g = Graph.from_edges(7, edges)
print(g.n_nodes, "nodes", g.n_edges, "edges")

# %%
for kind in (MotifKind.EDGE, MotifKind.TRIANGLE, MotifKind.FOUR_CLIQUE, MotifKind.FOUR_PATH):
    a = motif_adjacency(g, kind).matrix.toarray().astype(int)
    print(kind.value)
    print(a)

# %% [markdown]
# The pendant path carries no triangle weight, but it does carry 4-path weight.
# The brute force oracle enumerates every node subset and agrees exactly.

# %%
for kind in MotifKind:
    fast = motif_adjacency(g, kind).matrix
    slow = brute_force_motif_oracle(g, kind).matrix
    assert (fast != slow).nnz == 0, kind
print("fast counts match the oracle")

# %%
counts = node_motif_counts(g, list(MotifKind))
print([k.value for k in counts.motif_kinds])
print(counts.counts)
