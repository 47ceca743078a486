"""Convert the raw Planetoid pickles (``ind.<name>.x`` etc.) to a dataset directory.

The standard public split is reproduced: the first ``len(y)`` rows train,
the next 500 validate, and ``ind.<name>.test.index`` lists the test nodes.
Test indices missing from the file (isolated Citeseer nodes) become
unlabeled, featureless rows.
"""

from __future__ import annotations

import os
import pickle

import numpy as np
import scipy.sparse as sp

from .graph import UNLABELED, DatasetError, FeatureMatrix, Graph, LabelSet, SplitSpec, save_dataset


def _load(raw_dir, name, part):
    path = os.path.join(raw_dir, f"ind.{name}.{part}")
    if not os.path.isfile(path):
        raise DatasetError(f"missing ind.{name}.{part} in {raw_dir}")
    with open(path, "rb") as fh:
        return pickle.load(fh, encoding="latin1")


def convert_planetoid(raw_dir, name, out_dir, n_val=500):
    x, y, tx, ty, allx, ally, graph = (_load(raw_dir, name, p) for p in ("x", "y", "tx", "ty", "allx", "ally", "graph"))
    with open(os.path.join(raw_dir, f"ind.{name}.test.index"), encoding="utf-8") as fh:
        test_idx = np.array([int(line) for line in fh if line.strip()], dtype=np.int64)
    test_sorted = np.sort(test_idx)
    n_base = allx.shape[0]
    n = max(n_base + (test_sorted.max() - test_sorted.min() + 1), max(graph) + 1 if graph else 0)

    feats = sp.lil_matrix((n, allx.shape[1]))
    feats[:n_base] = sp.csr_matrix(allx)
    onehot = np.zeros((n, ally.shape[1]))
    onehot[:n_base] = ally
    # tx/ty rows are stored in test.index order
    feats[test_idx] = sp.csr_matrix(tx)
    onehot[test_idx] = ty

    labels = np.where(onehot.sum(axis=1) > 0, onehot.argmax(axis=1), UNLABELED).astype(np.int64)
    edges = [(u, v) for u, nbrs in graph.items() for v in nbrs if u != v]
    g = Graph.from_edges(n, np.asarray(edges, dtype=np.int64).reshape(-1, 2))

    train = np.arange(y.shape[0])
    val = np.arange(y.shape[0], y.shape[0] + n_val)
    test = test_sorted[labels[test_sorted] != UNLABELED]
    splits = SplitSpec(train, val, test)
    splits.validate(n)
    save_dataset(out_dir, g, LabelSet(labels, onehot.shape[1]), splits, FeatureMatrix(feats.tocsr()))
    return g, labels, splits
