"""Small generated datasets for tests and demonstrations."""

from __future__ import annotations

import numpy as np
import scipy.sparse as sp

from .graph import Dataset, FeatureMatrix, Graph, LabelSet, SplitSpec


def planted_partition(n_nodes, n_classes, p_in, p_out, seed=0):
    """Random graph with equal-size blocks; returns ``(graph, labels)``."""
    rng = np.random.default_rng(seed)
    labels = np.arange(n_nodes) % n_classes
    rng.shuffle(labels)
    iu, ju = np.triu_indices(n_nodes, k=1)
    prob = np.where(labels[iu] == labels[ju], p_in, p_out)
    keep = rng.random(iu.size) < prob
    g = Graph.from_edges(n_nodes, np.stack([iu[keep], ju[keep]], axis=1))
    return g, labels


def per_class_split(labels, n_train_per_class, n_val, seed=0, n_test=None):
    """``n_train_per_class`` training nodes per class; val/test drawn from the rest."""
    rng = np.random.default_rng(seed)
    labels = np.asarray(labels)
    train = []
    for c in np.unique(labels):
        idx = np.flatnonzero(labels == c)
        train.extend(rng.choice(idx, size=min(n_train_per_class, idx.size), replace=False).tolist())
    train = np.sort(np.asarray(train, dtype=np.int64))
    rest = np.setdiff1d(np.arange(labels.size), train)
    rest = rng.permutation(rest)
    val = np.sort(rest[:n_val])
    test = np.sort(rest[n_val:] if n_test is None else rest[n_val:n_val + n_test])
    return SplitSpec(train, val, test)


def two_blobs(n_per_class=30, p_in=0.3, p_out=0.01, n_features=10, separation=2.0, seed=0):
    """Two dense communities with linearly separable Gaussian features."""
    rng = np.random.default_rng(seed)
    n = 2 * n_per_class
    g, labels = planted_partition(n, 2, p_in, p_out, seed=seed)
    centers = np.zeros((2, n_features))
    centers[1, 0] = separation
    x = centers[labels] + 0.5 * rng.normal(size=(n, n_features))
    splits = per_class_split(labels, n_train_per_class=max(2, n_per_class // 3), n_val=n // 4, seed=seed)
    return Dataset(g, FeatureMatrix(x), LabelSet(labels.astype(np.int64), 2), splits, "two_blobs")


def heterophily_dataset(n_nodes=400, n_classes=4, p_in=0.05, p_out=0.02, seed=0,
                        n_train_per_class=15):
    """Planted partition without attributes; half of the non-training nodes validate, half test."""
    g, labels = planted_partition(n_nodes, n_classes, p_in, p_out, seed=seed)
    n_rest = n_nodes - n_classes * n_train_per_class
    splits = per_class_split(labels, n_train_per_class, n_val=n_rest // 2, seed=seed)
    feats = FeatureMatrix(sp.csr_matrix((n_nodes, 0)), needs_wl=True)
    return Dataset(g, feats, LabelSet(labels.astype(np.int64), n_classes), splits, "planted_partition")
