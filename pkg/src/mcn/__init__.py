"""Motif convolutional networks: motif-based graph attention in numpy/scipy."""

__version__ = "0.1.0"

from .graph import Dataset, DatasetError, FeatureMatrix, Graph, LabelSet, SplitSpec, load_dataset, wl_features
from .matrices import MotifBank, PsiKind, apply_psi, degenerate_gcn_matrix, k_step_matrix
from .model import MCN, ModelParams, ModelSpec
from .motifs import MotifKind, brute_force_motif_oracle, motif_adjacency, node_motif_counts
from .training import TrainConfig, evaluate, rigged_policy_probe, train

__all__ = [
    "Dataset", "DatasetError", "FeatureMatrix", "Graph", "LabelSet", "SplitSpec", "load_dataset",
    "wl_features", "MotifBank", "PsiKind", "apply_psi", "degenerate_gcn_matrix", "k_step_matrix",
    "MCN", "ModelParams", "ModelSpec", "MotifKind", "brute_force_motif_oracle", "motif_adjacency",
    "node_motif_counts", "TrainConfig", "evaluate", "rigged_policy_probe", "train",
]
