"""Two-stage pruning toolkit for small 1D convolutional signal classifiers.

Stage 1 clusters similar channels per layer (average-linkage hierarchical
clustering over channel-weight similarity) and fuses each cluster into one
representative channel. Stage 2 trains linear probes on frozen intermediate
features, flags layers whose probe accuracy barely moves ("layer collapse"),
removes them, and fine-tunes the compact model.
"""

__version__ = "0.1.0"

from .cluster import (
    ClusterAssignment,
    DistanceMatrix,
    average_linkage_cluster,
    channel_similarity_matrix,
    distance_matrix,
    fuse_cluster_weights,
)
from .config import ExperimentConfig, load_config
from .dataset import SignalDataset, generate_dataset, ingest_external, split_dataset
from .engine import Execution, forward, predict
from .fusion import FusionConfig, PrunePlan, prune_model_channels
from .graph import LayerNode, ModelGraph, remove_layers, removable_units, validate_shapes
from .metrics import PruneReport, count_params_flops, emit_report, evaluate
from .models import build_model
from .optim import OptimizerState, optimize_step
from .probe import (
    CollapseDiagnosis,
    ProbeProfile,
    diagnose_collapse,
    extract_features,
    run_lacd,
    train_probe,
)
from .tensor import Tensor
from .train import TrainSettings, train_model

__all__ = [
    "ClusterAssignment",
    "CollapseDiagnosis",
    "DistanceMatrix",
    "ExperimentConfig",
    "Execution",
    "FusionConfig",
    "LayerNode",
    "ModelGraph",
    "OptimizerState",
    "ProbeProfile",
    "PrunePlan",
    "PruneReport",
    "SignalDataset",
    "Tensor",
    "TrainSettings",
    "average_linkage_cluster",
    "build_model",
    "channel_similarity_matrix",
    "count_params_flops",
    "diagnose_collapse",
    "distance_matrix",
    "emit_report",
    "evaluate",
    "extract_features",
    "forward",
    "fuse_cluster_weights",
    "generate_dataset",
    "ingest_external",
    "load_config",
    "optimize_step",
    "predict",
    "prune_model_channels",
    "removable_units",
    "remove_layers",
    "run_lacd",
    "split_dataset",
    "train_model",
    "train_probe",
    "validate_shapes",
]
