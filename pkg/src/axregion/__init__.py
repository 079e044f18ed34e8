"""Functional-region decomposition of accessibility trees and per-page digests."""

from .axtree import AXNode, AXTree, parse_axtree, preprocess, serialize_axtree
from .decomposer import (
    EdgeLabelSet,
    Region,
    RegionPartition,
    decompose,
    partition_from_labels,
)
from .features import NodeFeatures, RoleVocabulary, compute_features, embed, load_vocabulary
from .model import DecompositionModel
from .training import TrainConfig, focal_loss, train, tune_threshold

__version__ = "0.1.0"

__all__ = [
    "AXNode",
    "AXTree",
    "parse_axtree",
    "serialize_axtree",
    "preprocess",
    "EdgeLabelSet",
    "Region",
    "RegionPartition",
    "decompose",
    "partition_from_labels",
    "NodeFeatures",
    "RoleVocabulary",
    "compute_features",
    "embed",
    "load_vocabulary",
    "DecompositionModel",
    "TrainConfig",
    "focal_loss",
    "train",
    "tune_threshold",
    "__version__",
]
