"""Hypergraph-enhanced cascading graph convolution for multi-behavior recommendation."""

from .config import ABLATIONS, TrainConfig
from .dataset import InteractionDataset, build_dataset, load_behavior_file, load_manifest
from .estimator import HECGCNRecommender
from .evaluator import EvalReport, evaluate
from .graph import NormalizedBipartiteGraph, build_global_graph, build_graph

__all__ = [
    "ABLATIONS",
    "EvalReport",
    "HECGCNRecommender",
    "InteractionDataset",
    "NormalizedBipartiteGraph",
    "TrainConfig",
    "build_dataset",
    "build_global_graph",
    "build_graph",
    "evaluate",
    "load_behavior_file",
    "load_manifest",
]
