"""Graph attention layers (GAT, GATv2, dot-product) on a small numpy autodiff,
with tooling to tell static attention from dynamic attention."""

from .analysis import (
    check_static,
    construct_dpgat,
    counterexample_check,
    fit_mapping,
    per_key_scores,
    svd_small,
)
from .dictlookup import DictDataset, DictLookupModel, evaluate, gen_dataset
from .graph import Graph, NoiseSpec, bipartite_complete, build_graph, inject_noise
from .kernels import BACKEND
from .layers import DPGAT, GAT, GATV2, AttentionLayer, layer_forward, param_count, score_table
from .tensor import Tape, Tensor, grad_check, no_grad, segment_softmax
from .training import Adam, RunResult, TrainConfig, train_model

__version__ = "0.1.0"

__all__ = [
    "Adam", "AttentionLayer", "BACKEND", "DPGAT", "DictDataset", "DictLookupModel", "GAT",
    "GATV2", "Graph", "NoiseSpec", "RunResult", "Tape", "Tensor", "TrainConfig",
    "bipartite_complete", "build_graph", "check_static", "construct_dpgat",
    "counterexample_check", "evaluate", "fit_mapping", "gen_dataset", "grad_check",
    "inject_noise", "layer_forward", "no_grad", "param_count", "per_key_scores", "score_table",
    "segment_softmax", "svd_small", "train_model",
]
