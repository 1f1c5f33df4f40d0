"""TESMR: three-stage enhancement pipeline for multimodal recipe recommendation."""

from .core import (
    Dataset,
    EntityIndex,
    EntityKind,
    Hyperparams,
    InteractionGraph,
    RecipeDoc,
    default_hyperparams,
)
from .encode import fallback_encode, read_embeddings, write_embeddings
from .evaluate import MetricsReport, evaluate_outputs, ndcg_at_k, rank_topk, recall_at_k
from .propagate import NormalizedAdjacency, mean_operator_apply, normalize, propagate
from .train import (
    ForwardOutputs,
    ModelState,
    TrainSettings,
    fit,
    forward,
    load_checkpoint,
    save_checkpoint,
)

__version__ = "0.1.0"

__all__ = [
    "Dataset", "EntityIndex", "EntityKind", "Hyperparams", "InteractionGraph",
    "RecipeDoc", "default_hyperparams", "fallback_encode", "read_embeddings",
    "write_embeddings", "MetricsReport", "evaluate_outputs", "ndcg_at_k",
    "rank_topk", "recall_at_k", "NormalizedAdjacency", "mean_operator_apply",
    "normalize", "propagate", "ForwardOutputs", "ModelState", "TrainSettings",
    "fit", "forward", "load_checkpoint", "save_checkpoint", "__version__",
]
