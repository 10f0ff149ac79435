"""Node classification on attributed graphs: sparse approximate
personalized PageRank propagation of per-node MLP logits."""

import warnings

# numba emits a version warning for old TBB installs before falling back
# to another threading layer; it is harmless noise here
warnings.filterwarnings("ignore", message=".*TBB.*", category=Warning)

from .errors import ConfigError, DataError
from .graph import (
    AttributedGraph,
    DataSplit,
    load_dataset,
    sample_split,
    save_dataset,
    standardize,
)
from .infer import (
    PredictionMatrix,
    evaluate,
    exact_sym_predict,
    power_iteration_predict,
    sparse_logit_predict,
    topk_predict,
)
from .model import (
    AdamState,
    ModelParams,
    TrainConfig,
    adam_step,
    aggregate,
    forward_local,
    init_params,
    loss_and_grad,
)
from .ppr import (
    BoundedConfig,
    PprConfig,
    SparsePprVector,
    TopKMatrix,
    batch_topk_ppr,
    exact_ppr_dense,
    push_ppr,
    push_ppr_bounded,
    renormalize_sym,
    topk_mass_profile,
    topk_truncate,
)
from .train import Batch, build_batches, train_model

__version__ = "0.1.0"

__all__ = [
    "AdamState",
    "AttributedGraph",
    "Batch",
    "BoundedConfig",
    "ConfigError",
    "DataError",
    "DataSplit",
    "ModelParams",
    "PprConfig",
    "PredictionMatrix",
    "SparsePprVector",
    "TopKMatrix",
    "TrainConfig",
    "adam_step",
    "aggregate",
    "batch_topk_ppr",
    "build_batches",
    "evaluate",
    "exact_ppr_dense",
    "exact_sym_predict",
    "forward_local",
    "init_params",
    "load_dataset",
    "loss_and_grad",
    "power_iteration_predict",
    "push_ppr",
    "push_ppr_bounded",
    "renormalize_sym",
    "sample_split",
    "save_dataset",
    "sparse_logit_predict",
    "standardize",
    "topk_mass_profile",
    "topk_predict",
    "topk_truncate",
    "train_model",
]
