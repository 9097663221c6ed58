"""Knowledge hypergraph embedding with 3D circular convolution.

Library surface: configuration (RunConfig), dataset ingestion, the three
model variants with hand-written gradients, AdaGrad training, filtered
ranking evaluation, and binary checkpoints. The ``hycube`` console script
wraps the same pieces.
"""

from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig
from .data import (
    Dataset,
    FilterIndex,
    KnowledgeTuple,
    build_filter_index,
    dataset_stats,
    extract_fixed_arity,
    load_dataset,
)
from .evaluate import MetricsReport, evaluate_split, rank_of_target
from .layers import MaskedTuple
from .model import (
    ModelParams,
    backward,
    forward,
    param_count,
    score_all_entities,
)
from .training import (
    AdaGradState,
    EpochRecord,
    TrainReport,
    adagrad_step,
    expand_masked,
    multiclass_log_loss,
    sample_negatives,
    train,
)

__version__ = "0.1.0"

__all__ = [
    "RunConfig",
    "Dataset",
    "FilterIndex",
    "KnowledgeTuple",
    "MaskedTuple",
    "ModelParams",
    "MetricsReport",
    "AdaGradState",
    "EpochRecord",
    "TrainReport",
    "load_dataset",
    "build_filter_index",
    "dataset_stats",
    "extract_fixed_arity",
    "forward",
    "backward",
    "score_all_entities",
    "param_count",
    "expand_masked",
    "multiclass_log_loss",
    "sample_negatives",
    "adagrad_step",
    "train",
    "evaluate_split",
    "rank_of_target",
    "save_checkpoint",
    "load_checkpoint",
    "__version__",
]
