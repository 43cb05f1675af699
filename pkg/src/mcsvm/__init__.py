"""Exact parallel and distributed training for linear multi-class SVMs.

Two all-in-one formulations trained by dual block coordinate ascent, the
sum-to-zero machine (`llw_train`) and the pairwise-margin machine
(`ww_train`), plus a one-vs-rest baseline, conflict-free class-pairing
schedules, message-passing distributed drivers, evaluation metrics, and a
command-line interface (`mcsvm`).
"""

from .dataset import (
    DatasetError,
    EmptyDatasetError,
    NonAscendingIndexError,
    Normalization,
    SparseDataset,
    SparseVector,
    normalize,
    parse_libsvm,
    parse_vector,
    serialize_libsvm,
)
from .dist import llw_distributed_train, ww_distributed_train
from .eval import EvalReport, alpha_density, evaluate
from .llw import (
    LlwState,
    llw_dual_objective,
    llw_duality_gap,
    llw_init,
    llw_kkt_violation,
    llw_primal_objective,
    llw_sync,
    llw_train,
    llw_update_coordinate,
    llw_weights,
)
from .model import (
    ModelFormatError,
    WeightMatrix,
    decision_scores,
    density,
    load_model,
    load_model_file,
    predict,
    predict_dataset,
    save_model,
    save_model_file,
)
from .ovr import OvrState, ovr_train
from .sched import (
    PairTask,
    Phase,
    Round,
    build_schedule,
    chunk_classes,
    match_class,
    num_rounds,
    two_level_schedule,
)
from .solver import EpochStats, SolverConfig, TrainStats
from .transport import (
    InProcessGroup,
    SparseWeightMessage,
    TcpTransport,
    Transport,
    TransportError,
    parse_hosts,
)
from .ww import (
    WwState,
    ww_dual_objective,
    ww_duality_gap,
    ww_init,
    ww_kkt_violation,
    ww_primal_objective,
    ww_train,
    ww_update_coordinate,
    ww_weights,
)

__version__ = "0.1.0"

__all__ = [
    "DatasetError",
    "EmptyDatasetError",
    "NonAscendingIndexError",
    "Normalization",
    "SparseDataset",
    "SparseVector",
    "normalize",
    "parse_libsvm",
    "parse_vector",
    "serialize_libsvm",
    "llw_distributed_train",
    "ww_distributed_train",
    "EvalReport",
    "alpha_density",
    "evaluate",
    "LlwState",
    "llw_dual_objective",
    "llw_duality_gap",
    "llw_init",
    "llw_kkt_violation",
    "llw_primal_objective",
    "llw_sync",
    "llw_train",
    "llw_update_coordinate",
    "llw_weights",
    "ModelFormatError",
    "WeightMatrix",
    "decision_scores",
    "density",
    "load_model",
    "load_model_file",
    "predict",
    "predict_dataset",
    "save_model",
    "save_model_file",
    "OvrState",
    "ovr_train",
    "PairTask",
    "Phase",
    "Round",
    "build_schedule",
    "chunk_classes",
    "match_class",
    "num_rounds",
    "two_level_schedule",
    "EpochStats",
    "SolverConfig",
    "TrainStats",
    "InProcessGroup",
    "SparseWeightMessage",
    "TcpTransport",
    "Transport",
    "TransportError",
    "parse_hosts",
    "WwState",
    "ww_dual_objective",
    "ww_duality_gap",
    "ww_init",
    "ww_kkt_violation",
    "ww_primal_objective",
    "ww_train",
    "ww_update_coordinate",
    "ww_weights",
    "__version__",
]
