"""Desk-scale deterministic federated-learning simulator."""

from .archive import (
    ArchiveError,
    config_from_dict,
    config_to_dict,
    dataset_to_csv,
    load_transcripts,
    save_transcripts,
)
from .data import (
    DataError,
    LabeledDataset,
    SyntheticSpec,
    dirichlet_partition,
    flip_labels,
    generate_synthetic,
    iid_partition,
)
from .federation import (
    AGGREGATION_TOL,
    ClientUpdate,
    FederationConfig,
    FederationError,
    ModelEvaluator,
    RetrainingGame,
    RoundTranscript,
    UTILITY_KINDS,
    model_eval_oracle,
    round_oracle,
    run_federation,
    test_set_for,
)
from .mlp import (
    HIDDEN_UNITS,
    MlpArch,
    ModelError,
    ModelParams,
    TrainingDiverged,
    accuracy,
    forward_logits,
    init_params,
    loss_and_grad,
    mean_loss,
    sgd_train,
    unpack,
)

__all__ = [
    "AGGREGATION_TOL",
    "ArchiveError",
    "ClientUpdate",
    "DataError",
    "FederationConfig",
    "FederationError",
    "HIDDEN_UNITS",
    "LabeledDataset",
    "MlpArch",
    "ModelError",
    "ModelEvaluator",
    "ModelParams",
    "RetrainingGame",
    "RoundTranscript",
    "SyntheticSpec",
    "TrainingDiverged",
    "UTILITY_KINDS",
    "accuracy",
    "config_from_dict",
    "config_to_dict",
    "dataset_to_csv",
    "dirichlet_partition",
    "flip_labels",
    "forward_logits",
    "generate_synthetic",
    "iid_partition",
    "init_params",
    "load_transcripts",
    "loss_and_grad",
    "mean_loss",
    "model_eval_oracle",
    "round_oracle",
    "run_federation",
    "test_set_for",
    "save_transcripts",
    "sgd_train",
    "unpack",
]
