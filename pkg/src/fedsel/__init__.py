"""Communication-efficient multimodal federated learning with joint
modality and client selection, at desk scale.

The package simulates round-synchronous federated learning where each
client trains one small classifier per sensing modality, fuses their
predictions with a private random forest, and offers only its
highest-priority modality models for upload. Priorities blend exact
Shapley impact, serialized model size, and upload recency; the server
then keeps a loss-ranked share of the offering clients per modality.
Every uploaded byte is accounted in a ledger so methods can be compared
at equal communication budgets.
"""

from .baselines import BaselineKind
from .data import ClientDataset, CsvSchema, DatasetSpec, ModalitySpec, NaturalParams, generate, load_csv
from .ensemble import (
    EnsembleModel,
    ShapleyReport,
    coalition_value,
    ensemble_predict,
    fit_ensemble,
    shapley_exact,
)
from .federation import (
    ClientState,
    CommLedger,
    FederationConfig,
    RoundReport,
    ServerState,
    aggregate_modality,
    evaluate_clients,
    init_clients,
    run_round,
    run_until_budget,
)
from .metrics import Trajectory, accuracy_vs_comm, selection_histogram, shapley_trajectory
from .models import (
    LinearSoftmax,
    Mlp1,
    ModalityModel,
    TrainOutcome,
    eval_loss,
    init_model,
    predict,
    train_local,
    weighted_sum,
)
from .selection import (
    ModalityChoice,
    PriorityBreakdown,
    RecencyTracker,
    SelectionConfig,
    compute_priority,
    compute_recency,
    mark_uploaded,
    normalize_criteria,
    select_clients,
    select_modalities,
)

__version__ = "0.1.0"

__all__ = [
    "BaselineKind",
    "ClientDataset",
    "ClientState",
    "CommLedger",
    "CsvSchema",
    "DatasetSpec",
    "EnsembleModel",
    "FederationConfig",
    "LinearSoftmax",
    "Mlp1",
    "ModalityChoice",
    "ModalityModel",
    "ModalitySpec",
    "NaturalParams",
    "PriorityBreakdown",
    "RecencyTracker",
    "RoundReport",
    "SelectionConfig",
    "ServerState",
    "ShapleyReport",
    "Trajectory",
    "TrainOutcome",
    "accuracy_vs_comm",
    "aggregate_modality",
    "coalition_value",
    "compute_priority",
    "compute_recency",
    "ensemble_predict",
    "eval_loss",
    "evaluate_clients",
    "fit_ensemble",
    "generate",
    "init_clients",
    "init_model",
    "load_csv",
    "mark_uploaded",
    "normalize_criteria",
    "predict",
    "run_round",
    "run_until_budget",
    "select_clients",
    "select_modalities",
    "selection_histogram",
    "shapley_exact",
    "shapley_trajectory",
    "train_local",
    "weighted_sum",
]
