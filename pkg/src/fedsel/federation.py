"""Round-synchronous federated orchestration.

One round runs four phases in order:

1. Local learning: every client trains each owned modality model for E
   epochs and fits a first-stage fusion forest on the freshly trained
   local models' predictions.
2. Modality selection: each client scores its modalities (Shapley impact,
   model size, recency) and offers its top-gamma models.
3. Client selection and aggregation: per modality, the server keeps the
   delta-share of offering clients ranked by local loss and aggregates
   their models with sample-count weights. Modalities nobody offered keep
   the previous global parameters bit for bit.
4. Deployment: every client downloads the global models for its mask,
   recomputes predictions, and fits the second-stage fusion forest that
   is actually evaluated.

Only uploaded modality models are charged to the communication ledger;
the run halts at the first round boundary where the cumulative average
bytes per client reach the budget. Given a master seed, the whole
trajectory is deterministic.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import ensemble as ens
from . import models as mod
from . import selection as sel
from .data import ClientDataset, modality_dims, num_classes_of
from .errors import AggregationError, DataError, StallError
from .seeding import derive_seed, make_rng

log = logging.getLogger(__name__)

DEFAULT_MAX_ROUNDS = 10_000


@dataclass(frozen=True)
class FederationConfig:
    """Hyperparameters shared by every client plus the selection policy."""

    selection: sel.SelectionConfig = field(default_factory=sel.SelectionConfig)
    epochs: int = 5
    batch_size: int = 32
    learning_rate: float = 0.1
    arch: mod.Arch = field(default_factory=mod.LinearSoftmax)
    num_trees: int = ens.DEFAULT_NUM_TREES
    tree_depth: int = ens.DEFAULT_MAX_DEPTH
    shapley_samples: int = ens.DEFAULT_SHAPLEY_SAMPLES
    shapley_mean_of_abs: bool = False
    random_modality: bool = False
    master_seed: int = 0


@dataclass
class ClientState:
    """One participant: aligned multimodal data plus its current models."""

    client_id: int
    train_features: dict[int, np.ndarray]
    test_features: dict[int, np.ndarray]
    train_labels: np.ndarray
    test_labels: np.ndarray
    modality_models: dict[int, mod.ModalityModel]
    ensemble: ens.EnsembleModel | None = None
    local_losses: dict[int, float] = field(default_factory=dict)

    @property
    def modality_mask(self) -> tuple[int, ...]:
        return tuple(sorted(self.modality_models))

    def sample_count(self, modality: int) -> int:
        return self.train_features[modality].shape[0]


@dataclass
class ServerState:
    """Global modality models and the round counter."""

    global_models: dict[int, mod.ModalityModel]
    round_index: int = 0


@dataclass(frozen=True)
class LedgerEntry:
    round_index: int
    client: int
    modality: int
    nbytes: int


@dataclass
class CommLedger:
    """Append-only record of every uploaded model's bytes."""

    budget_bytes: float
    clients_total: int
    entries: list[LedgerEntry] = field(default_factory=list)
    cumulative_bytes: int = 0

    def record(self, round_index: int, client: int, modality: int, nbytes: int):
        self.entries.append(LedgerEntry(round_index, client, modality, nbytes))
        self.cumulative_bytes += nbytes

    @property
    def cumulative_avg_per_client(self) -> float:
        return self.cumulative_bytes / self.clients_total

    def budget_reached(self) -> bool:
        return self.cumulative_avg_per_client >= self.budget_bytes


@dataclass(frozen=True)
class RoundReport:
    """Everything observable about one communication round."""

    round_index: int
    per_client_accuracy: dict[int, float | None]
    mean_accuracy: float
    modality_choices: dict[int, sel.ModalityChoice]
    selected_clients: dict[int, tuple[int, ...]]
    uploads: tuple[LedgerEntry, ...]
    bytes_this_round: int
    cumulative_bytes: int
    shapley_magnitudes: dict[int, dict[int, float]]


def training_seed(config: FederationConfig, round_index: int, client: int, modality: int) -> int:
    """Seed used for one client's local training of one modality model."""
    return derive_seed(config.master_seed, round_index, "train", client, modality)


def init_clients(
    datasets: list[ClientDataset],
    config: FederationConfig,
    num_classes: int | None = None,
) -> tuple[ServerState, list[ClientState]]:
    """Build server and client states with shared initial modality models.

    Every client starts from the server's seeded initial model for each
    modality it owns, mirroring an initial broadcast.
    """
    if not datasets:
        raise DataError("need at least one client dataset")
    if num_classes is None:
        num_classes = num_classes_of(datasets)
    dims = modality_dims(datasets)
    global_models = {
        m: mod.init_model(config.arch, dims[m], num_classes,
                          seed=derive_seed(config.master_seed, "init", m), modality_id=m)
        for m in sorted(dims)
    }
    clients = [
        ClientState(
            client_id=d.client_id,
            train_features=d.train_features,
            test_features=d.test_features,
            train_labels=d.train_labels,
            test_labels=d.test_labels,
            modality_models={m: global_models[m] for m in d.modality_mask},
        )
        for d in datasets
    ]
    return ServerState(global_models=global_models), clients


def _prediction_matrix(models: dict[int, mod.ModalityModel], features: dict[int, np.ndarray],
                       mask: tuple[int, ...]) -> np.ndarray:
    columns = [mod.predict(models[m], features[m]) for m in mask]
    return np.stack(columns, axis=1)


def aggregate_modality(
    contributions: list[tuple[mod.ModalityModel, int]],
) -> mod.ModalityModel:
    """Sample-count-weighted average of the selected clients' models."""
    if not contributions:
        raise AggregationError("no client models to aggregate")
    counts = np.array([float(c) for _, c in contributions])
    if counts.sum() <= 0:
        raise AggregationError("sample counts must be positive")
    weights = counts / counts.sum()
    return mod.weighted_sum([m for m, _ in contributions], weights)


def evaluate_clients(clients: list[ClientState], server: ServerState) -> dict[int, float | None]:
    """Held-out accuracy of each client's fusion forest over global-model
    predictions; ``None`` when a client has no test rows."""
    out: dict[int, float | None] = {}
    for client in clients:
        mask = client.modality_mask
        if client.ensemble is None or not mask or client.test_labels.size == 0:
            out[client.client_id] = None
            continue
        preds = _prediction_matrix(server.global_models, client.test_features, mask)
        fused = ens.ensemble_predict(client.ensemble, preds)
        out[client.client_id] = float((fused == client.test_labels).mean())
    return out


def _mean_accuracy(per_client: dict[int, float | None]) -> float:
    vals = [v for v in per_client.values() if v is not None]
    return float(np.mean(vals)) if vals else float("nan")


def run_round(
    server: ServerState,
    clients: list[ClientState],
    config: FederationConfig,
    tracker: sel.RecencyTracker,
    ledger: CommLedger,
    round_index: int,
) -> RoundReport:
    """Execute one full communication round, mutating all states in place."""

    def seed_of(*parts) -> int:
        return derive_seed(config.master_seed, round_index, *parts)

    choices: dict[int, sel.ModalityChoice] = {}
    shapley_out: dict[int, dict[int, float]] = {}

    for client in sorted(clients, key=lambda c: c.client_id):
        k = client.client_id
        mask = client.modality_mask
        if not mask:
            choices[k] = sel.ModalityChoice(selected=())
            shapley_out[k] = {}
            continue
        for m in mask:
            trained, outcome = mod.train_local(
                client.modality_models[m],
                client.train_features[m],
                client.train_labels,
                config.epochs,
                config.batch_size,
                config.learning_rate,
                seed=training_seed(config, round_index, k, m),
            )
            client.modality_models[m] = trained
            client.local_losses[m] = outcome.final_loss

        stage1 = _prediction_matrix(client.modality_models, client.train_features, mask)
        forest = ens.fit_ensemble(
            stage1, client.train_labels, config.num_trees, config.tree_depth,
            seed=seed_of("stage1", k), num_classes=server_num_classes(server),
        )
        report = ens.shapley_exact(
            forest, stage1, stage1, client.train_labels,
            seed=seed_of("shapley", k),
            max_eval_samples=config.shapley_samples,
            mean_of_abs=config.shapley_mean_of_abs,
        )
        sizes = np.array([client.modality_models[m].byte_size for m in mask], dtype=np.float64)
        recency = np.array([tracker.recency(k, m) for m in mask], dtype=np.float64)
        normalized = sel.normalize_criteria(report.magnitudes, sizes, recency, round_index)
        priority = sel.compute_priority(normalized, config.selection)
        breakdown = sel.PriorityBreakdown(
            raw_shapley=report.magnitudes, raw_sizes=sizes, raw_recency=recency,
            normalized_shapley=normalized[0], normalized_size=normalized[1],
            normalized_recency=normalized[2], priority=priority,
        )
        if config.random_modality:
            count = min(config.selection.gamma, len(mask))
            picked = make_rng(seed_of("random-modality", k, config.selection.random_seed)).choice(
                len(mask), size=count, replace=False)
            local_choice = sel.ModalityChoice(
                selected=tuple(sorted(int(i) for i in picked)), breakdown=breakdown)
        else:
            local_choice = sel.select_modalities(priority, config.selection.gamma, breakdown=breakdown)
        selected_ids = tuple(mask[i] for i in local_choice.selected)
        choices[k] = sel.ModalityChoice(
            selected=selected_ids,
            selected_models=tuple(client.modality_models[m] for m in selected_ids),
            breakdown=breakdown,
        )
        shapley_out[k] = {m: float(report.magnitudes[i]) for i, m in enumerate(mask)}

    by_id = {c.client_id: c for c in clients}
    offered: dict[int, dict[int, float]] = {}
    for k, choice in choices.items():
        for m in choice.selected:
            offered.setdefault(m, {})[k] = by_id[k].local_losses[m]

    selected_clients: dict[int, tuple[int, ...]] = {}
    uploads: list[LedgerEntry] = []
    for m in sorted(offered):
        chosen = sel.select_clients(
            offered[m], config.selection.delta, len(clients),
            direction=config.selection.loss_direction,
            seed=seed_of("client-selection", m, config.selection.random_seed),
        )
        selected_clients[m] = chosen
        if chosen:
            server.global_models[m] = aggregate_modality(
                [(by_id[k].modality_models[m], by_id[k].sample_count(m)) for k in chosen]
            )
            for k in chosen:
                uploads.append(LedgerEntry(round_index, k, m, by_id[k].modality_models[m].byte_size))
    server.round_index = round_index

    for client in sorted(clients, key=lambda c: c.client_id):
        mask = client.modality_mask
        if not mask:
            continue
        for m in mask:
            client.modality_models[m] = server.global_models[m]
        stage2 = _prediction_matrix(client.modality_models, client.train_features, mask)
        client.ensemble = ens.fit_ensemble(
            stage2, client.train_labels, config.num_trees, config.tree_depth,
            seed=seed_of("stage2", client.client_id), num_classes=server_num_classes(server),
        )

    for entry in uploads:
        ledger.record(entry.round_index, entry.client, entry.modality, entry.nbytes)
    sel.mark_uploaded(tracker, [(u.client, u.modality) for u in uploads], round_index)

    per_client = evaluate_clients(clients, server)
    bytes_this_round = sum(u.nbytes for u in uploads)
    return RoundReport(
        round_index=round_index,
        per_client_accuracy=per_client,
        mean_accuracy=_mean_accuracy(per_client),
        modality_choices=choices,
        selected_clients=selected_clients,
        uploads=tuple(uploads),
        bytes_this_round=bytes_this_round,
        cumulative_bytes=ledger.cumulative_bytes,
        shapley_magnitudes=shapley_out,
    )


def server_num_classes(server: ServerState) -> int:
    any_model = next(iter(server.global_models.values()))
    return any_model.num_classes


def run_until_budget(
    server: ServerState,
    clients: list[ClientState],
    config: FederationConfig,
    budget_bytes: float,
    max_rounds: int = DEFAULT_MAX_ROUNDS,
) -> list[RoundReport]:
    """Repeat rounds until the average per-client upload bytes reach the
    budget (or ``max_rounds``); returns the full report trajectory."""
    if budget_bytes <= 0:
        raise DataError("budget_bytes must be positive")
    if not clients:
        raise DataError("need at least one client")
    ledger = CommLedger(budget_bytes=budget_bytes, clients_total=len(clients))
    tracker = sel.RecencyTracker(current_round=1)
    reports: list[RoundReport] = []
    for t in range(1, max_rounds + 1):
        tracker.current_round = t
        report = run_round(server, clients, config, tracker, ledger, t)
        reports.append(report)
        if report.bytes_this_round == 0 and not ledger.budget_reached():
            raise StallError(f"round {t} uploaded nothing; budget cannot be reached")
        log.debug("round %d: acc=%.4f bytes=%d", t, report.mean_accuracy, report.bytes_this_round)
        if ledger.budget_reached():
            break
    return reports
