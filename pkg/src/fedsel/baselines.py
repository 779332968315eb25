"""Comparison systems sharing the models, ledger, and round machinery.

Three fusion baselines train one monolithic model per client and FedAvg it
over all clients every round:

* data-level: one classifier over the concatenated raw features,
* feature-level: per-modality linear encoders into a shared linear head,
* decision-level: per-modality linear scorers whose class-score vectors
  feed a final linear fusion layer.

``random submodel upload`` keeps the decision-level architecture but each
client uploads exactly one uniformly chosen component per round (one of
its modality heads or the fusion layer). The three ablations rerun the
selective pipeline with the modality and/or client choice replaced by
seeded uniform picks.

Clients missing a modality zero-impute it so every fused input has the
same width. Ledger entries for whole fused models carry the component id
``FUSED``; random-submodel entries carry the head's position in the global
modality order, or ``num_modalities`` for the fusion layer.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum

import numpy as np

from . import federation as fed
from . import models as mod
from . import selection as sel
from .data import ClientDataset, modality_dims, num_classes_of
from .errors import DataError, DivergenceError
from .seeding import derive_seed, make_rng

FUSED = -1
DEFAULT_HIDDEN_UNITS = 8


class BaselineKind(Enum):
    DATA_LEVEL = "data_level"
    FEATURE_LEVEL = "feature_level"
    DECISION_LEVEL = "decision_level"
    RANDOM_SUBMODEL = "random_submodel"
    RANDOM_MODALITY = "random_modality"
    RANDOM_CLIENT = "random_client"
    RANDOM_BOTH = "random_both"


@dataclass(frozen=True)
class FusionStack:
    """Per-modality linear encoders feeding one linear fusion head.

    ``widths_out[m]`` is the m-th encoder's output width: the shared
    hidden width for feature-level fusion, the class count for
    decision-level fusion. Parameters are flat: for each modality
    ``W_m (d_m, h_m)`` then ``b_m (h_m,)``, finally ``V (sum h, C)`` and
    ``c (C,)``.
    """

    widths_in: tuple[int, ...]
    widths_out: tuple[int, ...]
    num_classes: int
    params: np.ndarray

    def __post_init__(self):
        params = np.asarray(self.params, dtype=np.float64)
        if params.flags.writeable:
            params = params.copy()
            params.setflags(write=False)
        object.__setattr__(self, "params", params)

    @property
    def byte_size(self) -> int:
        return self.params.size * mod.BYTES_PER_PARAM

    def segments(self) -> list[tuple[int, int]]:
        """(start, stop) per component: one per modality head, then fusion."""
        spans = []
        offset = 0
        for d, h in zip(self.widths_in, self.widths_out):
            spans.append((offset, offset + (d + 1) * h))
            offset = spans[-1][1]
        total_h = sum(self.widths_out)
        spans.append((offset, offset + (total_h + 1) * self.num_classes))
        return spans

    def component_bytes(self, component: int) -> int:
        start, stop = self.segments()[component]
        return (stop - start) * mod.BYTES_PER_PARAM

    def with_params(self, params: np.ndarray) -> "FusionStack":
        return replace(self, params=np.asarray(params, dtype=np.float64))


def init_stack(widths_in, widths_out, num_classes: int, seed: int) -> FusionStack:
    total = sum((d + 1) * h for d, h in zip(widths_in, widths_out))
    total += (sum(widths_out) + 1) * num_classes
    params = make_rng(seed).uniform(-mod.INIT_SCALE, mod.INIT_SCALE, size=total)
    return FusionStack(tuple(widths_in), tuple(widths_out), num_classes, params)


def _unpack_stack(stack: FusionStack):
    parts = []
    offset = 0
    p = stack.params
    for d, h in zip(stack.widths_in, stack.widths_out):
        parts.append((p[offset : offset + d * h].reshape(d, h), p[offset + d * h : offset + (d + 1) * h]))
        offset += (d + 1) * h
    total_h = sum(stack.widths_out)
    c = stack.num_classes
    fusion_w = p[offset : offset + total_h * c].reshape(total_h, c)
    fusion_b = p[offset + total_h * c :]
    return parts, fusion_w, fusion_b


def stack_scores(stack: FusionStack, features: np.ndarray) -> np.ndarray:
    parts, fusion_w, fusion_b = _unpack_stack(stack)
    pieces = []
    offset = 0
    for (w, b), d in zip(parts, stack.widths_in):
        pieces.append(features[:, offset : offset + d] @ w + b)
        offset += d
    hidden = np.concatenate(pieces, axis=1)
    return hidden @ fusion_w + fusion_b


def stack_predict(stack: FusionStack, features: np.ndarray) -> np.ndarray:
    return np.argmax(stack_scores(stack, features), axis=1)


def _stack_gradient(stack: FusionStack, x: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    n = x.shape[0]
    parts, fusion_w, fusion_b = _unpack_stack(stack)
    pieces = []
    offset = 0
    for (w, b), d in zip(parts, stack.widths_in):
        pieces.append(x[:, offset : offset + d] @ w + b)
        offset += d
    hidden = np.concatenate(pieces, axis=1)
    scores = hidden @ fusion_w + fusion_b
    shifted = scores - scores.max(axis=1, keepdims=True)
    expd = np.exp(shifted)
    probs = expd / expd.sum(axis=1, keepdims=True)
    loss = float(np.mean(np.log(expd.sum(axis=1)) - shifted[np.arange(n), y]))
    dscores = probs
    dscores[np.arange(n), y] -= 1.0
    dscores /= n
    grad_fusion_w = hidden.T @ dscores
    grad_fusion_b = dscores.sum(axis=0)
    dhidden = dscores @ fusion_w.T
    flat = []
    in_off = 0
    h_off = 0
    for (w, _b), d, h in zip(parts, stack.widths_in, stack.widths_out):
        dh = dhidden[:, h_off : h_off + h]
        flat.append((x[:, in_off : in_off + d].T @ dh).ravel())
        flat.append(dh.sum(axis=0))
        in_off += d
        h_off += h
    flat.append(grad_fusion_w.ravel())
    flat.append(grad_fusion_b)
    return loss, np.concatenate(flat)


def train_stack(
    stack: FusionStack,
    features: np.ndarray,
    labels: np.ndarray,
    epochs: int,
    batch_size: int,
    learning_rate: float,
    seed: int,
) -> tuple[FusionStack, float]:
    """End-to-end minibatch SGD with the same contract as model training."""
    n = features.shape[0]
    if n < 1:
        raise DataError("training needs at least one sample")
    if epochs == 0:
        shifted = stack_scores(stack, features)
        shifted -= shifted.max(axis=1, keepdims=True)
        log_z = np.log(np.exp(shifted).sum(axis=1))
        return stack, float(np.mean(log_z - shifted[np.arange(n), labels]))
    rng = make_rng(seed)
    params = stack.params.copy()
    current = stack.with_params(params)
    final_loss = 0.0
    for epoch in range(epochs):
        order = rng.permutation(n)
        loss_sum = 0.0
        for start in range(0, n, batch_size):
            batch = order[start : start + batch_size]
            with np.errstate(over="ignore", invalid="ignore"):
                loss, grad = _stack_gradient(current, features[batch], labels[batch])
            if not np.isfinite(loss):
                raise DivergenceError(f"non-finite loss at epoch {epoch}", epoch)
            loss_sum += loss * batch.size
            params = params - learning_rate * grad
            current = stack.with_params(params)
        if not np.all(np.isfinite(params)):
            raise DivergenceError(f"non-finite parameters at epoch {epoch}", epoch)
        final_loss = loss_sum / n
    return current, final_loss


@dataclass
class _FusedClient:
    client_id: int
    train_x: np.ndarray
    test_x: np.ndarray
    train_labels: np.ndarray
    test_labels: np.ndarray


def fuse_features(datasets: list[ClientDataset]) -> tuple[list[_FusedClient], list[int], dict[int, int]]:
    """Concatenate modality features in global order, zero-filling gaps."""
    if not datasets:
        raise DataError("need at least one client dataset")
    dims = modality_dims(datasets)
    order = sorted(dims)
    fused = []
    for d in datasets:
        parts_train, parts_test = [], []
        n_train = d.train_labels.shape[0]
        n_test = d.test_labels.shape[0]
        for m in order:
            if m in d.train_features:
                parts_train.append(d.train_features[m])
                parts_test.append(d.test_features[m])
            else:
                parts_train.append(np.zeros((n_train, dims[m])))
                parts_test.append(np.zeros((n_test, dims[m])))
        fused.append(_FusedClient(
            client_id=d.client_id,
            train_x=np.concatenate(parts_train, axis=1),
            test_x=np.concatenate(parts_test, axis=1),
            train_labels=d.train_labels,
            test_labels=d.test_labels,
        ))
    return fused, order, dims


def _fused_report(round_index, per_client, uploads, ledger) -> fed.RoundReport:
    vals = [v for v in per_client.values() if v is not None]
    return fed.RoundReport(
        round_index=round_index,
        per_client_accuracy=per_client,
        mean_accuracy=float(np.mean(vals)) if vals else float("nan"),
        modality_choices={},
        selected_clients={},
        uploads=tuple(uploads),
        bytes_this_round=sum(u.nbytes for u in uploads),
        cumulative_bytes=ledger.cumulative_bytes,
        shapley_magnitudes={},
    )


def _fedavg_fused_rounds(clients, trainer, predictor, budget_bytes, max_rounds, upload_fn):
    """Shared FedAvg loop over fused per-client models.

    ``trainer(client, t) -> local_state`` trains from the current global;
    ``upload_fn(locals, t, ledger) -> (new_global, uploads)`` decides what
    travels and what the ledger charges.
    """
    ledger = fed.CommLedger(budget_bytes=budget_bytes, clients_total=len(clients))
    reports = []
    for t in range(1, max_rounds + 1):
        locals_ = {c.client_id: trainer(c, t) for c in clients}
        state, uploads = upload_fn(locals_, t, ledger)
        per_client = {}
        for c in clients:
            if c.test_labels.size == 0:
                per_client[c.client_id] = None
            else:
                preds = predictor(state, c.test_x)
                per_client[c.client_id] = float((preds == c.test_labels).mean())
        reports.append(_fused_report(t, per_client, uploads, ledger))
        if ledger.budget_reached():
            break
    return reports


def run_data_level(
    datasets: list[ClientDataset],
    config: fed.FederationConfig,
    budget_bytes: float,
    max_rounds: int = fed.DEFAULT_MAX_ROUNDS,
    num_classes: int | None = None,
) -> list[fed.RoundReport]:
    """FedAvg over one classifier on the concatenated raw features."""
    fused, _order, dims = fuse_features(datasets)
    if num_classes is None:
        num_classes = num_classes_of(datasets)
    width = sum(dims.values())
    global_model = mod.init_model(config.arch, width, num_classes,
                                  seed=derive_seed(config.master_seed, "fused-init"))
    counts = np.array([c.train_labels.shape[0] for c in fused], dtype=np.float64)
    weights = counts / counts.sum()

    holder = {"model": global_model}

    def trainer(client, t):
        trained, _ = mod.train_local(
            holder["model"], client.train_x, client.train_labels,
            config.epochs, config.batch_size, config.learning_rate,
            seed=derive_seed(config.master_seed, t, "train", client.client_id),
        )
        return trained

    def upload_fn(locals_, t, ledger):
        ordered = [locals_[c.client_id] for c in fused]
        new_global = mod.weighted_sum(ordered, weights)
        holder["model"] = new_global
        uploads = [
            fed.LedgerEntry(t, c.client_id, FUSED, locals_[c.client_id].byte_size)
            for c in fused
        ]
        for u in uploads:
            ledger.record(u.round_index, u.client, u.modality, u.nbytes)
        return new_global, uploads

    return _fedavg_fused_rounds(fused, trainer, mod.predict, budget_bytes, max_rounds, upload_fn)


def _run_stack_baseline(datasets, config, budget_bytes, max_rounds, widths_out_of,
                        num_classes, per_component: bool):
    fused, order, dims = fuse_features(datasets)
    if num_classes is None:
        num_classes = num_classes_of(datasets)
    widths_in = tuple(dims[m] for m in order)
    widths_out = widths_out_of(len(order), num_classes)
    stack0 = init_stack(widths_in, widths_out, num_classes,
                        seed=derive_seed(config.master_seed, "stack-init"))
    counts = {c.client_id: float(c.train_labels.shape[0]) for c in fused}
    total_count = sum(counts.values())
    holder = {"stack": stack0}
    num_components = len(order) + 1

    def trainer(client, t):
        trained, _ = train_stack(
            holder["stack"], client.train_x, client.train_labels,
            config.epochs, config.batch_size, config.learning_rate,
            seed=derive_seed(config.master_seed, t, "train", client.client_id),
        )
        return trained

    def upload_all(locals_, t, ledger):
        stacked = np.stack([locals_[c.client_id].params for c in fused])
        w = np.array([counts[c.client_id] for c in fused]) / total_count
        new_stack = holder["stack"].with_params(w @ stacked)
        holder["stack"] = new_stack
        uploads = [
            fed.LedgerEntry(t, c.client_id, FUSED, locals_[c.client_id].byte_size)
            for c in fused
        ]
        for u in uploads:
            ledger.record(u.round_index, u.client, u.modality, u.nbytes)
        return new_stack, uploads

    def upload_one_component(locals_, t, ledger):
        segments = holder["stack"].segments()
        senders: dict[int, list[int]] = {}
        for c in fused:
            comp = int(make_rng(derive_seed(config.master_seed, t, "component", c.client_id))
                       .integers(num_components))
            senders.setdefault(comp, []).append(c.client_id)
        params = holder["stack"].params.copy()
        uploads = []
        for comp in sorted(senders):
            ids = senders[comp]
            w = np.array([counts[k] for k in ids])
            w /= w.sum()
            start, stop = segments[comp]
            params[start:stop] = w @ np.stack([locals_[k].params[start:stop] for k in ids])
            nbytes = (stop - start) * mod.BYTES_PER_PARAM
            uploads.extend(fed.LedgerEntry(t, k, comp, nbytes) for k in ids)
        new_stack = holder["stack"].with_params(params)
        holder["stack"] = new_stack
        uploads.sort(key=lambda u: u.client)
        for u in uploads:
            ledger.record(u.round_index, u.client, u.modality, u.nbytes)
        return new_stack, uploads

    upload_fn = upload_one_component if per_component else upload_all
    return _fedavg_fused_rounds(fused, trainer, stack_predict, budget_bytes, max_rounds, upload_fn)


def run_feature_level(
    datasets: list[ClientDataset],
    config: fed.FederationConfig,
    budget_bytes: float,
    max_rounds: int = fed.DEFAULT_MAX_ROUNDS,
    num_classes: int | None = None,
    hidden_units: int = DEFAULT_HIDDEN_UNITS,
) -> list[fed.RoundReport]:
    """FedAvg over per-modality encoders joined by a shared linear head."""
    return _run_stack_baseline(
        datasets, config, budget_bytes, max_rounds,
        widths_out_of=lambda m, _c: (hidden_units,) * m,
        num_classes=num_classes, per_component=False,
    )


def run_decision_level_baseline(
    datasets: list[ClientDataset],
    config: fed.FederationConfig,
    budget_bytes: float,
    max_rounds: int = fed.DEFAULT_MAX_ROUNDS,
    num_classes: int | None = None,
) -> list[fed.RoundReport]:
    """FedAvg over per-modality class scorers plus a linear fusion layer."""
    return _run_stack_baseline(
        datasets, config, budget_bytes, max_rounds,
        widths_out_of=lambda m, c: (c,) * m,
        num_classes=num_classes, per_component=False,
    )


def run_random_submodel(
    datasets: list[ClientDataset],
    config: fed.FederationConfig,
    budget_bytes: float,
    max_rounds: int = fed.DEFAULT_MAX_ROUNDS,
    num_classes: int | None = None,
) -> list[fed.RoundReport]:
    """Decision-level architecture where each client uploads one uniformly
    chosen component per round; the server aggregates whatever arrives."""
    return _run_stack_baseline(
        datasets, config, budget_bytes, max_rounds,
        widths_out_of=lambda m, c: (c,) * m,
        num_classes=num_classes, per_component=True,
    )


def run_ablation(
    datasets: list[ClientDataset],
    config: fed.FederationConfig,
    kind: BaselineKind,
    budget_bytes: float,
    max_rounds: int = fed.DEFAULT_MAX_ROUNDS,
    num_classes: int | None = None,
) -> list[fed.RoundReport]:
    """Selective pipeline with modality and/or client choice randomized."""
    if kind not in (BaselineKind.RANDOM_MODALITY, BaselineKind.RANDOM_CLIENT, BaselineKind.RANDOM_BOTH):
        raise DataError(f"{kind} is not an ablation of the selective pipeline")
    selection = config.selection
    if kind in (BaselineKind.RANDOM_CLIENT, BaselineKind.RANDOM_BOTH):
        selection = replace(selection, loss_direction=sel.RANDOM)
    random_modality = kind in (BaselineKind.RANDOM_MODALITY, BaselineKind.RANDOM_BOTH)
    run_config = replace(config, selection=selection, random_modality=random_modality)
    server, clients = fed.init_clients(datasets, run_config, num_classes=num_classes)
    return fed.run_until_budget(server, clients, run_config, budget_bytes, max_rounds)


def expected_submodel_fraction(num_modalities: int) -> float:
    """Long-run share of rounds in which any one component travels."""
    return 1.0 / (num_modalities + 1)


def stack_param_count(widths_in, widths_out, num_classes: int) -> int:
    total = sum((d + 1) * h for d, h in zip(widths_in, widths_out))
    return total + (sum(widths_out) + 1) * num_classes


def decision_level_bytes(dims: list[int], num_classes: int) -> int:
    """Serialized size of the decision-level stack for given feature dims."""
    return stack_param_count(dims, [num_classes] * len(dims), num_classes) * mod.BYTES_PER_PARAM


def data_level_bytes(dims: list[int], num_classes: int) -> int:
    """Serialized size of the data-level fused classifier."""
    return (sum(dims) + 1) * num_classes * mod.BYTES_PER_PARAM
