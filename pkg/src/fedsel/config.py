"""Declarative experiment configs: JSON in, validated dataclasses out.

A config names a dataset (synthetic spec or CSV directory), a method, the
selection/training knobs, a communication budget, and the seeds to run.
Validation happens before any compute; unknown keys are rejected and every
error names the offending field with a dotted path.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

from . import baselines, federation, models, selection
from .data import IID, NATURAL, CsvSchema, DatasetSpec, ModalitySpec, NaturalParams
from .errors import ConfigError

SELECTIVE = "selective"
METHODS = (SELECTIVE,) + tuple(kind.value for kind in baselines.BaselineKind)

_THIRD = 1.0 / 3.0


@dataclass(frozen=True)
class TrainingConfig:
    epochs: int = 5
    batch_size: int = 32
    learning_rate: float = 0.1
    arch: models.Arch = field(default_factory=models.LinearSoftmax)
    fusion_hidden_units: int = baselines.DEFAULT_HIDDEN_UNITS


@dataclass(frozen=True)
class EnsembleConfig:
    num_trees: int = 20
    max_depth: int = 6
    shapley_samples: int = 50
    shapley_mean_of_abs: bool = False


@dataclass(frozen=True)
class DatasetConfig:
    """Either a synthetic spec or a CSV directory."""

    kind: str
    synthetic: DatasetSpec | None = None
    csv_path: str | None = None
    csv_schema: CsvSchema | None = None
    num_classes: int | None = None


@dataclass(frozen=True)
class ExperimentConfig:
    method: str
    dataset: DatasetConfig
    selection: selection.SelectionConfig
    training: TrainingConfig
    ensemble: EnsembleConfig
    budget_mb: float
    max_rounds: int
    seeds: tuple[int, ...]
    output_dir: str
    raw: dict = field(repr=False, default_factory=dict)

    @property
    def budget_bytes(self) -> float:
        return self.budget_mb * float(2**20)


_REQUIRED = object()


def _check_unknown(obj: dict, allowed: set[str], path: str) -> None:
    for key in obj:
        if key not in allowed:
            raise ConfigError("unknown key", f"{path}.{key}" if path else key)


def _get(obj: dict, key: str, kind, path: str, default=_REQUIRED):
    if key not in obj:
        if default is _REQUIRED:
            raise ConfigError("missing required key", f"{path}.{key}" if path else key)
        return default
    value = obj[key]
    where = f"{path}.{key}" if path else key
    if kind is float:
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError("expected a number", where)
        return float(value)
    if kind is int:
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError("expected an integer", where)
        return value
    if not isinstance(value, kind):
        raise ConfigError(f"expected {kind.__name__}", where)
    return value


def _parse_arch(obj, path: str) -> models.Arch:
    if not isinstance(obj, dict):
        raise ConfigError("expected an object with a 'kind' key", path)
    _check_unknown(obj, {"kind", "hidden_units"}, path)
    kind = _get(obj, "kind", str, path)
    if kind == "linear":
        return models.LinearSoftmax()
    if kind == "mlp1":
        return models.Mlp1(hidden_units=_get(obj, "hidden_units", int, path, 8))
    raise ConfigError("arch kind must be 'linear' or 'mlp1'", f"{path}.kind")


def _parse_dataset(obj, path: str) -> DatasetConfig:
    if not isinstance(obj, dict):
        raise ConfigError("expected an object", path)
    kind = _get(obj, "kind", str, path)
    if kind == "csv":
        _check_unknown(obj, {"kind", "path", "train_fraction", "seed", "num_classes"}, path)
        return DatasetConfig(
            kind="csv",
            csv_path=_get(obj, "path", str, path),
            csv_schema=CsvSchema(
                train_fraction=_get(obj, "train_fraction", float, path, 0.75),
                seed=_get(obj, "seed", int, path, 0),
                num_classes=_get(obj, "num_classes", int, path, None),
            ),
            num_classes=_get(obj, "num_classes", int, path, None),
        )
    if kind != "synthetic":
        raise ConfigError("dataset kind must be 'synthetic' or 'csv'", f"{path}.kind")
    allowed = {"kind", "num_clients", "num_classes", "modalities", "regime", "natural",
               "missing_modality_rate", "train_fraction", "samples_per_client", "seed"}
    _check_unknown(obj, allowed, path)
    raw_mods = _get(obj, "modalities", list, path)
    mods = []
    for i, entry in enumerate(raw_mods):
        mod_path = f"{path}.modalities[{i}]"
        if not isinstance(entry, dict):
            raise ConfigError("expected an object", mod_path)
        _check_unknown(entry, {"feature_dim", "informativeness"}, mod_path)
        mods.append(ModalitySpec(
            feature_dim=_get(entry, "feature_dim", int, mod_path),
            informativeness=_get(entry, "informativeness", float, mod_path, 1.0),
        ))
    natural = NaturalParams()
    if "natural" in obj:
        nat = obj["natural"]
        nat_path = f"{path}.natural"
        if not isinstance(nat, dict):
            raise ConfigError("expected an object", nat_path)
        _check_unknown(nat, {"label_concentration", "group_count", "group_shift",
                             "sample_log_mean", "sample_log_sigma"}, nat_path)
        natural = NaturalParams(
            label_concentration=_get(nat, "label_concentration", float, nat_path, 0.5),
            group_count=_get(nat, "group_count", int, nat_path, 1),
            group_shift=_get(nat, "group_shift", float, nat_path, 0.0),
            sample_log_mean=_get(nat, "sample_log_mean", float, nat_path, math.log(200.0)),
            sample_log_sigma=_get(nat, "sample_log_sigma", float, nat_path, 0.5),
        )
    regime = _get(obj, "regime", str, path, NATURAL)
    if regime not in (IID, NATURAL):
        raise ConfigError(f"regime must be '{IID}' or '{NATURAL}'", f"{path}.regime")
    try:
        spec = DatasetSpec(
            num_clients=_get(obj, "num_clients", int, path),
            modalities=tuple(mods),
            num_classes=_get(obj, "num_classes", int, path),
            regime=regime,
            natural=natural,
            missing_modality_rate=_get(obj, "missing_modality_rate", float, path, 0.0),
            train_fraction=_get(obj, "train_fraction", float, path, 0.75),
            samples_per_client=_get(obj, "samples_per_client", int, path, 200),
            seed=_get(obj, "seed", int, path, 0),
        )
    except ConfigError as err:
        raise ConfigError(str(err).split(": ", 1)[-1], f"{path}.{err.field_path}") from None
    return DatasetConfig(kind="synthetic", synthetic=spec, num_classes=spec.num_classes)


def _parse_selection(obj, path: str) -> selection.SelectionConfig:
    if not isinstance(obj, dict):
        raise ConfigError("expected an object", path)
    allowed = {"gamma", "delta", "alpha_shapley", "alpha_size", "alpha_recency",
               "loss_direction", "random_seed"}
    _check_unknown(obj, allowed, path)
    try:
        return selection.SelectionConfig(
            gamma=_get(obj, "gamma", int, path, 1),
            delta=_get(obj, "delta", float, path, 0.2),
            alpha_shapley=_get(obj, "alpha_shapley", float, path, _THIRD),
            alpha_size=_get(obj, "alpha_size", float, path, _THIRD),
            alpha_recency=_get(obj, "alpha_recency", float, path, _THIRD),
            loss_direction=_get(obj, "loss_direction", str, path, selection.LOWER),
            random_seed=_get(obj, "random_seed", int, path, 0),
        )
    except ConfigError as err:
        raise ConfigError(str(err).split(": ", 1)[-1], f"{path}.{err.field_path}") from None


def parse_config(raw: dict) -> ExperimentConfig:
    """Validate a parsed JSON object into an :class:`ExperimentConfig`."""
    if not isinstance(raw, dict):
        raise ConfigError("config root must be an object")
    allowed = {"method", "dataset", "selection", "training", "ensemble",
               "budget_mb", "max_rounds", "seeds", "output_dir"}
    _check_unknown(raw, allowed, "")
    method = _get(raw, "method", str, "")
    if method not in METHODS:
        raise ConfigError(f"method must be one of {sorted(METHODS)}", "method")
    dataset = _parse_dataset(_get(raw, "dataset", dict, ""), "dataset")
    sel_cfg = _parse_selection(raw.get("selection", {}), "selection")

    training_raw = raw.get("training", {})
    if not isinstance(training_raw, dict):
        raise ConfigError("expected an object", "training")
    _check_unknown(training_raw, {"epochs", "batch_size", "learning_rate", "arch",
                                  "fusion_hidden_units"}, "training")
    training = TrainingConfig(
        epochs=_get(training_raw, "epochs", int, "training", 5),
        batch_size=_get(training_raw, "batch_size", int, "training", 32),
        learning_rate=_get(training_raw, "learning_rate", float, "training", 0.1),
        arch=_parse_arch(training_raw.get("arch", {"kind": "linear"}), "training.arch"),
        fusion_hidden_units=_get(training_raw, "fusion_hidden_units", int, "training",
                                 baselines.DEFAULT_HIDDEN_UNITS),
    )
    if training.epochs < 0:
        raise ConfigError("epochs must be >= 0", "training.epochs")
    if training.batch_size < 1:
        raise ConfigError("batch_size must be >= 1", "training.batch_size")
    if training.learning_rate < 0:
        raise ConfigError("learning_rate must be >= 0", "training.learning_rate")

    ensemble_raw = raw.get("ensemble", {})
    if not isinstance(ensemble_raw, dict):
        raise ConfigError("expected an object", "ensemble")
    _check_unknown(ensemble_raw, {"num_trees", "max_depth", "shapley_samples",
                                  "shapley_mean_of_abs"}, "ensemble")
    ensemble_cfg = EnsembleConfig(
        num_trees=_get(ensemble_raw, "num_trees", int, "ensemble", 20),
        max_depth=_get(ensemble_raw, "max_depth", int, "ensemble", 6),
        shapley_samples=_get(ensemble_raw, "shapley_samples", int, "ensemble", 50),
        shapley_mean_of_abs=_get(ensemble_raw, "shapley_mean_of_abs", bool, "ensemble", False),
    )
    if ensemble_cfg.num_trees < 1:
        raise ConfigError("num_trees must be >= 1", "ensemble.num_trees")
    if ensemble_cfg.max_depth < 0:
        raise ConfigError("max_depth must be >= 0", "ensemble.max_depth")
    if ensemble_cfg.shapley_samples < 1:
        raise ConfigError("shapley_samples must be >= 1", "ensemble.shapley_samples")

    budget_mb = _get(raw, "budget_mb", float, "", 5.0)
    if budget_mb <= 0:
        raise ConfigError("budget_mb must be > 0", "budget_mb")
    max_rounds = _get(raw, "max_rounds", int, "", federation.DEFAULT_MAX_ROUNDS)
    if max_rounds < 1:
        raise ConfigError("max_rounds must be >= 1", "max_rounds")
    seeds_raw = raw.get("seeds", [0])
    if (not isinstance(seeds_raw, list) or not seeds_raw
            or any(isinstance(s, bool) or not isinstance(s, int) for s in seeds_raw)):
        raise ConfigError("expected a nonempty list of integers", "seeds")
    output_dir = _get(raw, "output_dir", str, "", "results")

    return ExperimentConfig(
        method=method,
        dataset=dataset,
        selection=sel_cfg,
        training=training,
        ensemble=ensemble_cfg,
        budget_mb=budget_mb,
        max_rounds=max_rounds,
        seeds=tuple(seeds_raw),
        output_dir=output_dir,
        raw=raw,
    )


def load_config(path: str | Path) -> ExperimentConfig:
    """Read and validate a JSON config file."""
    path = Path(path)
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as err:
        raise ConfigError(f"invalid JSON in {path}: {err}") from None
    return parse_config(raw)


def normalized_echo(config: ExperimentConfig) -> dict:
    """Config as written plus the effective method/budget, for artifacts."""
    echo = dict(config.raw)
    echo["method"] = config.method
    echo["budget_mb"] = config.budget_mb
    echo["max_rounds"] = config.max_rounds
    return echo
