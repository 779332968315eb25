"""Batch experiment runner.

``fedsel run <config.json>`` executes one experiment per seed and writes,
under ``<output_dir>/<config stem>/seed_<s>/``:

* ``trajectory.json`` - full round-by-round record,
* ``accuracy_vs_comm.csv`` - accuracy against cumulative MB per client,
* ``shapley_trajectory.csv`` - mean |impact| per modality per round,
* ``selection_histogram.csv`` - upload counts per client and per modality,
* ``summary.json`` - final accuracy, MB per round, round count.

With several seeds a ``summary_across_seeds.json`` (mean and sample
stddev) is added. ``fedsel compare <a.json> <b.json> ...`` runs configs
that share a dataset and budget and writes a one-row-per-method table.
Exit codes: 0 success, 1 runtime failure (partial artifacts removed),
2 invalid configuration.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from pathlib import Path

from . import baselines, data, federation, metrics
from .config import SELECTIVE, ExperimentConfig, load_config, normalized_echo
from .errors import ComparabilityError, ConfigError, FedselError
from .seeding import derive_seed

log = logging.getLogger(__name__)

ARTIFACT_NAMES = (
    "trajectory.json",
    "accuracy_vs_comm.csv",
    "shapley_trajectory.csv",
    "selection_histogram.csv",
    "summary.json",
)


def build_datasets(config: ExperimentConfig, master_seed: int) -> list[data.ClientDataset]:
    """Materialize the configured dataset for one master seed."""
    ds = config.dataset
    if ds.kind == "csv":
        schema = data.CsvSchema(
            train_fraction=ds.csv_schema.train_fraction,
            seed=derive_seed(master_seed, "csv-split", ds.csv_schema.seed),
            num_classes=ds.csv_schema.num_classes,
        )
        return data.load_csv(ds.csv_path, schema)
    spec = ds.synthetic
    effective = data.DatasetSpec(
        num_clients=spec.num_clients,
        modalities=spec.modalities,
        num_classes=spec.num_classes,
        regime=spec.regime,
        natural=spec.natural,
        missing_modality_rate=spec.missing_modality_rate,
        train_fraction=spec.train_fraction,
        samples_per_client=spec.samples_per_client,
        seed=derive_seed(master_seed, "data", spec.seed),
    )
    return data.generate(effective)


def _federation_config(config: ExperimentConfig, master_seed: int) -> federation.FederationConfig:
    return federation.FederationConfig(
        selection=config.selection,
        epochs=config.training.epochs,
        batch_size=config.training.batch_size,
        learning_rate=config.training.learning_rate,
        arch=config.training.arch,
        num_trees=config.ensemble.num_trees,
        tree_depth=config.ensemble.max_depth,
        shapley_samples=config.ensemble.shapley_samples,
        shapley_mean_of_abs=config.ensemble.shapley_mean_of_abs,
        master_seed=master_seed,
    )


def run_single_seed(config: ExperimentConfig, master_seed: int) -> metrics.Trajectory:
    """Run the configured method once and wrap the reports."""
    datasets = build_datasets(config, master_seed)
    num_classes = config.dataset.num_classes
    if num_classes is None:
        num_classes = data.num_classes_of(datasets)
    fed_config = _federation_config(config, master_seed)
    budget = config.budget_bytes
    rounds = config.max_rounds
    method = config.method

    if method == SELECTIVE:
        server, clients = federation.init_clients(datasets, fed_config, num_classes)
        reports = federation.run_until_budget(server, clients, fed_config, budget, rounds)
    elif method == baselines.BaselineKind.DATA_LEVEL.value:
        reports = baselines.run_data_level(datasets, fed_config, budget, rounds, num_classes)
    elif method == baselines.BaselineKind.FEATURE_LEVEL.value:
        reports = baselines.run_feature_level(
            datasets, fed_config, budget, rounds, num_classes,
            hidden_units=config.training.fusion_hidden_units)
    elif method == baselines.BaselineKind.DECISION_LEVEL.value:
        reports = baselines.run_decision_level_baseline(datasets, fed_config, budget, rounds, num_classes)
    elif method == baselines.BaselineKind.RANDOM_SUBMODEL.value:
        reports = baselines.run_random_submodel(datasets, fed_config, budget, rounds, num_classes)
    else:
        reports = baselines.run_ablation(
            datasets, fed_config, baselines.BaselineKind(method), budget, rounds, num_classes)

    return metrics.Trajectory(
        reports=tuple(reports),
        num_clients=len(datasets),
        config_echo=normalized_echo(config),
        seed_echo=master_seed,
    )


def _write_json(path: Path, payload: dict) -> None:
    path.write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _write_seed_artifacts(seed_dir: Path, trajectory: metrics.Trajectory,
                          created: list[Path]) -> dict:
    seed_dir.mkdir(parents=True, exist_ok=True)
    paths = {name: seed_dir / name for name in ARTIFACT_NAMES}
    metrics.write_trajectory_json(paths["trajectory.json"], trajectory)
    metrics.write_curve_csv(paths["accuracy_vs_comm.csv"], trajectory)
    metrics.write_shapley_csv(paths["shapley_trajectory.csv"], trajectory)
    metrics.write_histogram_csv(paths["selection_histogram.csv"], trajectory)
    summary = metrics.summarize(trajectory)
    summary["seed"] = trajectory.seed_echo
    _write_json(paths["summary.json"], summary)
    created.extend(paths.values())
    return summary


def _mean_std(values: list[float]) -> dict:
    n = len(values)
    mean = sum(values) / n
    if n > 1:
        var = sum((v - mean) ** 2 for v in values) / (n - 1)
        std = math.sqrt(var)
    else:
        std = 0.0
    return {"mean": mean, "stddev": std}


def run_experiment(config_path: str | Path, output_dir: str | None = None,
                   seeds: list[int] | None = None, max_rounds: int | None = None) -> Path:
    """Execute every seed of one config; returns the run directory.

    Raises :class:`ConfigError` on invalid input; on runtime failure the
    partially written artifacts are removed before the error propagates.
    """
    config = load_config(config_path)
    if output_dir is not None:
        config = _override(config, output_dir=output_dir)
    if seeds is not None:
        config = _override(config, seeds=tuple(seeds))
    if max_rounds is not None:
        if max_rounds < 1:
            raise ConfigError("max_rounds must be >= 1", "max_rounds")
        config = _override(config, max_rounds=max_rounds)

    run_dir = Path(config.output_dir) / Path(config_path).stem
    created: list[Path] = []
    summaries = []
    try:
        for seed in config.seeds:
            log.info("running %s seed %d", config.method, seed)
            trajectory = run_single_seed(config, seed)
            summary = _write_seed_artifacts(run_dir / f"seed_{seed}", trajectory, created)
            summaries.append(summary)
        if len(config.seeds) > 1:
            cross = {
                "seeds": list(config.seeds),
                "final_mean_accuracy": _mean_std([s["final_mean_accuracy"] for s in summaries]),
                "mb_per_client_per_round": _mean_std([s["mb_per_client_per_round"] for s in summaries]),
                "comm_rounds": _mean_std([float(s["comm_rounds"]) for s in summaries]),
            }
            cross_path = run_dir / "summary_across_seeds.json"
            _write_json(cross_path, cross)
            created.append(cross_path)
    except Exception:
        for path in created:
            path.unlink(missing_ok=True)
        raise
    return run_dir


def _override(config: ExperimentConfig, **changes) -> ExperimentConfig:
    from dataclasses import replace

    return replace(config, **changes)


def _dataset_signature(config: ExperimentConfig) -> str:
    block = dict(config.raw.get("dataset", {}))
    return json.dumps(block, sort_keys=True)


def compare(config_paths: list[str | Path], output_dir: str | None = None,
            seeds: list[int] | None = None, max_rounds: int | None = None) -> Path:
    """Run several configs on the same data and tabulate their summaries."""
    if len(config_paths) < 2:
        raise ComparabilityError("compare needs at least two configs")
    configs = [load_config(p) for p in config_paths]
    signatures = {_dataset_signature(c) for c in configs}
    if len(signatures) != 1:
        raise ComparabilityError("configs do not share a dataset spec")
    if len({c.budget_mb for c in configs}) != 1:
        raise ComparabilityError("configs do not share a budget")

    rows = []
    for path, cfg in zip(config_paths, configs):
        run_dir = run_experiment(path, output_dir=output_dir, seeds=seeds, max_rounds=max_rounds)
        finals, mbs, rounds = [], [], []
        for seed in (seeds if seeds is not None else cfg.seeds):
            summary = json.loads((run_dir / f"seed_{seed}" / "summary.json").read_text())
            finals.append(summary["final_mean_accuracy"])
            mbs.append(summary["mb_per_client_per_round"])
            rounds.append(summary["comm_rounds"])
        rows.append([
            cfg.method,
            repr(sum(finals) / len(finals)),
            repr(sum(mbs) / len(mbs)),
            repr(sum(rounds) / len(rounds)),
        ])
    rows.sort(key=lambda r: r[0])
    base = Path(output_dir) if output_dir is not None else Path(configs[0].output_dir)
    base.mkdir(parents=True, exist_ok=True)
    table = base / "comparison.csv"
    lines = ["method,mean_accuracy,mb_per_client_per_round,comm_rounds"]
    lines += [",".join(str(cell) for cell in row) for row in rows]
    table.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return table


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fedsel",
        description="Run communication-budgeted multimodal federated learning experiments.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one experiment config")
    run_p.add_argument("config", help="path to a JSON experiment config")
    compare_p = sub.add_parser("compare", help="run and tabulate several configs")
    compare_p.add_argument("configs", nargs="+", help="config paths sharing dataset and budget")
    for p in (run_p, compare_p):
        p.add_argument("--output-dir", default=None, help="override the configured output directory")
        p.add_argument("--seeds", default=None, help="comma-separated seed override")
        p.add_argument("--max-rounds", type=int, default=None, help="override the round cap")
    return parser


def _parse_seeds(text: str | None) -> list[int] | None:
    if text is None:
        return None
    try:
        return [int(part) for part in text.split(",") if part.strip() != ""]
    except ValueError:
        raise ConfigError("seeds must be a comma-separated list of integers", "seeds") from None


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("FEDSEL_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        seeds = _parse_seeds(args.seeds)
        if args.command == "run":
            run_dir = run_experiment(args.config, args.output_dir, seeds, args.max_rounds)
            print(f"artifacts written to {run_dir}")
        else:
            table = compare(args.configs, args.output_dir, seeds, args.max_rounds)
            print(f"comparison written to {table}")
        return 0
    except (ConfigError, ComparabilityError) as err:
        print(f"error: {err}", file=sys.stderr)
        return 2
    except FedselError as err:
        print(f"runtime failure: {err}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
