"""Trajectory analytics: accuracy-versus-communication curves, per-modality
impact series, and upload-frequency histograms.

Everything here is a pure function of an immutable trajectory. Tabular
output goes to CSV (one row per point, header included) or a JSON
array-of-objects mirror; rendering is left to external tools.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path

from .federation import RoundReport

MB = float(2**20)


@dataclass(frozen=True)
class Trajectory:
    """Ordered round reports plus run provenance."""

    reports: tuple[RoundReport, ...]
    num_clients: int
    config_echo: dict = field(default_factory=dict)
    seed_echo: int = 0

    def __post_init__(self):
        for i, report in enumerate(self.reports):
            if report.round_index != i + 1:
                raise ValueError("round indices must increase strictly from 1")


def accuracy_vs_comm(trajectory: Trajectory) -> list[tuple[float, float]]:
    """One (cumulative MB per client, mean accuracy) point per round."""
    if not trajectory.reports:
        raise ValueError("empty trajectory")
    return [
        (r.cumulative_bytes / (trajectory.num_clients * MB), r.mean_accuracy)
        for r in trajectory.reports
    ]


def shapley_trajectory(trajectory: Trajectory) -> dict[int, list[tuple[int, float]]]:
    """Per modality, the round series of mean |impact| over owning clients."""
    series: dict[int, list[tuple[int, float]]] = {}
    for report in trajectory.reports:
        sums: dict[int, float] = {}
        counts: dict[int, int] = {}
        for per_modality in report.shapley_magnitudes.values():
            for m, value in per_modality.items():
                sums[m] = sums.get(m, 0.0) + value
                counts[m] = counts.get(m, 0) + 1
        for m in sums:
            series.setdefault(m, []).append((report.round_index, sums[m] / counts[m]))
    return series


def selection_histogram(trajectory: Trajectory, axis: str = "client") -> dict[int, int]:
    """Upload-event counts per client or per modality across all rounds."""
    if axis not in ("client", "modality"):
        raise ValueError("axis must be 'client' or 'modality'")
    counts: dict[int, int] = {}
    if axis == "client":
        for report in trajectory.reports:
            for k in report.per_client_accuracy:
                counts.setdefault(k, 0)
    for report in trajectory.reports:
        for upload in report.uploads:
            key = upload.client if axis == "client" else upload.modality
            counts[key] = counts.get(key, 0) + 1
    return dict(sorted(counts.items()))


def curve_records(trajectory: Trajectory) -> list[dict]:
    """Array-of-objects mirror of the accuracy-versus-communication table."""
    clients = sorted(trajectory.reports[0].per_client_accuracy) if trajectory.reports else []
    records = []
    for (mb, acc), report in zip(accuracy_vs_comm(trajectory), trajectory.reports):
        record = {"round": report.round_index, "cum_mb_per_client": mb, "mean_acc": acc}
        for k in clients:
            record[f"per_client_acc_{k}"] = report.per_client_accuracy.get(k)
        records.append(record)
    return records


def shapley_records(trajectory: Trajectory) -> list[dict]:
    """Array-of-objects mirror of the per-modality impact series."""
    records = []
    for m, entries in sorted(shapley_trajectory(trajectory).items()):
        for round_index, value in entries:
            records.append({"round": round_index, "modality": m, "mean_abs_shapley": value})
    records.sort(key=lambda r: (r["round"], r["modality"]))
    return records


def histogram_records(trajectory: Trajectory) -> list[dict]:
    """Array-of-objects mirror of the upload-frequency histogram."""
    records = [
        {"id": f"client_{k}", "count": count}
        for k, count in selection_histogram(trajectory, "client").items()
    ]
    records += [
        {"id": f"modality_{m}", "count": count}
        for m, count in selection_histogram(trajectory, "modality").items()
    ]
    return records


def write_records_json(path: str | Path, records: list[dict]) -> None:
    """Write an analytics record list as deterministic JSON."""
    Path(path).write_text(json.dumps(records, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def _write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        writer = csv.writer(handle, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_curve_csv(path: str | Path, trajectory: Trajectory) -> None:
    """Columns: round, cum_mb_per_client, mean_acc, per_client_acc_<k>..."""
    clients = sorted(trajectory.reports[0].per_client_accuracy) if trajectory.reports else []
    header = ["round", "cum_mb_per_client", "mean_acc"] + [f"per_client_acc_{k}" for k in clients]
    rows = []
    for (mb, acc), report in zip(accuracy_vs_comm(trajectory), trajectory.reports):
        row = [report.round_index, repr(mb), repr(acc)]
        for k in clients:
            value = report.per_client_accuracy.get(k)
            row.append("" if value is None else repr(value))
        rows.append(row)
    _write_csv(Path(path), header, rows)


def write_shapley_csv(path: str | Path, trajectory: Trajectory) -> None:
    """Columns: round, modality, mean_abs_shapley."""
    series = shapley_trajectory(trajectory)
    rows = []
    for m in sorted(series):
        for round_index, value in series[m]:
            rows.append([round_index, m, repr(value)])
    rows.sort(key=lambda r: (r[0], r[1]))
    _write_csv(Path(path), ["round", "modality", "mean_abs_shapley"], rows)


def write_histogram_csv(path: str | Path, trajectory: Trajectory) -> None:
    """Columns: id, count; ids are ``client_<k>`` and ``modality_<m>`` rows."""
    rows = []
    for k, count in selection_histogram(trajectory, "client").items():
        rows.append([f"client_{k}", count])
    for m, count in selection_histogram(trajectory, "modality").items():
        rows.append([f"modality_{m}", count])
    _write_csv(Path(path), ["id", "count"], rows)


def _report_to_dict(report: RoundReport) -> dict:
    return {
        "round": report.round_index,
        "mean_accuracy": report.mean_accuracy,
        "per_client_accuracy": {str(k): v for k, v in sorted(report.per_client_accuracy.items())},
        "selected_modalities": {
            str(k): list(choice.selected) for k, choice in sorted(report.modality_choices.items())
        },
        "selected_clients": {str(m): list(v) for m, v in sorted(report.selected_clients.items())},
        "uploads": [
            {"client": u.client, "modality": u.modality, "bytes": u.nbytes}
            for u in report.uploads
        ],
        "bytes_this_round": report.bytes_this_round,
        "cumulative_bytes": report.cumulative_bytes,
        "shapley_magnitudes": {
            str(k): {str(m): v for m, v in sorted(per.items())}
            for k, per in sorted(report.shapley_magnitudes.items())
        },
    }


def write_trajectory_json(path: str | Path, trajectory: Trajectory) -> None:
    """Full trajectory with config and seed echoes, deterministic bytes."""
    payload = {
        "seed": trajectory.seed_echo,
        "num_clients": trajectory.num_clients,
        "config": trajectory.config_echo,
        "rounds": [_report_to_dict(r) for r in trajectory.reports],
    }
    Path(path).write_text(json.dumps(payload, sort_keys=True, indent=2) + "\n", encoding="utf-8")


def summarize(trajectory: Trajectory) -> dict:
    """Final accuracy, per-round communication, and round count."""
    if not trajectory.reports:
        raise ValueError("empty trajectory")
    last = trajectory.reports[-1]
    rounds = len(trajectory.reports)
    mb_per_round = last.cumulative_bytes / (trajectory.num_clients * MB * rounds)
    return {
        "final_mean_accuracy": last.mean_accuracy,
        "mb_per_client_per_round": mb_per_round,
        "comm_rounds": rounds,
    }
