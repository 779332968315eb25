"""Synthetic multimodal datasets and CSV ingestion.

Features are class-conditional Gaussians with unit covariance; a
modality's informativeness dial scales the minimum pairwise distance
between class means (0 = no signal, 1 = comfortably separable). The
``natural`` regime layers on three heterogeneity axes: per-group mean
offsets, Dirichlet-skewed label proportions, and log-normal per-client
sample counts. The ``iid`` regime pools everything and deals it back out
uniformly.

Rows stay aligned across a client's modalities: row i of every modality
matrix belongs to the same underlying sample and label.
"""

from __future__ import annotations

import csv
import math
import re
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AlignmentError, ConfigError, DataError, ParseError, SchemaError
from .seeding import derive_seed, make_rng

IID = "iid"
NATURAL = "natural"
SEPARATION_SCALE = 6.0


@dataclass(frozen=True)
class ModalitySpec:
    feature_dim: int
    informativeness: float


@dataclass(frozen=True)
class NaturalParams:
    """Heterogeneity dials for the natural-distribution regime."""

    label_concentration: float = 0.5
    group_count: int = 1
    group_shift: float = 0.0
    sample_log_mean: float = math.log(200.0)
    sample_log_sigma: float = 0.5


@dataclass(frozen=True)
class DatasetSpec:
    num_clients: int
    modalities: tuple[ModalitySpec, ...]
    num_classes: int
    regime: str = NATURAL
    natural: NaturalParams = field(default_factory=NaturalParams)
    missing_modality_rate: float = 0.0
    train_fraction: float = 0.75
    samples_per_client: int = 200
    seed: int = 0

    def __post_init__(self):
        if self.num_clients < 1:
            raise ConfigError("num_clients must be >= 1", "num_clients")
        if not self.modalities:
            raise ConfigError("need at least one modality", "modalities")
        for i, m in enumerate(self.modalities):
            if m.feature_dim < 1:
                raise ConfigError("feature_dim must be >= 1", f"modalities[{i}].feature_dim")
            if not 0.0 <= m.informativeness <= 1.0:
                raise ConfigError("informativeness must be in [0, 1]", f"modalities[{i}].informativeness")
        if self.num_classes < 2:
            raise ConfigError("num_classes must be >= 2", "num_classes")
        if self.regime not in (IID, NATURAL):
            raise ConfigError(f"regime must be '{IID}' or '{NATURAL}'", "regime")
        if not 0.0 <= self.missing_modality_rate < 1.0:
            raise ConfigError("missing_modality_rate must be in [0, 1)", "missing_modality_rate")
        if not 0.0 < self.train_fraction < 1.0:
            raise ConfigError("train_fraction must be in (0, 1)", "train_fraction")
        if self.samples_per_client < 2 * self.num_classes:
            raise ConfigError("samples_per_client too small for the class count", "samples_per_client")
        if self.natural.group_count < 1:
            raise ConfigError("group_count must be >= 1", "natural.group_count")
        if self.natural.label_concentration <= 0:
            raise ConfigError("label_concentration must be > 0", "natural.label_concentration")


@dataclass
class ClientDataset:
    """Aligned per-modality train/test matrices for one client."""

    client_id: int
    train_features: dict[int, np.ndarray]
    test_features: dict[int, np.ndarray]
    train_labels: np.ndarray
    test_labels: np.ndarray

    @property
    def modality_mask(self) -> tuple[int, ...]:
        return tuple(sorted(self.train_features))

    def sample_count(self, modality: int) -> int:
        return self.train_features[modality].shape[0]


def _class_means(dim: int, num_classes: int, informativeness: float, rng: np.random.Generator) -> np.ndarray:
    """Class means with minimum pairwise distance = informativeness * scale."""
    if informativeness == 0.0:
        return np.zeros((num_classes, dim))
    if dim >= num_classes:
        gauss = rng.standard_normal((dim, num_classes))
        q, _ = np.linalg.qr(gauss)
        layout = q[:, :num_classes].T  # orthonormal rows: pairwise distance sqrt(2)
    elif dim >= 2:
        angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
        layout = np.zeros((num_classes, dim))
        layout[:, 0] = np.cos(angles)
        layout[:, 1] = np.sin(angles)
    else:
        layout = np.linspace(-1.0, 1.0, num_classes)[:, None]
    diffs = layout[:, None, :] - layout[None, :, :]
    dist = np.sqrt((diffs**2).sum(axis=2))
    min_dist = dist[~np.eye(num_classes, dtype=bool)].min()
    return layout * (informativeness * SEPARATION_SCALE / min_dist)


def _client_groups(spec: DatasetSpec) -> np.ndarray:
    g = spec.natural.group_count
    return (np.arange(spec.num_clients) * g) // spec.num_clients


def _group_offsets(spec: DatasetSpec, means: np.ndarray) -> np.ndarray:
    """Per-group, per-class mean displacements of magnitude ``group_shift``.

    Group ``g`` drags class ``c`` toward class ``(c + g) mod C``'s mean, so
    groups disagree about the concept geometry rather than sharing a sensor
    bias: a shift near the class separation makes one group's class sit on
    another group's different-labelled class, giving a model pooled across
    groups genuinely conflicting objectives.
    """
    g = spec.natural.group_count
    c, dim = means.shape
    offsets = np.zeros((g, c, dim))
    if g == 1 or spec.natural.group_shift == 0.0:
        return offsets
    for group in range(1, g):
        target = np.roll(np.arange(c), -group)
        direction = means[target] - means
        norms = np.linalg.norm(direction, axis=1, keepdims=True)
        safe = np.where(norms > 0, norms, 1.0)
        offsets[group] = direction / safe * spec.natural.group_shift
    return offsets


def _modality_masks(spec: DatasetSpec, rng: np.random.Generator) -> list[list[int]]:
    m = len(spec.modalities)
    masks = []
    for _ in range(spec.num_clients):
        keep = [j for j in range(m) if rng.random() >= spec.missing_modality_rate]
        if not keep:
            keep = [int(rng.integers(m))]
        masks.append(keep)
    return masks


def _split(features: dict[int, np.ndarray], labels: np.ndarray, train_fraction: float,
           rng: np.random.Generator, client_id: int) -> ClientDataset:
    n = labels.shape[0]
    order = rng.permutation(n)
    cut = max(1, min(n - 1, int(round(train_fraction * n))))
    tr, te = order[:cut], order[cut:]
    return ClientDataset(
        client_id=client_id,
        train_features={m: x[tr] for m, x in features.items()},
        test_features={m: x[te] for m, x in features.items()},
        train_labels=labels[tr],
        test_labels=labels[te],
    )


def _natural_counts(spec: DatasetSpec, rng: np.random.Generator) -> np.ndarray:
    p = spec.natural
    floor = max(int(math.ceil(2 * spec.num_classes / spec.train_fraction)), 8)
    raw = rng.lognormal(p.sample_log_mean, p.sample_log_sigma, size=spec.num_clients)
    return np.maximum(np.round(raw).astype(int), floor)


def generate(spec: DatasetSpec) -> list[ClientDataset]:
    """Deterministically synthesize one multimodal dataset per client."""
    rng = make_rng(derive_seed(spec.seed, "dataset"))
    means = [
        _class_means(m.feature_dim, spec.num_classes, m.informativeness,
                     make_rng(derive_seed(spec.seed, "means", j)))
        for j, m in enumerate(spec.modalities)
    ]
    masks = _modality_masks(spec, rng)

    if spec.regime == IID:
        labels_per_client = _iid_labels(spec, rng)
    else:
        counts = _natural_counts(spec, rng)
        alpha = np.full(spec.num_classes, spec.natural.label_concentration)
        labels_per_client = [
            rng.choice(spec.num_classes, size=counts[k], p=rng.dirichlet(alpha))
            for k in range(spec.num_clients)
        ]

    groups = _client_groups(spec)
    offsets = [_group_offsets(spec, means[j]) for j in range(len(spec.modalities))]

    clients = []
    for k in range(spec.num_clients):
        labels = np.asarray(labels_per_client[k], dtype=np.int64)
        features = {}
        for j in masks[k]:
            dim = spec.modalities[j].feature_dim
            noise = rng.standard_normal((labels.shape[0], dim))
            x = means[j][labels] + noise
            if spec.regime == NATURAL:
                x = x + offsets[j][groups[k]][labels]
            features[j] = x
        clients.append(_split(features, labels, spec.train_fraction, rng, k))
    return clients


def _iid_labels(spec: DatasetSpec, rng: np.random.Generator) -> list[np.ndarray]:
    """Pool uniform labels, shuffle, deal equal shares; retry until every
    client sees every class (possible only when shares are large enough)."""
    n = spec.samples_per_client
    pool_size = n * spec.num_clients
    for _ in range(100):
        pool = rng.integers(0, spec.num_classes, size=pool_size)
        rng.shuffle(pool)
        shares = [pool[k * n : (k + 1) * n] for k in range(spec.num_clients)]
        if all(np.unique(s).size == spec.num_classes for s in shares):
            return shares
    raise DataError(
        "could not deal IID shares covering every class; increase samples_per_client"
    )


_FILE_PATTERN = re.compile(r"^client(\d+)_mod(\d+)\.csv$")


@dataclass(frozen=True)
class CsvSchema:
    """Expectations for a directory of ``client<k>_mod<m>.csv`` files."""

    train_fraction: float = 0.75
    seed: int = 0
    num_classes: int | None = None


def _read_csv(path: Path) -> tuple[np.ndarray, np.ndarray]:
    with open(path, newline="", encoding="utf-8") as handle:
        reader = csv.reader(handle)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path.name}: empty file, header row required") from None
        if not header or header[-1].strip() != "label":
            raise SchemaError(f"{path.name}: final column must be named 'label'")
        if len(header) < 2:
            raise SchemaError(f"{path.name}: need at least one feature column")
        rows, labels = [], []
        for row_idx, row in enumerate(reader):
            if len(row) != len(header):
                raise AlignmentError(
                    f"{path.name}: row {row_idx} has {len(row)} cells, header has {len(header)}"
                )
            values = []
            for col_idx, cell in enumerate(row[:-1]):
                try:
                    values.append(float(cell))
                except ValueError:
                    raise ParseError(
                        f"{path.name}: non-numeric cell at row {row_idx}, column {col_idx}",
                        row=row_idx, column=col_idx,
                    ) from None
            raw_label = row[-1].strip()
            try:
                label = int(raw_label)
            except ValueError:
                raise ParseError(
                    f"{path.name}: non-integer label at row {row_idx}",
                    row=row_idx, column=len(header) - 1,
                ) from None
            if label < 0:
                raise ParseError(
                    f"{path.name}: labels must be 0-based nonnegative, got {label} at row {row_idx}",
                    row=row_idx, column=len(header) - 1,
                )
            rows.append(values)
            labels.append(label)
    if not rows:
        raise DataError(f"{path.name}: no data rows")
    return np.asarray(rows, dtype=np.float64), np.asarray(labels, dtype=np.int64)


def load_csv(directory: str | Path, schema: CsvSchema = CsvSchema()) -> list[ClientDataset]:
    """Load ``client<k>_mod<m>.csv`` files into aligned client datasets.

    Each file holds numeric feature columns plus a final integer ``label``
    column under a header row. A client's modality files must agree row by
    row on count and label.
    """
    directory = Path(directory)
    found: dict[int, dict[int, Path]] = {}
    for path in sorted(directory.iterdir()):
        match = _FILE_PATTERN.match(path.name)
        if match:
            found.setdefault(int(match.group(1)), {})[int(match.group(2))] = path
    if not found:
        raise DataError(f"no client<k>_mod<m>.csv files found in {directory}")

    modality_widths: dict[int, int] = {}
    clients = []
    for k in sorted(found):
        features: dict[int, np.ndarray] = {}
        labels_ref: np.ndarray | None = None
        ref_name = ""
        for m in sorted(found[k]):
            x, y = _read_csv(found[k][m])
            if labels_ref is None:
                labels_ref, ref_name = y, found[k][m].name
            else:
                if y.shape[0] != labels_ref.shape[0]:
                    raise AlignmentError(
                        f"{found[k][m].name}: {y.shape[0]} rows but {ref_name} has {labels_ref.shape[0]}"
                    )
                if not np.array_equal(y, labels_ref):
                    raise AlignmentError(
                        f"{found[k][m].name}: label column disagrees with {ref_name}"
                    )
            width = x.shape[1]
            if m in modality_widths and modality_widths[m] != width:
                raise SchemaError(
                    f"{found[k][m].name}: modality {m} has {width} features, "
                    f"other clients have {modality_widths[m]}"
                )
            modality_widths[m] = width
            features[m] = x
        if schema.num_classes is not None and labels_ref.max() >= schema.num_classes:
            raise SchemaError(
                f"client {k}: label {labels_ref.max()} exceeds num_classes={schema.num_classes}"
            )
        rng = make_rng(derive_seed(schema.seed, "csv-split", k))
        clients.append(_split(features, labels_ref, schema.train_fraction, rng, k))
    return clients


def num_classes_of(clients: list[ClientDataset]) -> int:
    """Smallest class universe covering every client's labels."""
    top = 0
    for c in clients:
        if c.train_labels.size:
            top = max(top, int(c.train_labels.max()))
        if c.test_labels.size:
            top = max(top, int(c.test_labels.max()))
    return top + 1


def modality_dims(clients: list[ClientDataset]) -> dict[int, int]:
    """Feature width per modality across all clients."""
    dims: dict[int, int] = {}
    for c in clients:
        for m, x in c.train_features.items():
            dims[m] = x.shape[1]
    return dims
