"""Joint selection policies: which modality models a client offers for
upload, and which clients the server accepts per modality.

A client ranks its modalities by a composite priority blending three
normalized criteria: Shapley impact (higher is better), serialized model
size (smaller is better), and recency (longer since the last upload is
better). The server then keeps, per modality, the share of clients with
the most favourable local losses.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError
from .models import ModalityModel
from .seeding import make_rng

LOWER = "lower"
HIGHER = "higher"
RANDOM = "random"
_DIRECTIONS = (LOWER, HIGHER, RANDOM)

NEUTRAL_NORMALIZED = 0.5


@dataclass(frozen=True)
class SelectionConfig:
    """Trade-off knobs for joint modality and client selection.

    ``gamma`` modality models are offered per client per round; per
    modality, ``delta`` of the client population (rounded half-up, at
    least one) is accepted. The alpha weights must sum to 1.
    """

    gamma: int = 1
    delta: float = 0.2
    alpha_shapley: float = 1.0 / 3.0
    alpha_size: float = 1.0 / 3.0
    alpha_recency: float = 1.0 / 3.0
    loss_direction: str = LOWER
    random_seed: int = 0

    def __post_init__(self):
        if self.gamma < 1:
            raise ConfigError("gamma must be >= 1", "gamma")
        if not 0.0 < self.delta <= 1.0:
            raise ConfigError("delta must be in (0, 1]", "delta")
        for name in ("alpha_shapley", "alpha_size", "alpha_recency"):
            if getattr(self, name) < 0:
                raise ConfigError("alpha weights must be nonnegative", name)
        total = self.alpha_shapley + self.alpha_size + self.alpha_recency
        if abs(total - 1.0) > 1e-9:
            raise ConfigError(f"alpha weights sum to {total!r}, expected 1", "alpha_shapley")
        if self.loss_direction not in _DIRECTIONS:
            raise ConfigError(f"loss_direction must be one of {_DIRECTIONS}", "loss_direction")


@dataclass
class RecencyTracker:
    """Last-upload round per (client, modality); 0 means never uploaded."""

    current_round: int = 1
    last_upload: dict[tuple[int, int], int] = field(default_factory=dict)

    def recency(self, client: int, modality: int) -> int:
        return self.current_round - self.last_upload.get((client, modality), 0) - 1

    def advance(self):
        self.current_round += 1


@dataclass(frozen=True)
class PriorityBreakdown:
    """Raw and normalized criteria with the resulting priorities."""

    raw_shapley: np.ndarray
    raw_sizes: np.ndarray
    raw_recency: np.ndarray
    normalized_shapley: np.ndarray
    normalized_size: np.ndarray
    normalized_recency: np.ndarray
    priority: np.ndarray


@dataclass(frozen=True)
class ModalityChoice:
    """Outcome of one client's modality selection for a round."""

    selected: tuple[int, ...]
    selected_models: tuple[ModalityModel, ...] = ()
    breakdown: PriorityBreakdown | None = None


def compute_recency(tracker: RecencyTracker, client: int, modality: int) -> int:
    """Rounds elapsed since the pair's last upload, minus one."""
    return tracker.recency(client, modality)


def mark_uploaded(tracker: RecencyTracker, pairs, round_index: int) -> RecencyTracker:
    """Record actual uploads; pairs not uploaded keep their history."""
    if round_index != tracker.current_round:
        raise ConfigError(
            f"mark_uploaded at round {round_index} but tracker is at {tracker.current_round}"
        )
    for client, modality in pairs:
        tracker.last_upload[(client, modality)] = round_index
    return tracker


def _minmax(values: np.ndarray) -> np.ndarray:
    lo, hi = values.min(), values.max()
    if hi == lo:
        return np.full(values.shape, NEUTRAL_NORMALIZED)
    return (values - lo) / (hi - lo)


def normalize_criteria(
    raw_shapley: np.ndarray,
    raw_sizes: np.ndarray,
    raw_recency: np.ndarray,
    current_round: int,
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Min-max normalize Shapley magnitudes and sizes; scale recency by the
    round index. A criterion whose values all coincide maps to the neutral
    constant 0.5 so it neither favours nor punishes any modality.
    """
    raw_shapley = np.asarray(raw_shapley, dtype=np.float64)
    raw_sizes = np.asarray(raw_sizes, dtype=np.float64)
    raw_recency = np.asarray(raw_recency, dtype=np.float64)
    if not (raw_shapley.shape == raw_sizes.shape == raw_recency.shape) or raw_shapley.ndim != 1:
        raise ConfigError("criterion vectors must share one dimension")
    if raw_shapley.size < 1:
        raise ConfigError("need at least one modality")
    if current_round < 1:
        raise ConfigError("current_round must be >= 1")
    return _minmax(raw_shapley), _minmax(raw_sizes), raw_recency / current_round


def compute_priority(
    normalized: tuple[np.ndarray, np.ndarray, np.ndarray],
    config: SelectionConfig,
) -> np.ndarray:
    """Composite score: impact up, size down, staleness up. Always in [0, 1]."""
    phi, size, recency = normalized
    return (
        config.alpha_shapley * phi
        + config.alpha_size * (1.0 - size)
        + config.alpha_recency * recency
    )


def select_modalities(
    priorities: np.ndarray,
    gamma: int,
    models: tuple[ModalityModel, ...] | None = None,
    breakdown: PriorityBreakdown | None = None,
) -> ModalityChoice:
    """Keep the ``min(gamma, M)`` highest-priority modalities.

    Ties break toward the lower modality index. ``priorities[i]`` is the
    score of the client's i-th modality; the returned indices refer to the
    same ordering.
    """
    if gamma < 1:
        raise ConfigError("gamma must be >= 1", "gamma")
    priorities = np.asarray(priorities, dtype=np.float64)
    count = min(gamma, priorities.size)
    order = np.argsort(-priorities, kind="stable")
    selected = tuple(sorted(int(i) for i in order[:count]))
    chosen_models = ()
    if models is not None:
        chosen_models = tuple(models[i] for i in selected)
    return ModalityChoice(selected=selected, selected_models=chosen_models, breakdown=breakdown)


def _target_count(delta: float, total_clients: int) -> int:
    return max(1, int(np.floor(delta * total_clients + 0.5)))


def select_clients(
    losses: dict[int, float],
    delta: float,
    total_clients: int,
    direction: str = LOWER,
    seed: int = 0,
) -> tuple[int, ...]:
    """Pick ``max(1, round(delta * K))`` clients from the eligible pool.

    ``lower`` keeps the smallest losses, ``higher`` the largest, ``random``
    a seeded uniform subset. Ties break toward the lower client index. An
    empty pool yields an empty selection.
    """
    if direction not in _DIRECTIONS:
        raise ConfigError(f"direction must be one of {_DIRECTIONS}", "loss_direction")
    if not losses:
        return ()
    count = min(_target_count(delta, total_clients), len(losses))
    clients = sorted(losses)
    if direction == RANDOM:
        picked = make_rng(seed).choice(len(clients), size=count, replace=False)
        return tuple(sorted(clients[i] for i in picked))
    sign = 1.0 if direction == LOWER else -1.0
    ranked = sorted(clients, key=lambda k: (sign * losses[k], k))
    return tuple(sorted(ranked[:count]))
