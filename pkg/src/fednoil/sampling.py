"""Two-level sampling: confidence scoring, client selection, local-data selection.

All probabilities come from the global model's softmax confidence on the
given labels, sharpened by a low temperature. Clients are selected in
proportion to their summed confidence; within a client, samples are selected
in proportion to their individual confidence.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .data import ClientShard
from .errors import ConfigError
from .model import ModelParams, forward
from .util import round_half_up


@dataclass(frozen=True)
class SamplingConfig:
    temperature: float = 0.5
    clean_fraction: float = 0.35
    client_fraction: float = 0.3

    def __post_init__(self):
        if self.temperature <= 0:
            raise ConfigError("temperature must be positive")
        if not 0.0 < self.clean_fraction <= 1.0:
            raise ConfigError("clean_fraction must lie in (0, 1]")
        if not 0.0 < self.client_fraction <= 1.0:
            raise ConfigError("client_fraction must lie in (0, 1]")


@dataclass(frozen=True)
class ClientScore:
    """One client's uploaded scalar: the sum of its confidence scores."""

    client_id: int
    s_k: float
    n_k: int


def confidence_scores(
    global_params: ModelParams, shard: ClientShard, temperature: float
) -> np.ndarray:
    """Per-sample confidence of the GLOBAL model on the given labels."""
    if shard.n_k == 0:
        raise ConfigError(f"client {shard.client_id}: empty shard")
    probs = forward(global_params, shard.features, temperature)
    return probs[np.arange(shard.n_k), shard.given_labels]


def _normalize_or_uniform(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ConfigError("cannot normalize an empty score vector")
    if np.any(values < 0):
        raise ConfigError("scores must be nonnegative")
    total = values.sum()
    if total <= 0.0:
        # an uninformative model scores everything 0; fall back to uniform
        return np.full(values.size, 1.0 / values.size)
    return values / total


def client_probabilities(scores: Sequence[ClientScore]) -> np.ndarray:
    """Selection probability p_k = s_k / sum_j s_j, uniform if all zero."""
    return _normalize_or_uniform(np.array([cs.s_k for cs in scores]))


def local_data_probabilities(scores: np.ndarray) -> np.ndarray:
    """Per-sample selection probability, same normalization as clients."""
    return _normalize_or_uniform(scores)


def weighted_sample_without_replacement(
    p: np.ndarray, count: int, rng: np.random.Generator
) -> np.ndarray:
    """Sequential draw-and-renormalize sampling without replacement.

    Each draw picks an index with probability proportional to its remaining
    weight, then removes it. Once every positive-weight index is used up,
    remaining draws are uniform over the leftover indices.
    """
    p = np.asarray(p, dtype=np.float64)
    n = p.size
    if count > n:
        raise ConfigError(f"cannot draw {count} from {n} items without replacement")
    weights = np.clip(p, 0.0, None).copy()
    available = np.ones(n, dtype=bool)
    chosen = np.empty(count, dtype=np.int64)
    for i in range(count):
        total = weights.sum()
        if total > 0.0:
            idx = int(rng.choice(n, p=weights / total))
        else:
            idx = int(rng.choice(np.flatnonzero(available)))
        chosen[i] = idx
        weights[idx] = 0.0
        available[idx] = False
    return chosen


def sample_clients(p: np.ndarray, count: int, rng: np.random.Generator) -> np.ndarray:
    """Draw `count` client ids according to p, in draw order."""
    return weighted_sample_without_replacement(p, count, rng)


def sample_labeled_subset(
    shard: ClientShard,
    p: np.ndarray,
    clean_fraction: float,
    rng: np.random.Generator,
) -> tuple[np.ndarray, np.ndarray]:
    """Partition the shard's indices into a labeled subset and the rest.

    The labeled subset has round(clean_fraction * n_k) indices drawn without
    replacement by p (in draw order); the complement is returned shuffled so
    downstream batching does not follow storage order.
    """
    n = shard.n_k
    if np.asarray(p).shape != (n,):
        raise ConfigError("probability vector does not match shard size")
    m = round_half_up(clean_fraction * n)
    if m < 1:
        raise ConfigError(
            f"clean_fraction {clean_fraction} selects no samples from n_k={n}"
        )
    labeled = weighted_sample_without_replacement(p, m, rng)
    mask = np.ones(n, dtype=bool)
    mask[labeled] = False
    unlabeled = rng.permutation(np.flatnonzero(mask))
    return labeled, unlabeled
