"""One client's local update for a round.

Each epoch re-draws the labeled subset by confidence, pairs every labeled
mini-batch with an unlabeled one (drawn cyclically), pseudo-labels the
unlabeled batch with the GLOBAL model behind a confidence gate, and applies
momentum SGD on the combined supervised + unlabeled loss.

Image augmentations are replaced by vector perturbations: weak = Gaussian
jitter, strong = jitter plus random coordinate masking.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .data import ClientShard
from .errors import ConfigError, DivergenceError
from .model import (
    ModelParams,
    OptimizerConfig,
    OptimizerState,
    forward,
    loss_and_grad,
    sgd_step,
)
from .sampling import (
    SamplingConfig,
    confidence_scores,
    local_data_probabilities,
    sample_labeled_subset,
)
from .util import round_half_up


@dataclass(frozen=True)
class SslConfig:
    threshold: float = 0.95  # pseudo-label acceptance gate
    lambda_u: float = 1.0  # weight of the unlabeled loss
    weak_noise_std: float = 0.05
    strong_noise_std: float = 0.15
    strong_mask_fraction: float = 0.25
    num_weak_augments: int = 1  # predictions averaged before the argmax

    def __post_init__(self):
        if not 0.0 < self.threshold <= 1.0:
            raise ConfigError("threshold must lie in (0, 1]")
        if self.lambda_u < 0:
            raise ConfigError("lambda_u must be nonnegative")
        if self.weak_noise_std < 0 or self.strong_noise_std < self.weak_noise_std:
            raise ConfigError("need 0 <= weak_noise_std <= strong_noise_std")
        if not 0.0 <= self.strong_mask_fraction < 1.0:
            raise ConfigError("strong_mask_fraction must lie in [0, 1)")
        if self.num_weak_augments < 1:
            raise ConfigError("num_weak_augments must be >= 1")


class SslBatchStats(NamedTuple):
    unlabeled: int
    accepted: int


@dataclass
class LocalUpdateReport:
    """What one local round produced, for aggregation and telemetry."""

    client_id: int
    epochs_run: int
    batches_run: int
    labeled_indices: list[np.ndarray]  # the labeled subset drawn in each epoch
    pseudo_label_acceptance_rate: float | None  # None if nothing was gated
    params: ModelParams
    unlabeled_seen: int = 0
    unlabeled_accepted: int = 0


def weak_augment(x: np.ndarray, std: float, rng: np.random.Generator) -> np.ndarray:
    """Gaussian jitter; std 0 is the identity and consumes no randomness."""
    x = np.asarray(x, dtype=np.float64)
    if std == 0.0:
        return x.copy()
    return x + std * rng.standard_normal(x.shape)


def strong_augment(
    x: np.ndarray, std: float, mask_fraction: float, rng: np.random.Generator
) -> np.ndarray:
    """Jitter plus zeroing round(mask_fraction * d) coordinates per sample."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    out = weak_augment(np.atleast_2d(x), std, rng)
    d = out.shape[1]
    m = round_half_up(mask_fraction * d)
    if m > 0:
        # per-row random coordinate choice without replacement
        cols = np.argsort(rng.random(out.shape), axis=1)[:, :m]
        rows = np.arange(out.shape[0])[:, None]
        out[rows, cols] = 0.0
    return out[0] if single else out


def pseudo_label(
    global_params: ModelParams,
    x: np.ndarray,
    threshold: float,
    rng: np.random.Generator,
    weak_std: float = 0.0,
    num_augments: int = 1,
):
    """Pseudo-labels from the GLOBAL model with a confidence gate.

    The prediction is averaged over num_augments weak augmentations at
    temperature 1; a sample passes the gate when the averaged probability of
    its argmax class reaches the threshold. Returns (labels, accepted) as
    arrays for a batch, or (int, bool) for a single vector.
    """
    if not 0.0 < threshold <= 1.0:
        raise ConfigError("threshold must lie in (0, 1]")
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    xb = np.atleast_2d(x)
    q = np.zeros((xb.shape[0], global_params.desc.num_classes))
    for _ in range(num_augments):
        q += forward(global_params, weak_augment(xb, weak_std, rng), temperature=1.0)
    q /= num_augments
    labels = np.argmax(q, axis=1)
    accepted = q[np.arange(xb.shape[0]), labels] >= threshold
    if single:
        return int(labels[0]), bool(accepted[0])
    return labels, accepted


def combined_loss_and_grad(
    local_params: ModelParams,
    global_params: ModelParams,
    x_features: np.ndarray,
    x_labels: np.ndarray,
    u_features: np.ndarray | None,
    ssl_cfg: SslConfig,
    rng: np.random.Generator,
) -> tuple[float, np.ndarray, SslBatchStats]:
    """Supervised loss on the labeled batch plus gated pseudo-label loss.

    L_x is the cross entropy of the LOCAL model on weakly augmented labeled
    samples with their given labels. L_u averages, over the whole unlabeled
    batch, gate * CE(pseudo-label, local model on strongly augmented input),
    where gate and pseudo-label come from the global model and are treated
    as constants. Total is L_x + lambda_u * L_u; the gradient is with
    respect to the local parameters only.
    """
    x_features = np.atleast_2d(np.asarray(x_features, dtype=np.float64))
    if x_features.shape[0] == 0:
        raise ConfigError("labeled batch must be nonempty")
    xw = weak_augment(x_features, ssl_cfg.weak_noise_std, rng)
    loss, grad = loss_and_grad(local_params, xw, x_labels)
    stats = SslBatchStats(0, 0)
    if (
        u_features is not None
        and len(u_features) > 0
        and ssl_cfg.lambda_u > 0.0
    ):
        u_features = np.atleast_2d(np.asarray(u_features, dtype=np.float64))
        labels_u, accepted = pseudo_label(
            global_params,
            u_features,
            ssl_cfg.threshold,
            rng,
            weak_std=ssl_cfg.weak_noise_std,
            num_augments=ssl_cfg.num_weak_augments,
        )
        us = strong_augment(
            u_features, ssl_cfg.strong_noise_std, ssl_cfg.strong_mask_fraction, rng
        )
        loss_u, grad_u = loss_and_grad(
            local_params, us, labels_u, weights=accepted.astype(np.float64)
        )
        loss = loss + ssl_cfg.lambda_u * loss_u
        grad = grad + ssl_cfg.lambda_u * grad_u
        stats = SslBatchStats(len(u_features), int(accepted.sum()))
    return loss, grad, stats


def _batches(indices: np.ndarray, batch_size: int) -> list[np.ndarray]:
    return [indices[i : i + batch_size] for i in range(0, len(indices), batch_size)]


def local_update(
    global_params: ModelParams,
    shard: ClientShard,
    epochs: int,
    sampling_cfg: SamplingConfig,
    ssl_cfg: SslConfig,
    opt_cfg: OptimizerConfig,
    rng: np.random.Generator,
    uniform_data: bool = False,
) -> LocalUpdateReport:
    """Run `epochs` local epochs starting from the global model.

    The per-sample selection probabilities depend only on the fixed global
    model, so they are computed once; the labeled/unlabeled split is
    re-drawn from them every epoch. Each labeled mini-batch is paired with
    one unlabeled batch taken cyclically from the epoch's unlabeled pool.
    batches_run counts every processed batch (labeled and unlabeled).
    """
    if epochs < 1:
        raise ConfigError(f"epochs must be >= 1, got {epochs}")
    if uniform_data:
        probs = np.full(shard.n_k, 1.0 / shard.n_k)
    else:
        scores = confidence_scores(global_params, shard, sampling_cfg.temperature)
        probs = local_data_probabilities(scores)

    theta = global_params.copy()
    velocity = OptimizerState.zeros(theta.desc)
    batches_run = 0
    unlabeled_seen = 0
    unlabeled_accepted = 0
    labeled_sets: list[np.ndarray] = []

    try:
        for _ in range(epochs):
            labeled, unlabeled = sample_labeled_subset(
                shard, probs, sampling_cfg.clean_fraction, rng
            )
            labeled_sets.append(labeled)
            use_ssl = ssl_cfg.lambda_u > 0.0 and len(unlabeled) > 0
            u_batches = _batches(unlabeled, opt_cfg.batch_size) if use_ssl else []
            for step, x_idx in enumerate(_batches(labeled, opt_cfg.batch_size)):
                u_idx = u_batches[step % len(u_batches)] if use_ssl else None
                _, grad, stats = combined_loss_and_grad(
                    theta,
                    global_params,
                    shard.features[x_idx],
                    shard.given_labels[x_idx],
                    shard.features[u_idx] if u_idx is not None else None,
                    ssl_cfg,
                    rng,
                )
                theta, velocity = sgd_step(theta, velocity, grad, opt_cfg)
                batches_run += 1 + (1 if u_idx is not None else 0)
                unlabeled_seen += stats.unlabeled
                unlabeled_accepted += stats.accepted
    except DivergenceError as exc:
        raise DivergenceError(f"client {shard.client_id}: {exc}") from exc

    rate = unlabeled_accepted / unlabeled_seen if unlabeled_seen else None
    return LocalUpdateReport(
        client_id=shard.client_id,
        epochs_run=epochs,
        batches_run=batches_run,
        labeled_indices=labeled_sets,
        pseudo_label_acceptance_rate=rate,
        params=theta,
        unlabeled_seen=unlabeled_seen,
        unlabeled_accepted=unlabeled_accepted,
    )
