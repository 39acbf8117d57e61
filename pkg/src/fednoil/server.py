"""Round orchestration: scoring, client selection, local updates, aggregation.

One experiment is a sequence of rounds. Each round broadcasts the global
model, lets every client upload its summed confidence score, samples a
client subset from those scores, runs the schedule's number of local epochs
on the selected clients, and aggregates the resulting models weighted by
shard size (renormalized over the subset).

Method variants are plain configuration substitutions over this single code
path, which is what makes the degeneracy chain exact: vanilla FedAvg is
FedNoiL with uniform sampling everywhere, the full shard as labeled data, no
unlabeled loss, and no augmentation noise.
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .data import (
    ClientShard,
    Dataset,
    NoiseSpec,
    PartitionSpec,
    apply_noise,
    generate_synthetic,
    load_idx,
    partition,
)
from .errors import ConfigError, DivergenceError, ProtocolError
from .localtrain import LocalUpdateReport, SslConfig, local_update
from .model import (
    ModelDescriptor,
    ModelParams,
    OptimizerConfig,
    evaluate_accuracy,
    init_params,
    params_to_blob,
)
from .sampling import (
    ClientScore,
    SamplingConfig,
    client_probabilities,
    confidence_scores,
    sample_clients,
)
from .schedule import ScheduleSpec, epochs_at
from .telemetry import RoundRecord, avg_selected_noise_ratio, label_precision_recall
from .util import derive_rng

log = logging.getLogger(__name__)

VARIANTS = (
    "fednoil",
    "vanilla_fedavg",
    "uniform_client_sampling",
    "uniform_local_data_sampling",
    "no_ssl",
)

# accuracy window length for the convergence rule: five consecutive deltas
CONVERGENCE_WINDOW = 6
CONVERGENCE_DELTA_PCT = 2.0

# purpose tags for keyed random streams (noise streams are namespaced
# separately inside data.apply_noise)
_TAG_TRAIN_DATA = 0
_TAG_TEST_DATA = 1
_TAG_PARTITION = 2
_TAG_INIT = 4
_TAG_SELECT = 5
_TAG_CLIENT = 6


@dataclass(frozen=True)
class DataConfig:
    """Where the train/test data comes from."""

    source: str = "synthetic"  # synthetic | idx
    num_classes: int = 4
    dim: int = 10
    samples_per_class: int = 250
    test_samples_per_class: int = 250
    cluster_spread: float = 0.3
    train_images: str = ""
    train_labels: str = ""
    test_images: str = ""
    test_labels: str = ""

    def __post_init__(self):
        if self.source not in ("synthetic", "idx"):
            raise ConfigError(f"unknown data source {self.source!r}")
        if self.source == "idx" and not (
            self.train_images and self.train_labels and self.test_images and self.test_labels
        ):
            raise ConfigError("idx source needs all four image/label paths")


@dataclass(frozen=True)
class ExperimentConfig:
    """Full declarative description of one run."""

    data: DataConfig = DataConfig()
    partition: PartitionSpec = PartitionSpec()
    noise: NoiseSpec = NoiseSpec()
    hidden: int = 16
    activation: str = "tanh"
    optimizer: OptimizerConfig = OptimizerConfig()
    sampling: SamplingConfig = SamplingConfig()
    ssl: SslConfig = SslConfig()
    schedule: ScheduleSpec = ScheduleSpec(kind="cosine", rounds=200, r_min=80)
    rounds: int = 200
    method: str = "fednoil"
    seed: int = 0
    # ablation overrides, OR-ed with whatever the method variant implies
    uniform_client: bool = False
    uniform_data: bool = False
    checkpoint_interval: int = 0  # rounds between checkpoints; 0 disables
    log_real_time: bool = False  # fill wall_ms with measured milliseconds

    def __post_init__(self):
        if self.method not in VARIANTS:
            raise ConfigError(f"unknown method variant {self.method!r}")
        if self.rounds < 0:
            raise ConfigError("rounds must be nonnegative")
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative")
        if self.schedule.rounds != self.rounds:
            raise ConfigError(
                f"schedule covers {self.schedule.rounds} rounds, experiment has {self.rounds}"
            )
        if self.checkpoint_interval < 0:
            raise ConfigError("checkpoint_interval must be nonnegative")


@dataclass(frozen=True)
class _EffectiveMethod:
    """Concrete component substitutions for a method variant."""

    sampling: SamplingConfig
    ssl: SslConfig
    uniform_client: bool
    uniform_data: bool


def resolve_variant(config: ExperimentConfig) -> _EffectiveMethod:
    sampling_cfg = config.sampling
    ssl_cfg = config.ssl
    uniform_client = config.uniform_client
    uniform_data = config.uniform_data
    if config.method == "vanilla_fedavg":
        # plain FedAvg: uniform selection, full-shard CE, no SSL, no jitter
        uniform_client = True
        uniform_data = True
        sampling_cfg = replace(sampling_cfg, clean_fraction=1.0)
        ssl_cfg = replace(
            ssl_cfg,
            lambda_u=0.0,
            weak_noise_std=0.0,
            strong_noise_std=0.0,
            strong_mask_fraction=0.0,
        )
    elif config.method == "uniform_client_sampling":
        uniform_client = True
    elif config.method == "uniform_local_data_sampling":
        uniform_data = True
    elif config.method == "no_ssl":
        ssl_cfg = replace(ssl_cfg, lambda_u=0.0)
    return _EffectiveMethod(sampling_cfg, ssl_cfg, uniform_client, uniform_data)


@dataclass
class GlobalState:
    """Server-side loop state between rounds."""

    round: int
    params: ModelParams
    client_scores: dict[int, float] = field(default_factory=dict)
    accuracy_window: list[float] = field(default_factory=list)
    cum_batches: int = 0

    def push_accuracy(self, acc: float) -> None:
        self.accuracy_window.append(acc)
        if len(self.accuracy_window) > CONVERGENCE_WINDOW:
            del self.accuracy_window[0]

    def window_converged(self) -> bool:
        """True when the last five consecutive deltas are all below 2 points."""
        if len(self.accuracy_window) < CONVERGENCE_WINDOW:
            return False
        w = self.accuracy_window
        return all(
            abs(w[i + 1] - w[i]) * 100.0 < CONVERGENCE_DELTA_PCT
            for i in range(len(w) - 1)
        )


def aggregate(
    models: Mapping[int, tuple[ModelParams, int]], subset: Sequence[int]
) -> ModelParams:
    """Average the subset's models weighted by shard size.

    Weights are renormalized over the subset so the update stays a convex
    combination. The reduction runs in ascending client-id order, making the
    result independent of how the subset was produced.
    """
    ids = sorted(subset)
    if not ids:
        raise ProtocolError("cannot aggregate an empty client subset")
    first = models[ids[0]][0]
    total = sum(models[k][1] for k in ids)
    if total <= 0:
        raise ProtocolError("aggregation weights sum to zero")
    acc = np.zeros_like(first.flat)
    for k in ids:
        params_k, n_k = models[k]
        if params_k.desc != first.desc:
            raise ProtocolError("cannot aggregate models with different architectures")
        acc += (n_k / total) * params_k.flat
    return ModelParams(first.desc, acc)


def build_environment(config: ExperimentConfig) -> tuple[list[ClientShard], Dataset]:
    """Materialize the client shards (with noise) and the clean test set."""
    if config.data.source == "synthetic":
        train = generate_synthetic(
            config.data.num_classes,
            config.data.dim,
            config.data.samples_per_class,
            config.data.cluster_spread,
            derive_rng(config.seed, _TAG_TRAIN_DATA),
        )
        test = generate_synthetic(
            config.data.num_classes,
            config.data.dim,
            config.data.test_samples_per_class,
            config.data.cluster_spread,
            derive_rng(config.seed, _TAG_TEST_DATA),
        )
    else:
        train = load_idx(config.data.train_images, config.data.train_labels)
        test = load_idx(config.data.test_images, config.data.test_labels)
    shards = partition(train, config.partition, derive_rng(config.seed, _TAG_PARTITION))
    shards = apply_noise(shards, config.noise, config.seed)
    return shards, test


def run_round(
    state: GlobalState,
    shards: Sequence[ClientShard],
    test_data: Dataset,
    config: ExperimentConfig,
) -> tuple[GlobalState, RoundRecord]:
    """Execute one communication round and return the new state + telemetry.

    Clients whose local training diverges are dropped from aggregation for
    the round; the round fails only if every selected client diverges.
    """
    start = time.perf_counter()
    r = state.round + 1
    method = resolve_variant(config)
    theta = state.params
    K = len(shards)

    if method.uniform_client:
        probs = np.full(K, 1.0 / K)
        scores: dict[int, float] = dict(state.client_scores)
    else:
        uploads = [
            ClientScore(
                shard.client_id,
                float(
                    confidence_scores(theta, shard, method.sampling.temperature).sum()
                ),
                shard.n_k,
            )
            for shard in shards
        ]
        probs = client_probabilities(uploads)
        scores = {u.client_id: u.s_k for u in uploads}

    count = math.ceil(method.sampling.client_fraction * K)
    selected = sample_clients(probs, count, derive_rng(config.seed, _TAG_SELECT, r))
    epochs = epochs_at(r, config.schedule)

    reports: dict[int, LocalUpdateReport] = {}
    diverged: list[int] = []
    for k in sorted(int(c) for c in selected):
        try:
            reports[k] = local_update(
                theta,
                shards[k],
                epochs,
                method.sampling,
                method.ssl,
                config.optimizer,
                derive_rng(config.seed, _TAG_CLIENT, r, k),
                uniform_data=method.uniform_data,
            )
        except DivergenceError as exc:
            log.warning("round %d: dropping diverged client %d (%s)", r, k, exc)
            diverged.append(k)
    if not reports:
        raise ProtocolError(f"round {r}: all selected clients diverged ({diverged})")

    new_params = aggregate(
        {k: (rep.params, shards[k].n_k) for k, rep in reports.items()},
        list(reports.keys()),
    )
    accuracy = evaluate_accuracy(new_params, test_data)

    selected_shards = [shards[int(c)] for c in selected]
    event_sets = []
    event_shards = []
    for k, rep in reports.items():
        for idx in rep.labeled_indices:
            event_sets.append(idx)
            event_shards.append(shards[k])
        if log.isEnabledFor(logging.DEBUG):
            p_k, r_k = label_precision_recall(
                rep.labeled_indices, [shards[k]] * len(rep.labeled_indices)
            )
            log.debug("round %d client %d: precision=%s recall=%s", r, k, p_k, r_k)
    precision, recall = label_precision_recall(event_sets, event_shards)
    seen = sum(rep.unlabeled_seen for rep in reports.values())
    accepted = sum(rep.unlabeled_accepted for rep in reports.values())
    batches = sum(rep.batches_run for rep in reports.values())

    new_state = GlobalState(
        round=r,
        params=new_params,
        client_scores=scores,
        accuracy_window=list(state.accuracy_window),
        cum_batches=state.cum_batches + batches,
    )
    new_state.push_accuracy(accuracy)

    record = RoundRecord(
        round=r,
        selected=tuple(int(c) for c in selected),
        epochs=epochs,
        accuracy=accuracy,
        noise_ratio=avg_selected_noise_ratio(selected_shards),
        precision=precision,
        recall=recall,
        cum_batches=new_state.cum_batches,
        pl_accept=accepted / seen if seen else None,
        wall_ms=(time.perf_counter() - start) * 1000.0 if config.log_real_time else None,
    )
    return new_state, record


@dataclass
class ExperimentSummary:
    rounds: int
    final_accuracy: float
    max_accuracy: float
    converged: bool
    first_converged_round: int | None

    @property
    def reported_accuracy(self) -> float:
        """Final accuracy when converged, otherwise the best round's."""
        return self.final_accuracy if self.converged else self.max_accuracy


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list[RoundRecord]
    summary: ExperimentSummary
    initial_accuracy: float
    final_params: ModelParams
    param_history: list[np.ndarray] | None = None


def run_experiment(
    config: ExperimentConfig,
    out_dir=None,
    track_params: bool = False,
) -> ExperimentResult:
    """Run all rounds of one configured experiment.

    The run is converged when the last five consecutive accuracy deltas are
    each below two percentage points; a converged run reports its final
    accuracy and a non-converged one reports its maximum. Checkpoints (when
    enabled) go to out_dir as parameter blobs.
    """
    shards, test_data = build_environment(config)
    if config.partition.num_clients != len(shards):
        raise ConfigError("partition produced an unexpected number of shards")
    empty = [s.client_id for s in shards if s.n_k == 0]
    if empty:
        raise ConfigError(f"clients {empty} received no samples; shrink num_clients")

    desc = ModelDescriptor(
        input_dim=test_data.dim,
        hidden=config.hidden,
        num_classes=test_data.num_classes,
        activation=config.activation,
    )
    params = init_params(desc, derive_rng(config.seed, _TAG_INIT))
    state = GlobalState(round=0, params=params)
    initial_accuracy = evaluate_accuracy(params, test_data)

    out_path = Path(out_dir) if out_dir is not None else None
    if out_path is not None:
        out_path.mkdir(parents=True, exist_ok=True)

    records: list[RoundRecord] = []
    history: list[np.ndarray] | None = [params.flat.copy()] if track_params else None
    first_converged = None
    for _ in range(config.rounds):
        state, record = run_round(state, shards, test_data, config)
        records.append(record)
        if track_params:
            history.append(state.params.flat.copy())
        if first_converged is None and state.window_converged():
            first_converged = state.round
        if (
            out_path is not None
            and config.checkpoint_interval > 0
            and state.round % config.checkpoint_interval == 0
        ):
            blob = params_to_blob(state.params)
            (out_path / f"round_{state.round:04d}.params").write_bytes(blob)

    accuracies = [rec.accuracy for rec in records]
    summary = ExperimentSummary(
        rounds=config.rounds,
        final_accuracy=accuracies[-1] if accuracies else initial_accuracy,
        max_accuracy=max(accuracies) if accuracies else initial_accuracy,
        converged=state.window_converged(),
        first_converged_round=first_converged,
    )
    return ExperimentResult(
        config=config,
        records=records,
        summary=summary,
        initial_accuracy=initial_accuracy,
        final_params=state.params,
        param_history=history,
    )
