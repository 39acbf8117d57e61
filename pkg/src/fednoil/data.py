"""Datasets, client partitioning, and label-noise injection.

Provides a synthetic Gaussian-blob generator for desk-scale runs, an IDX
image/label loader for real data, IID and Dirichlet partitioners, and
exact-count symmetric/pair label flipping with per-group noise ratios.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, replace

import numpy as np

from .errors import AllocationError, ConfigError, ParseError
from .util import derive_seedseq, round_half_up

PARTITION_MODES = ("iid", "dirichlet_label", "dirichlet_size")
NOISE_FLAVORS = ("symmetric", "pair")
NOISE_MODES = ("high", "low", "custom")

# Per-group noise ratios, assigned to clients round-robin (client k is in
# group k mod G).
GROUP_RATIOS = {
    ("symmetric", "high"): (0.5, 0.6, 0.7, 0.8),
    ("symmetric", "low"): (0.3, 0.4, 0.5, 0.6),
    ("pair", "high"): (0.3, 0.5, 0.6, 0.8),
    ("pair", "low"): (0.3, 0.4, 0.5, 0.6),
}

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801

# namespace for per-client noise streams; keeps them disjoint from every
# other stream derived from the same master seed
_NOISE_STREAM = 0x4E4F4953


@dataclass
class Dataset:
    """A labelled feature matrix: features (n, d), integer labels in [0, C)."""

    features: np.ndarray
    true_labels: np.ndarray
    num_classes: int

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.true_labels = np.asarray(self.true_labels, dtype=np.int64)
        if self.features.ndim != 2:
            raise ConfigError(f"features must be 2-D, got shape {self.features.shape}")
        if self.true_labels.shape != (self.features.shape[0],):
            raise ConfigError(
                f"label count {self.true_labels.shape} does not match "
                f"{self.features.shape[0]} feature rows"
            )
        if self.num_classes < 2:
            raise ConfigError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.true_labels.size and (
            self.true_labels.min() < 0 or self.true_labels.max() >= self.num_classes
        ):
            raise ConfigError("labels out of range [0, num_classes)")

    @property
    def n(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]


@dataclass
class ClientShard:
    """One client's local data with both ground-truth and given labels."""

    client_id: int
    features: np.ndarray
    true_labels: np.ndarray
    given_labels: np.ndarray
    num_classes: int
    nominal_noise_ratio: float = 0.0

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.true_labels = np.asarray(self.true_labels, dtype=np.int64)
        self.given_labels = np.asarray(self.given_labels, dtype=np.int64)
        n = self.features.shape[0]
        if self.true_labels.shape != (n,) or self.given_labels.shape != (n,):
            raise ConfigError(f"client {self.client_id}: label/feature size mismatch")

    @property
    def n_k(self) -> int:
        return self.features.shape[0]

    @property
    def clean_mask(self) -> np.ndarray:
        return self.given_labels == self.true_labels

    def realized_noise_ratio(self) -> float:
        return float(np.mean(self.given_labels != self.true_labels))


@dataclass(frozen=True)
class PartitionSpec:
    """How to split a dataset across clients."""

    mode: str = "iid"
    num_clients: int = 20
    beta: float = 1.0
    samples_per_client: int | None = None  # None means "auto": use everything

    def __post_init__(self):
        if self.mode not in PARTITION_MODES:
            raise ConfigError(f"unknown partition mode {self.mode!r}")
        if self.num_clients < 1:
            raise ConfigError("num_clients must be >= 1")
        if self.beta <= 0:
            raise ConfigError("beta must be positive")
        if self.samples_per_client is not None and self.samples_per_client < 1:
            raise ConfigError("samples_per_client must be >= 1 or auto")


@dataclass(frozen=True)
class NoiseSpec:
    """Per-group label-noise configuration.

    Group ratios are assigned round-robin over clients; "custom" mode takes
    one explicit ratio per client instead.
    """

    flavor: str = "symmetric"
    mode: str = "high"
    custom_ratios: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.flavor not in NOISE_FLAVORS:
            raise ConfigError(f"unknown noise flavor {self.flavor!r}")
        if self.mode not in NOISE_MODES:
            raise ConfigError(f"unknown noise mode {self.mode!r}")
        if self.mode == "custom":
            if not self.custom_ratios:
                raise ConfigError("custom noise mode requires custom_ratios")
            if any(not 0.0 <= r <= 1.0 for r in self.custom_ratios):
                raise ConfigError("noise ratios must lie in [0, 1]")
        elif self.custom_ratios is not None:
            raise ConfigError("custom_ratios only valid with noise mode 'custom'")

    def group_ratios(self) -> tuple[float, ...]:
        if self.mode == "custom":
            return tuple(self.custom_ratios)
        return GROUP_RATIOS[(self.flavor, self.mode)]

    def ratio_for_client(self, client_id: int) -> float:
        ratios = self.group_ratios()
        return ratios[client_id % len(ratios)]


def class_means(num_classes: int, dim: int) -> np.ndarray:
    """Class centers: equally spaced on the unit circle in the first two
    coordinates, zero elsewhere."""
    angles = 2.0 * np.pi * np.arange(num_classes) / num_classes
    means = np.zeros((num_classes, dim))
    means[:, 0] = np.cos(angles)
    means[:, 1] = np.sin(angles)
    return means


def generate_synthetic(
    num_classes: int,
    dim: int,
    samples_per_class: int,
    cluster_spread: float,
    seed,
) -> Dataset:
    """Gaussian blobs around deterministic class means.

    Args:
        num_classes: number of classes C (>= 2).
        dim: feature dimension (>= 2); dimensions beyond the first two carry
            pure noise.
        samples_per_class: per-class sample count.
        cluster_spread: isotropic Gaussian standard deviation.
        seed: anything accepted by numpy's default_rng.
    """
    if num_classes < 2 or dim < 2 or samples_per_class < 1:
        raise ConfigError(
            f"invalid synthetic sizes: C={num_classes} d={dim} m={samples_per_class}"
        )
    if cluster_spread <= 0:
        raise ConfigError("cluster_spread must be positive")
    rng = np.random.default_rng(seed)
    means = class_means(num_classes, dim)
    feats = np.empty((num_classes * samples_per_class, dim))
    labels = np.repeat(np.arange(num_classes), samples_per_class)
    for c in range(num_classes):
        block = slice(c * samples_per_class, (c + 1) * samples_per_class)
        feats[block] = means[c] + cluster_spread * rng.standard_normal(
            (samples_per_class, dim)
        )
    order = rng.permutation(len(labels))
    return Dataset(feats[order], labels[order], num_classes)


def _read_exact(f, count: int, path: str) -> bytes:
    offset = f.tell()
    buf = f.read(count)
    if len(buf) != count:
        raise ParseError(
            f"{path}: truncated at byte {offset}: wanted {count} bytes, got {len(buf)}"
        )
    return buf


def load_idx(images_path: str, labels_path: str) -> Dataset:
    """Load an IDX image/label pair (big-endian, unsigned bytes).

    Pixels are scaled to [0, 1]; the class count is inferred from the
    largest label (at least 2).
    """
    with open(images_path, "rb") as f:
        (magic,) = struct.unpack(">I", _read_exact(f, 4, images_path))
        if magic != IDX_IMAGES_MAGIC:
            raise ParseError(
                f"{images_path}: bad magic 0x{magic:08x} at byte 0, "
                f"expected 0x{IDX_IMAGES_MAGIC:08x}"
            )
        n_img, rows, cols = struct.unpack(">III", _read_exact(f, 12, images_path))
        pixels = np.frombuffer(
            _read_exact(f, n_img * rows * cols, images_path), dtype=np.uint8
        )
    with open(labels_path, "rb") as f:
        (magic,) = struct.unpack(">I", _read_exact(f, 4, labels_path))
        if magic != IDX_LABELS_MAGIC:
            raise ParseError(
                f"{labels_path}: bad magic 0x{magic:08x} at byte 0, "
                f"expected 0x{IDX_LABELS_MAGIC:08x}"
            )
        (n_lab,) = struct.unpack(">I", _read_exact(f, 4, labels_path))
        labels = np.frombuffer(_read_exact(f, n_lab, labels_path), dtype=np.uint8)
    if n_img != n_lab:
        raise ParseError(
            f"count mismatch: {images_path} has {n_img} images, "
            f"{labels_path} has {n_lab} labels"
        )
    features = pixels.reshape(n_img, rows * cols).astype(np.float64) / 255.0
    num_classes = max(int(labels.max()) + 1 if labels.size else 2, 2)
    return Dataset(features, labels.astype(np.int64), num_classes)


def _allocate_counts(total: int, proportions: np.ndarray) -> np.ndarray:
    """Integer counts summing to total, proportional up to largest remainders."""
    raw = proportions * total
    counts = np.floor(raw).astype(int)
    short = total - counts.sum()
    if short > 0:
        # ties broken by lower index
        order = np.argsort(-(raw - counts), kind="stable")
        counts[order[:short]] += 1
    return counts


def _class_pools(dataset: Dataset, rng: np.random.Generator) -> list[np.ndarray]:
    pools = []
    for c in range(dataset.num_classes):
        idx = np.flatnonzero(dataset.true_labels == c)
        pools.append(rng.permutation(idx))
    return pools


def _iid_quotas(spec: PartitionSpec, pool_sizes: list[int], num_classes: int) -> np.ndarray:
    """Per (client, class) sample counts for the IID mode."""
    K = spec.num_clients
    quotas = np.zeros((K, num_classes), dtype=int)
    if spec.samples_per_client is None:
        for c, n_c in enumerate(pool_sizes):
            quotas[:, c] = n_c // K
            # leftovers go one per client in client-id order
            quotas[: n_c % K, c] += 1
    else:
        m = spec.samples_per_client
        base, rem = divmod(m, num_classes)
        quotas[:, :] = base
        for k in range(K):
            for j in range(rem):
                # stagger the remainder classes so the dataset is drawn evenly
                quotas[k, (k + j) % num_classes] += 1
        for c, n_c in enumerate(pool_sizes):
            if quotas[:, c].sum() > n_c:
                raise AllocationError(
                    f"class {c}: need {quotas[:, c].sum()} samples, have {n_c}"
                )
    return quotas


def partition(dataset: Dataset, spec: PartitionSpec, seed) -> list[ClientShard]:
    """Split a dataset into disjoint per-client shards.

    Modes:
      iid             equal class proportions per client, up to rounding.
      dirichlet_label per class, split by a Dirichlet(beta) draw over clients.
      dirichlet_size  one Dirichlet(beta) draw fixes relative client sizes;
                      class composition stays proportional.

    Given labels start identical to the true labels; apply noise afterwards.
    """
    rng = np.random.default_rng(seed)
    K = spec.num_clients
    C = dataset.num_classes
    if spec.samples_per_client is not None:
        needed = K * spec.samples_per_client
        if needed > dataset.n:
            raise AllocationError(
                f"need {needed} samples for {K} clients, dataset has {dataset.n}"
            )
    pools = _class_pools(dataset, rng)
    pool_sizes = [len(p) for p in pools]

    if spec.samples_per_client is not None and spec.mode != "iid":
        # fixed budget: shrink each class pool evenly to K * m total first
        budget = _allocate_counts(
            K * spec.samples_per_client,
            np.array(pool_sizes, dtype=float) / dataset.n,
        )
        for c in range(C):
            if budget[c] > pool_sizes[c]:
                raise AllocationError(
                    f"class {c}: need {budget[c]} samples, have {pool_sizes[c]}"
                )
            pools[c] = pools[c][: budget[c]]
        pool_sizes = [len(p) for p in pools]

    if spec.mode == "iid":
        quotas = _iid_quotas(spec, pool_sizes, C)
    elif spec.mode == "dirichlet_label":
        quotas = np.zeros((K, C), dtype=int)
        for c in range(C):
            q = rng.dirichlet(np.full(K, spec.beta))
            quotas[:, c] = _allocate_counts(pool_sizes[c], q)
    else:  # dirichlet_size
        q = rng.dirichlet(np.full(K, spec.beta))
        quotas = np.zeros((K, C), dtype=int)
        for c in range(C):
            quotas[:, c] = _allocate_counts(pool_sizes[c], q)

    shards = []
    offsets = np.zeros(C, dtype=int)
    for k in range(K):
        parts = []
        for c in range(C):
            take = quotas[k, c]
            parts.append(pools[c][offsets[c] : offsets[c] + take])
            offsets[c] += take
        idx = rng.permutation(np.concatenate(parts)) if parts else np.array([], int)
        shards.append(
            ClientShard(
                client_id=k,
                features=dataset.features[idx],
                true_labels=dataset.true_labels[idx],
                given_labels=dataset.true_labels[idx].copy(),
                num_classes=C,
            )
        )
    return shards


def inject_noise(shard: ClientShard, flavor: str, ratio: float, seed) -> ClientShard:
    """Flip exactly round(ratio * n_k) labels, chosen uniformly.

    Symmetric flips draw uniformly from the other C-1 classes; pair flips
    map class y to (y + 1) mod C. Unflipped labels stay equal to the truth.
    """
    if flavor not in NOISE_FLAVORS:
        raise ConfigError(f"unknown noise flavor {flavor!r}")
    if not 0.0 <= ratio <= 1.0:
        raise ConfigError(f"noise ratio must lie in [0, 1], got {ratio}")
    rng = np.random.default_rng(seed)
    n = shard.n_k
    C = shard.num_classes
    m = round_half_up(ratio * n)
    given = shard.true_labels.copy()
    if m > 0:
        flip = rng.choice(n, size=m, replace=False)
        if flavor == "pair":
            given[flip] = (given[flip] + 1) % C
        else:
            # uniform over the C-1 classes that differ from the truth
            r = rng.integers(0, C - 1, size=m)
            given[flip] = np.where(r < given[flip], r, r + 1)
    return replace(shard, given_labels=given, nominal_noise_ratio=float(ratio))


def apply_noise(shards: list[ClientShard], spec: NoiseSpec, seed: int) -> list[ClientShard]:
    """Inject per-client noise, assigning group ratios round-robin."""
    if spec.mode == "custom" and len(spec.custom_ratios) < len(shards):
        raise ConfigError(
            f"custom_ratios covers {len(spec.custom_ratios)} clients, need {len(shards)}"
        )
    out = []
    for shard in shards:
        ratio = spec.ratio_for_client(shard.client_id)
        out.append(
            inject_noise(
                shard,
                spec.flavor,
                ratio,
                derive_seedseq(seed, _NOISE_STREAM, shard.client_id),
            )
        )
    return out
