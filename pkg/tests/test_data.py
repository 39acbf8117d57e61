"""Tests for synthetic generation, IDX loading, partitioning, and noise."""

import struct

import numpy as np
import pytest

from fednoil.data import (
    ClientShard,
    Dataset,
    NoiseSpec,
    PartitionSpec,
    apply_noise,
    class_means,
    generate_synthetic,
    inject_noise,
    load_idx,
    partition,
)
from fednoil.errors import AllocationError, ConfigError, ParseError


# --- synthetic generator ---


def test_zero_variance_places_points_at_class_means():
    ds = generate_synthetic(2, 2, 1, 1e-15, seed=7)
    means = class_means(2, 2)
    order = np.argsort(ds.true_labels)
    assert np.allclose(ds.features[order], means, atol=1e-12)


def test_nearest_mean_oracle_accuracy_frozen():
    # independent oracle: assign every generated point to its closest class
    # mean by brute force; the resulting accuracy is frozen below.
    ds = generate_synthetic(4, 2, 100, 0.3, seed=1)
    assert ds.n == 400
    means = class_means(4, 2)
    d2 = ((ds.features[:, None, :] - means[None, :, :]) ** 2).sum(axis=2)
    acc = float((d2.argmin(axis=1) == ds.true_labels).mean())
    assert acc == pytest.approx(0.99)


def test_generator_deterministic():
    a = generate_synthetic(4, 2, 100, 0.3, seed=1)
    b = generate_synthetic(4, 2, 100, 0.3, seed=1)
    assert np.array_equal(a.features, b.features)
    assert np.array_equal(a.true_labels, b.true_labels)
    c = generate_synthetic(4, 2, 100, 0.3, seed=2)
    assert not np.array_equal(a.features, c.features)


def test_generator_rejects_bad_sizes():
    with pytest.raises(ConfigError):
        generate_synthetic(1, 2, 10, 0.3, seed=0)
    with pytest.raises(ConfigError):
        generate_synthetic(2, 1, 10, 0.3, seed=0)
    with pytest.raises(ConfigError):
        generate_synthetic(2, 2, 10, 0.0, seed=0)


def test_class_means_on_unit_circle():
    m = class_means(4, 5)
    assert np.allclose(np.linalg.norm(m[:, :2], axis=1), 1.0)
    assert np.allclose(m[:, 2:], 0.0)


# --- IDX loader ---


def _idx_images(images, rows, cols):
    n = len(images)
    return struct.pack(">IIII", 0x803, n, rows, cols) + bytes(
        b for img in images for b in img
    )


def _idx_labels(labels):
    return struct.pack(">II", 0x801, len(labels)) + bytes(labels)


def test_load_idx_hand_built_pair(tmp_path):
    # two 2x2 images built byte by byte per the container layout
    img = tmp_path / "img.idx"
    lab = tmp_path / "lab.idx"
    img.write_bytes(_idx_images([[0, 51, 102, 255], [10, 20, 30, 40]], 2, 2))
    lab.write_bytes(_idx_labels([0, 1]))
    ds = load_idx(str(img), str(lab))
    assert ds.n == 2 and ds.dim == 4
    assert np.array_equal(ds.true_labels, [0, 1])
    assert ds.features[0, 3] == 1.0  # byte 255 scales to exactly 1.0
    assert ds.features[0, 1] == pytest.approx(51 / 255)


def test_load_idx_count_mismatch(tmp_path):
    img = tmp_path / "img.idx"
    lab = tmp_path / "lab.idx"
    img.write_bytes(_idx_images([[0] * 4, [0] * 4], 2, 2))
    lab.write_bytes(_idx_labels([0, 1, 1]))
    with pytest.raises(ParseError, match="count mismatch"):
        load_idx(str(img), str(lab))


def test_load_idx_bad_magic(tmp_path):
    img = tmp_path / "img.idx"
    lab = tmp_path / "lab.idx"
    img.write_bytes(struct.pack(">IIII", 0xDEAD, 1, 2, 2) + bytes(4))
    lab.write_bytes(_idx_labels([0]))
    with pytest.raises(ParseError, match="bad magic"):
        load_idx(str(img), str(lab))


def test_load_idx_truncated(tmp_path):
    img = tmp_path / "img.idx"
    lab = tmp_path / "lab.idx"
    img.write_bytes(_idx_images([[0] * 4], 2, 2)[:-2])  # chop two pixel bytes
    lab.write_bytes(_idx_labels([0]))
    with pytest.raises(ParseError, match="truncated at byte"):
        load_idx(str(img), str(lab))


# --- partitioning ---


def _balanced_dataset(samples_per_class=100, num_classes=2, dim=3, seed=0):
    return generate_synthetic(num_classes, dim, samples_per_class, 0.5, seed=seed)


def test_iid_partition_exact_divisibility():
    ds = _balanced_dataset(100, 2)
    shards = partition(ds, PartitionSpec(mode="iid", num_clients=4), seed=3)
    for shard in shards:
        assert shard.n_k == 50
        for c in range(2):
            assert int((shard.true_labels == c).sum()) == 25


def test_dirichlet_label_large_beta_approaches_iid():
    ds = _balanced_dataset(500, 4, seed=5)
    spec = PartitionSpec(mode="dirichlet_label", num_clients=5, beta=1e6)
    shards = partition(ds, spec, seed=9)
    for shard in shards:
        props = np.array([(shard.true_labels == c).mean() for c in range(4)])
        assert np.all(np.abs(props - 0.25) < 0.01)


def test_shards_disjoint_and_bounded():
    ds = _balanced_dataset(90, 3, seed=2)
    for mode in ("iid", "dirichlet_label", "dirichlet_size"):
        shards = partition(
            ds, PartitionSpec(mode=mode, num_clients=7, beta=0.5), seed=11
        )
        # disjointness via feature-row identity: every shard row maps to a
        # unique dataset row
        rows = {tuple(r) for r in ds.features}
        seen = []
        for shard in shards:
            seen.extend(tuple(r) for r in shard.features)
        assert len(seen) <= ds.n
        assert len(set(seen)) == len(seen)
        assert set(seen) <= rows


def test_dirichlet_size_sums_to_total():
    ds = _balanced_dataset(100, 4, seed=8)
    spec = PartitionSpec(mode="dirichlet_size", num_clients=6, beta=20.0)
    shards = partition(ds, spec, seed=4)
    assert sum(s.n_k for s in shards) == ds.n


def test_samples_per_client_budget():
    ds = _balanced_dataset(100, 4, seed=8)
    spec = PartitionSpec(mode="iid", num_clients=5, samples_per_client=60)
    shards = partition(ds, spec, seed=4)
    assert all(s.n_k == 60 for s in shards)
    with pytest.raises(AllocationError):
        partition(
            ds, PartitionSpec(mode="iid", num_clients=5, samples_per_client=100), seed=4
        )


def test_partition_deterministic():
    ds = _balanced_dataset(60, 3, seed=1)
    spec = PartitionSpec(mode="dirichlet_label", num_clients=4, beta=0.3)
    a = partition(ds, spec, seed=5)
    b = partition(ds, spec, seed=5)
    for sa, sb in zip(a, b):
        assert np.array_equal(sa.features, sb.features)
        assert np.array_equal(sa.true_labels, sb.true_labels)


# --- noise injection ---


def _shard(labels, num_classes=4):
    labels = np.asarray(labels)
    return ClientShard(
        client_id=0,
        features=np.zeros((len(labels), 2)),
        true_labels=labels,
        given_labels=labels.copy(),
        num_classes=num_classes,
    )


def test_zero_ratio_is_identity():
    shard = inject_noise(_shard([0, 1, 2, 3]), "symmetric", 0.0, seed=1)
    assert np.array_equal(shard.given_labels, shard.true_labels)


def test_pair_full_flip():
    shard = inject_noise(_shard([0, 1, 2, 3]), "pair", 1.0, seed=1)
    assert np.array_equal(shard.given_labels, [1, 2, 3, 0])


def test_symmetric_exact_count():
    labels = np.arange(600) % 4
    shard = inject_noise(_shard(labels), "symmetric", 0.5, seed=2)
    assert int((shard.given_labels != shard.true_labels).sum()) == 300
    assert shard.nominal_noise_ratio == 0.5


@pytest.mark.parametrize("ratio", [0.1, 0.33, 0.5, 0.77, 1.0])
def test_flip_count_exact_for_any_ratio(ratio):
    n = 173
    labels = np.arange(n) % 5
    shard = inject_noise(_shard(labels, 5), "symmetric", ratio, seed=7)
    expected = int(np.floor(ratio * n + 0.5))
    assert int((shard.given_labels != shard.true_labels).sum()) == expected


def test_symmetric_flip_never_keeps_label():
    labels = np.arange(400) % 3
    for seed in range(5):
        shard = inject_noise(_shard(labels, 3), "symmetric", 1.0, seed=seed)
        assert not np.any(shard.given_labels == shard.true_labels)
        assert shard.given_labels.min() >= 0 and shard.given_labels.max() < 3


def test_inject_noise_deterministic():
    labels = np.arange(100) % 4
    a = inject_noise(_shard(labels), "symmetric", 0.4, seed=3)
    b = inject_noise(_shard(labels), "symmetric", 0.4, seed=3)
    assert np.array_equal(a.given_labels, b.given_labels)


def test_group_ratios_round_robin():
    spec = NoiseSpec(flavor="symmetric", mode="high")
    assert spec.group_ratios() == (0.5, 0.6, 0.7, 0.8)
    assert spec.ratio_for_client(0) == 0.5
    assert spec.ratio_for_client(5) == 0.6
    assert spec.ratio_for_client(19) == 0.8
    low_pair = NoiseSpec(flavor="pair", mode="low")
    assert low_pair.group_ratios() == (0.3, 0.4, 0.5, 0.6)
    assert NoiseSpec(flavor="pair", mode="high").group_ratios() == (0.3, 0.5, 0.6, 0.8)


def test_apply_noise_assigns_groups():
    ds = _balanced_dataset(100, 4, seed=3)
    shards = partition(ds, PartitionSpec(mode="iid", num_clients=8), seed=1)
    noisy = apply_noise(shards, NoiseSpec("symmetric", "high"), seed=42)
    for shard in noisy:
        expected = (0.5, 0.6, 0.7, 0.8)[shard.client_id % 4]
        assert shard.nominal_noise_ratio == expected
        m = int(np.floor(expected * shard.n_k + 0.5))
        assert int((shard.given_labels != shard.true_labels).sum()) == m


def test_noise_spec_validation():
    with pytest.raises(ConfigError):
        NoiseSpec(flavor="bogus")
    with pytest.raises(ConfigError):
        NoiseSpec(mode="custom")
    with pytest.raises(ConfigError):
        NoiseSpec(mode="custom", custom_ratios=(0.5, 1.2))
    with pytest.raises(ConfigError):
        inject_noise(_shard([0, 1]), "symmetric", 1.5, seed=0)


def test_dataset_validation():
    with pytest.raises(ConfigError):
        Dataset(np.zeros((3, 2)), np.array([0, 1]), 2)
    with pytest.raises(ConfigError):
        Dataset(np.zeros((2, 2)), np.array([0, 5]), 2)
    with pytest.raises(ConfigError):
        Dataset(np.zeros((2, 2)), np.array([0, 1]), 1)
