"""Tests for the round diagnostics and the run-log CSV format."""

import numpy as np
import pytest

from fednoil.data import NoiseSpec, PartitionSpec, apply_noise, generate_synthetic, partition
from fednoil.errors import ParseError
from fednoil.telemetry import (
    CSV_HEADER,
    RoundRecord,
    avg_selected_noise_ratio,
    label_precision_recall,
    read_run_log,
    write_metadata,
    write_run_log,
)

from test_sampling import make_shard


def _shard_with_noise(n, noisy_count, client_id=0, seed=0):
    rng = np.random.default_rng(seed)
    true = rng.integers(0, 4, n)
    given = true.copy()
    given[:noisy_count] = (true[:noisy_count] + 1) % 4
    return make_shard(rng.standard_normal((n, 2)), true, given, 4, client_id)


# --- noise ratio ---


def test_avg_noise_ratio_is_arithmetic_mean():
    shards = [_shard_with_noise(10, c) for c in (5, 8, 6)]
    assert avg_selected_noise_ratio(shards) == pytest.approx((0.5 + 0.8 + 0.6) / 3)


def test_avg_noise_ratio_clean_and_empty():
    assert avg_selected_noise_ratio([_shard_with_noise(10, 0)]) == 0.0
    assert avg_selected_noise_ratio([]) is None


def test_population_mean_under_high_symmetric_groups():
    ds = generate_synthetic(4, 2, 200, 0.3, seed=0)
    shards = partition(ds, PartitionSpec(mode="iid", num_clients=8), seed=1)
    noisy = apply_noise(shards, NoiseSpec("symmetric", "high"), seed=2)
    # equal group sizes: (0.5 + 0.6 + 0.7 + 0.8) / 4
    assert avg_selected_noise_ratio(noisy) == pytest.approx(0.65)


# --- precision / recall ---


def test_precision_simple_count():
    shard = _shard_with_noise(8, 4)
    dx = np.array([0, 4, 5, 6])  # one noisy, three clean
    precision, recall = label_precision_recall([dx], [shard])
    assert precision == 0.75
    assert recall == pytest.approx(3 / 4)


def test_exact_clean_selection_scores_one():
    shard = _shard_with_noise(10, 4)
    dx = np.arange(4, 10)  # exactly the clean samples
    precision, recall = label_precision_recall([dx], [shard])
    assert precision == 1.0 and recall == 1.0


def test_recall_missing_when_no_clean_samples():
    shard = _shard_with_noise(6, 6)
    precision, recall = label_precision_recall([np.array([0, 1])], [shard])
    assert precision == 0.0
    assert recall is None


def test_pooling_across_events():
    a = _shard_with_noise(10, 5, client_id=0)
    b = _shard_with_noise(10, 2, client_id=1)
    sets = [np.arange(4), np.arange(4)]
    precision, recall = label_precision_recall(sets, [a, b])
    clean_sel = int(a.clean_mask[:4].sum() + b.clean_mask[:4].sum())
    assert precision == pytest.approx(clean_sel / 8)
    assert recall == pytest.approx(clean_sel / (5 + 8))


def test_uniform_selection_expectation():
    # under uniform sampling of fraction f, expected precision is the clean
    # fraction c and expected recall is f
    rng = np.random.default_rng(3)
    shard = _shard_with_noise(40, 16, seed=5)  # c = 0.6
    f = 0.35
    m = round(f * 40)
    precs, recs = [], []
    for _ in range(4000):
        dx = rng.choice(40, size=m, replace=False)
        p, r = label_precision_recall([dx], [shard])
        precs.append(p)
        recs.append(r)
    assert np.mean(precs) == pytest.approx(0.6, abs=0.01)
    assert np.mean(recs) == pytest.approx(f, abs=0.01)


# --- CSV round trip ---


def _records():
    return [
        RoundRecord(1, (3, 0, 7), 100, 0.51234567891, 0.65, 0.4, 0.3, 1200, 0.25, None),
        RoundRecord(2, (1,), 77, 0.6, None, None, None, 2400, None, None),
        RoundRecord(3, (), 20, 1 / 3, 0.6333333333333333, 1.0, 0.0, 2400, 0.5, 12.5),
    ]


def test_csv_header_exact(tmp_path):
    path = tmp_path / "run.csv"
    write_run_log([], path)
    text = path.read_text()
    assert text == CSV_HEADER + "\n"
    assert CSV_HEADER == (
        "round,selected,epochs,accuracy,noise_ratio,precision,recall,"
        "cum_batches,pl_accept,wall_ms"
    )


def test_csv_round_trip_identical(tmp_path):
    path = tmp_path / "run.csv"
    write_run_log(_records(), path)
    back = read_run_log(path)
    assert back == _records()


def test_missing_values_are_empty_fields(tmp_path):
    path = tmp_path / "run.csv"
    write_run_log(_records(), path)
    lines = path.read_text().splitlines()
    assert ",,," in lines[2]
    assert "NaN" not in path.read_text() and "None" not in path.read_text()


def test_floats_round_trip_at_full_precision(tmp_path):
    path = tmp_path / "run.csv"
    write_run_log(_records(), path)
    back = read_run_log(path)
    assert back[2].accuracy == 1 / 3
    assert back[0].accuracy == 0.51234567891


def test_read_rejects_bad_header(tmp_path):
    path = tmp_path / "run.csv"
    path.write_text("round,foo\n1,2\n")
    with pytest.raises(ParseError, match="header"):
        read_run_log(path)


def test_metadata_sidecar(tmp_path):
    path = tmp_path / "run.csv"
    write_run_log(_records(), path, metadata={"seed": "1", "meta.psi1": "0.79"})
    meta = (tmp_path / "run.csv.meta").read_text()
    assert "seed=1\n" in meta and "meta.psi1=0.79\n" in meta


def test_write_metadata_plain(tmp_path):
    write_metadata(tmp_path / "m.txt", {"a": "1", "b": "x"})
    assert (tmp_path / "m.txt").read_text() == "a=1\nb=x\n"
