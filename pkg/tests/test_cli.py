"""Tests for the command-line runner."""

import pytest

from fednoil.cli import main
from fednoil.telemetry import read_run_log

TINY = """\
data.num_classes=4
data.dim=4
data.samples_per_class=60
data.test_samples_per_class=30
data.cluster_spread=0.3
partition.num_clients=4
model.hidden=4
optim.batch_size=8
schedule.kind=logarithm
schedule.t_max=4
schedule.t_min=2
schedule.r_min=3
rounds=4
seed=3
"""


@pytest.fixture
def cfg_file(tmp_path):
    path = tmp_path / "exp.cfg"
    path.write_text(TINY)
    return path


def test_validate_ok_echoes_resolved_config(cfg_file, capsys):
    assert main(["validate", str(cfg_file)]) == 0
    out = capsys.readouterr().out
    assert "sampling.temperature=0.5" in out
    assert "sampling.clean_fraction=0.35" in out  # auto resolved for high noise
    assert "rounds=4" in out


def test_validate_bad_config_fails(tmp_path, capsys):
    bad = tmp_path / "bad.cfg"
    bad.write_text("rounds=ten\n")
    assert main(["validate", str(bad)]) == 1
    assert "rounds" in capsys.readouterr().err


def test_validate_missing_file_fails(tmp_path, capsys):
    assert main(["validate", str(tmp_path / "nope.cfg")]) == 1


def test_set_overrides_last_wins(cfg_file, capsys):
    code = main(["validate", str(cfg_file), "--set", "seed=9", "--set", "seed=11"])
    assert code == 0
    assert "seed=11" in capsys.readouterr().out


def test_schedule_table_prints_rounds(cfg_file, capsys):
    assert main(["schedule-table", str(cfg_file)]) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("# kind=logarithm")
    assert "psi2=" in lines[0]
    assert lines[1] == "round\tepochs"
    assert lines[2] == "1\t4"
    assert len(lines) == 2 + 4


def test_run_single_trial_writes_logs(cfg_file, tmp_path, capsys):
    out = tmp_path / "runs"
    assert main(["run", str(cfg_file), "--out", str(out)]) == 0
    csv = out / "fednoil_seed3.csv"
    records = read_run_log(csv)
    assert len(records) == 4
    meta = (out / "fednoil_seed3.csv.meta").read_text()
    assert "seed=3" in meta
    assert "meta.psi2=" in meta
    summary = (out / "summary.csv").read_text().splitlines()
    assert summary[0] == "variant,seeds,mean_accuracy,std_accuracy,marker"
    assert summary[1].startswith("fednoil,3,")
    # single seed: std column empty
    assert summary[1].split(",")[3] == ""


def test_metadata_sidecar_reparses_to_same_config(cfg_file, tmp_path):
    from fednoil.config import parse_config

    out = tmp_path / "runs"
    main(["run", str(cfg_file), "--out", str(out)])
    meta_text = (out / "fednoil_seed3.csv.meta").read_text()
    original = parse_config(TINY)
    assert parse_config(meta_text) == original


def test_repeated_seed_gives_zero_std(cfg_file, tmp_path):
    out = tmp_path / "runs"
    assert main(["run", str(cfg_file), "--out", str(out), "--seeds", "4,4"]) == 0
    row = (out / "summary.csv").read_text().splitlines()[1].split(",")
    assert row[1] == "4;4"
    assert float(row[3]) == 0.0


def test_two_variants_run_and_summarize(cfg_file, tmp_path, capsys):
    out = tmp_path / "runs"
    code = main([
        "run", str(cfg_file), "--out", str(out),
        "--variants", "fednoil,vanilla_fedavg",
    ])
    assert code == 0
    assert (out / "fednoil_seed3.csv").exists()
    assert (out / "vanilla_fedavg_seed3.csv").exists()
    table = capsys.readouterr().out
    assert "fednoil" in table and "vanilla_fedavg" in table


def test_unknown_variant_rejected(cfg_file, capsys):
    assert main(["run", str(cfg_file), "--variants", "bogus"]) == 1
    assert "bogus" in capsys.readouterr().err


def test_failing_run_sets_exit_code_but_others_continue(tmp_path, capsys):
    cfg = tmp_path / "exp.cfg"
    cfg.write_text(TINY)
    out = tmp_path / "runs"
    code = main([
        "run", str(cfg), "--out", str(out),
        "--set", "data.source=idx",
        "--set", "data.train_images=/nonexistent/a",
        "--set", "data.train_labels=/nonexistent/b",
        "--set", "data.test_images=/nonexistent/c",
        "--set", "data.test_labels=/nonexistent/d",
    ])
    assert code == 1
    assert "error" in capsys.readouterr().err
    assert (out / "summary.csv").exists()


def test_checkpoints_land_in_per_run_directories(cfg_file, tmp_path):
    out = tmp_path / "runs"
    code = main([
        "run", str(cfg_file), "--out", str(out), "--seeds", "1,2",
        "--set", "checkpoint.interval=2",
    ])
    assert code == 0
    assert (out / "fednoil_seed1.ckpt" / "round_0002.params").exists()
    assert (out / "fednoil_seed2.ckpt" / "round_0002.params").exists()


def test_parallel_trials_match_sequential_bytes(cfg_file, tmp_path):
    seq = tmp_path / "seq"
    par = tmp_path / "par"
    assert main(["run", str(cfg_file), "--out", str(seq), "--seeds", "1,2"]) == 0
    assert main(["run", str(cfg_file), "--out", str(par), "--seeds", "1,2",
                 "--parallel"]) == 0
    for name in ("fednoil_seed1.csv", "fednoil_seed2.csv", "summary.csv"):
        assert (seq / name).read_bytes() == (par / name).read_bytes()
