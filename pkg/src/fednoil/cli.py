"""Experiment runner CLI.

`run` executes every (variant, seed) pair from a config file plus overrides,
writing one CSV + metadata sidecar per run and an aggregate summary table.
`validate` checks a config and echoes the resolved values. `schedule-table`
prints the local-epoch schedule round by round.
"""

from __future__ import annotations

import argparse
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .config import build_config, config_items, parse_items
from .errors import FedNoilError
from .schedule import epochs_at
from .server import VARIANTS, ExperimentConfig, run_experiment
from .telemetry import write_run_log


@dataclass
class RunManifest:
    """Everything `run` needs: the resolved base config and the grid."""

    config: ExperimentConfig
    out_dir: Path
    seeds: list[int]
    variants: list[str]
    parallel: bool = False


@dataclass
class RunOutcome:
    variant: str
    seed: int
    accuracy: float | None
    converged: bool
    error: str | None
    csv_path: str


def _git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True,
            text=True,
            timeout=10,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except OSError:
        pass
    return "unknown"


def _metadata_for(config: ExperimentConfig) -> dict[str, str]:
    meta = dict(config_items(config))
    meta["meta.psi1"] = "" if config.schedule.psi1 is None else repr(config.schedule.psi1)
    meta["meta.psi2"] = "" if config.schedule.psi2 is None else repr(config.schedule.psi2)
    meta["meta.package_version"] = __version__
    meta["meta.build"] = _git_describe()
    return meta


def _execute_run(args: tuple[ExperimentConfig, str]) -> RunOutcome:
    config, out_dir = args
    run_name = f"{config.method}_seed{config.seed}"
    csv_path = Path(out_dir) / f"{run_name}.csv"
    # per-run checkpoint directory so parallel runs never clobber each other
    ckpt_dir = Path(out_dir) / f"{run_name}.ckpt" if config.checkpoint_interval else None
    try:
        result = run_experiment(config, out_dir=ckpt_dir)
        write_run_log(result.records, csv_path, metadata=_metadata_for(config))
        return RunOutcome(
            variant=config.method,
            seed=config.seed,
            accuracy=result.summary.reported_accuracy,
            converged=result.summary.converged,
            error=None,
            csv_path=str(csv_path),
        )
    except (FedNoilError, OSError) as exc:
        return RunOutcome(
            variant=config.method,
            seed=config.seed,
            accuracy=None,
            converged=False,
            error=str(exc),
            csv_path=str(csv_path),
        )


def run_manifest(manifest: RunManifest) -> tuple[list[RunOutcome], list[str]]:
    """Execute the grid; returns per-run outcomes and summary-table lines."""
    manifest.out_dir.mkdir(parents=True, exist_ok=True)
    jobs = [
        (replace(manifest.config, method=variant, seed=seed), str(manifest.out_dir))
        for variant in manifest.variants
        for seed in manifest.seeds
    ]
    if manifest.parallel and len(jobs) > 1:
        with ProcessPoolExecutor() as pool:
            outcomes = list(pool.map(_execute_run, jobs))
    else:
        outcomes = [_execute_run(job) for job in jobs]

    summary_lines = ["variant,seeds,mean_accuracy,std_accuracy,marker"]
    table = [f"{'variant':<32}{'accuracy':<24}seeds"]
    for variant in manifest.variants:
        per_variant = [o for o in outcomes if o.variant == variant]
        ok = [o for o in per_variant if o.error is None]
        accs = np.array([o.accuracy for o in ok], dtype=float)
        marker = "*" if any(not o.converged for o in ok) or len(ok) < len(per_variant) else ""
        seeds_txt = ";".join(str(o.seed) for o in per_variant)
        if len(accs) == 0:
            mean_txt, std_txt, cell = "", "", "error"
        elif len(accs) == 1:
            mean_txt, std_txt = repr(float(accs[0])), ""
            cell = f"{accs[0]:.4f}{marker}"
        else:
            mean_txt = repr(float(accs.mean()))
            std_txt = repr(float(accs.std()))
            cell = f"{accs.mean():.4f} +/- {accs.std():.4f}{marker}"
        summary_lines.append(f"{variant},{seeds_txt},{mean_txt},{std_txt},{marker}")
        table.append(f"{variant:<32}{cell:<24}{seeds_txt}")

    (manifest.out_dir / "summary.csv").write_text(
        "\n".join(summary_lines) + "\n", encoding="utf-8"
    )
    return outcomes, table


def _load_config(path: str, overrides: list[str]) -> ExperimentConfig:
    items = parse_items(Path(path).read_text(encoding="utf-8"))
    for override in overrides:
        if "=" not in override:
            raise FedNoilError(f"--set expects key=value, got {override!r}")
        for key, value in parse_items(override).items():
            items[key] = value
    return build_config(items)


def _cmd_run(args) -> int:
    config = _load_config(args.config, args.set or [])
    seeds = (
        [int(s) for s in args.seeds.split(",")] if args.seeds else [config.seed]
    )
    variants = args.variants.split(",") if args.variants else [config.method]
    for v in variants:
        if v not in VARIANTS:
            raise FedNoilError(f"unknown variant {v!r}")
    if not seeds:
        raise FedNoilError("at least one seed required")
    manifest = RunManifest(
        config=config,
        out_dir=Path(args.out),
        seeds=seeds,
        variants=variants,
        parallel=args.parallel,
    )
    outcomes, table = run_manifest(manifest)
    print("\n".join(table))
    failed = [o for o in outcomes if o.error is not None]
    for o in failed:
        print(f"error: {o.variant} seed {o.seed}: {o.error}", file=sys.stderr)
    return 1 if failed else 0


def _cmd_validate(args) -> int:
    config = _load_config(args.config, args.set or [])
    for key, value in config_items(config).items():
        print(f"{key}={value}")
    return 0


def _cmd_schedule_table(args) -> int:
    config = _load_config(args.config, args.set or [])
    sched = config.schedule
    print(f"# kind={sched.kind} t_max={sched.t_max} t_min={sched.t_min}", end="")
    if sched.psi1 is not None:
        print(f" psi1={sched.psi1!r}", end="")
    if sched.psi2 is not None:
        print(f" psi2={sched.psi2!r}", end="")
    print()
    print("round\tepochs")
    for r in range(1, config.rounds + 1):
        print(f"{r}\t{epochs_at(r, sched)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fednoil",
        description="Federated learning with noisy labels: experiment runner",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one or many (variant, seed) trials")
    run_p.add_argument("config", help="path to a key=value config file")
    run_p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override a config key (repeatable, last wins)")
    run_p.add_argument("--out", default="runs", help="output directory")
    run_p.add_argument("--seeds", help="comma-separated seeds, e.g. 1,2,3")
    run_p.add_argument("--variants", help="comma-separated method variants")
    run_p.add_argument("--parallel", action="store_true",
                       help="run trials in parallel processes")
    run_p.set_defaults(func=_cmd_run)

    val_p = sub.add_parser("validate", help="check a config and echo resolved values")
    val_p.add_argument("config")
    val_p.add_argument("--set", action="append", metavar="KEY=VALUE")
    val_p.set_defaults(func=_cmd_validate)

    tab_p = sub.add_parser("schedule-table", help="print local epochs per round")
    tab_p.add_argument("config")
    tab_p.add_argument("--set", action="append", metavar="KEY=VALUE")
    tab_p.set_defaults(func=_cmd_schedule_table)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except FedNoilError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
