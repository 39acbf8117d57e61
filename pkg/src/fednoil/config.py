"""Flat key=value experiment configuration.

Dotted keys select sections (`noise.flavor=pair`), `#` starts a comment,
unknown keys are rejected with their line number. `parse_config` resolves
every default so the result is fully explicit; `format_config` writes it
back out in a form that parses to the identical configuration. Keys under
`meta.` are reserved for run metadata sidecars and are ignored on parse.
"""

from __future__ import annotations

from .data import NOISE_FLAVORS, NOISE_MODES, PARTITION_MODES, NoiseSpec, PartitionSpec
from .errors import ConfigError
from .localtrain import SslConfig
from .model import ACTIVATIONS, OptimizerConfig
from .sampling import SamplingConfig
from .schedule import SCHEDULE_KINDS, ScheduleSpec
from .server import VARIANTS, DataConfig, ExperimentConfig


def _parse_int(raw: str) -> int:
    try:
        return int(raw)
    except ValueError:
        raise ConfigError(f"expected an integer, got {raw!r}") from None


def _parse_float(raw: str) -> float:
    try:
        return float(raw)
    except ValueError:
        raise ConfigError(f"expected a number, got {raw!r}") from None


def _parse_bool(raw: str) -> bool:
    if raw == "true":
        return True
    if raw == "false":
        return False
    raise ConfigError(f"expected true or false, got {raw!r}")


def _parse_str(raw: str) -> str:
    return raw


def _parse_choice(options):
    def parse(raw: str):
        if raw not in options:
            raise ConfigError(f"expected one of {', '.join(options)}; got {raw!r}")
        return raw

    return parse


def _parse_int_or_auto(raw: str):
    if raw == "auto":
        return None
    return _parse_int(raw)


def _parse_float_or_auto(raw: str):
    if raw == "auto":
        return None
    return _parse_float(raw)


def _parse_opt_int(raw: str):
    if raw == "":
        return None
    return _parse_int(raw)


def _parse_opt_float_list(raw: str):
    if raw == "":
        return None
    try:
        return tuple(float(part) for part in raw.split(","))
    except ValueError:
        raise ConfigError(f"expected comma-separated numbers, got {raw!r}") from None


# key -> (parser, default as raw text)
KEYS = {
    "data.source": (_parse_choice(("synthetic", "idx")), "synthetic"),
    "data.num_classes": (_parse_int, "4"),
    "data.dim": (_parse_int, "10"),
    "data.samples_per_class": (_parse_int, "250"),
    "data.test_samples_per_class": (_parse_int, "250"),
    "data.cluster_spread": (_parse_float, "0.3"),
    "data.train_images": (_parse_str, ""),
    "data.train_labels": (_parse_str, ""),
    "data.test_images": (_parse_str, ""),
    "data.test_labels": (_parse_str, ""),
    "partition.mode": (_parse_choice(PARTITION_MODES), "iid"),
    "partition.num_clients": (_parse_int, "20"),
    "partition.beta": (_parse_float, "1.0"),
    "partition.samples_per_client": (_parse_int_or_auto, "auto"),
    "noise.flavor": (_parse_choice(NOISE_FLAVORS), "symmetric"),
    "noise.mode": (_parse_choice(NOISE_MODES), "high"),
    "noise.custom_ratios": (_parse_opt_float_list, ""),
    "model.hidden": (_parse_int, "16"),
    "model.activation": (_parse_choice(ACTIVATIONS), "tanh"),
    "optim.learning_rate": (_parse_float, "0.05"),
    "optim.momentum": (_parse_float, "0.5"),
    "optim.weight_decay": (_parse_float, "0.0001"),
    "optim.batch_size": (_parse_int, "32"),
    "sampling.temperature": (_parse_float, "0.5"),
    "sampling.clean_fraction": (_parse_float_or_auto, "auto"),
    "sampling.client_fraction": (_parse_float, "0.3"),
    "sampling.uniform_client": (_parse_bool, "false"),
    "sampling.uniform_data": (_parse_bool, "false"),
    "ssl.threshold": (_parse_float, "0.95"),
    "ssl.lambda_u": (_parse_float, "1.0"),
    "ssl.weak_noise_std": (_parse_float, "0.05"),
    "ssl.strong_noise_std": (_parse_float, "0.15"),
    "ssl.strong_mask_fraction": (_parse_float, "0.25"),
    "ssl.num_weak_augments": (_parse_int, "1"),
    "schedule.kind": (_parse_choice(SCHEDULE_KINDS), "cosine"),
    "schedule.t_max": (_parse_int, "100"),
    "schedule.t_min": (_parse_int, "20"),
    "schedule.r_min": (_parse_int, "80"),
    "schedule.constant_epochs": (_parse_opt_int, ""),
    "rounds": (_parse_int, "200"),
    "method": (_parse_choice(VARIANTS), "fednoil"),
    "seed": (_parse_int, "0"),
    "checkpoint.interval": (_parse_int, "0"),
    "log.real_time": (_parse_bool, "false"),
}


def parse_items(text: str) -> dict[str, str]:
    """Raw key -> value pairs; rejects unknown keys, names the line."""
    items: dict[str, str] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw_line!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if key.startswith("meta."):
            continue
        if key not in KEYS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        items[key] = value
    return items


def build_config(items: dict[str, str]) -> ExperimentConfig:
    """Typed, fully resolved configuration from raw key/value pairs."""
    values = {}
    for key, (parser, default) in KEYS.items():
        raw = items.get(key, default)
        try:
            values[key] = parser(raw)
        except ConfigError as exc:
            raise ConfigError(f"key {key!r}: {exc}") from None

    clean_fraction = values["sampling.clean_fraction"]
    if clean_fraction is None:
        clean_fraction = 0.35 if values["noise.mode"] == "high" else 0.55

    def section(name, ctor, **kwargs):
        try:
            return ctor(**kwargs)
        except ConfigError as exc:
            raise ConfigError(f"in {name}: {exc}") from None

    data = section(
        "data",
        DataConfig,
        source=values["data.source"],
        num_classes=values["data.num_classes"],
        dim=values["data.dim"],
        samples_per_class=values["data.samples_per_class"],
        test_samples_per_class=values["data.test_samples_per_class"],
        cluster_spread=values["data.cluster_spread"],
        train_images=values["data.train_images"],
        train_labels=values["data.train_labels"],
        test_images=values["data.test_images"],
        test_labels=values["data.test_labels"],
    )
    part = section(
        "partition",
        PartitionSpec,
        mode=values["partition.mode"],
        num_clients=values["partition.num_clients"],
        beta=values["partition.beta"],
        samples_per_client=values["partition.samples_per_client"],
    )
    noise = section(
        "noise",
        NoiseSpec,
        flavor=values["noise.flavor"],
        mode=values["noise.mode"],
        custom_ratios=values["noise.custom_ratios"],
    )
    optim = section(
        "optim",
        OptimizerConfig,
        learning_rate=values["optim.learning_rate"],
        momentum=values["optim.momentum"],
        weight_decay=values["optim.weight_decay"],
        batch_size=values["optim.batch_size"],
    )
    sampling = section(
        "sampling",
        SamplingConfig,
        temperature=values["sampling.temperature"],
        clean_fraction=clean_fraction,
        client_fraction=values["sampling.client_fraction"],
    )
    ssl = section(
        "ssl",
        SslConfig,
        threshold=values["ssl.threshold"],
        lambda_u=values["ssl.lambda_u"],
        weak_noise_std=values["ssl.weak_noise_std"],
        strong_noise_std=values["ssl.strong_noise_std"],
        strong_mask_fraction=values["ssl.strong_mask_fraction"],
        num_weak_augments=values["ssl.num_weak_augments"],
    )
    sched = section(
        "schedule",
        ScheduleSpec,
        kind=values["schedule.kind"],
        rounds=values["rounds"],
        t_max=values["schedule.t_max"],
        t_min=values["schedule.t_min"],
        r_min=values["schedule.r_min"],
        constant_epochs=values["schedule.constant_epochs"],
    )
    return ExperimentConfig(
        data=data,
        partition=part,
        noise=noise,
        hidden=values["model.hidden"],
        activation=values["model.activation"],
        optimizer=optim,
        sampling=sampling,
        ssl=ssl,
        schedule=sched,
        rounds=values["rounds"],
        method=values["method"],
        seed=values["seed"],
        uniform_client=values["sampling.uniform_client"],
        uniform_data=values["sampling.uniform_data"],
        checkpoint_interval=values["checkpoint.interval"],
        log_real_time=values["log.real_time"],
    )


def parse_config(text: str) -> ExperimentConfig:
    """Parse config text with every default resolved; unknown keys rejected."""
    return build_config(parse_items(text))


def _fmt_value(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        return ",".join(repr(float(v)) for v in value)
    return str(value)


def config_items(config: ExperimentConfig) -> dict[str, str]:
    """The configuration as echo-ready key/value text pairs."""
    c = config
    values = {
        "data.source": c.data.source,
        "data.num_classes": c.data.num_classes,
        "data.dim": c.data.dim,
        "data.samples_per_class": c.data.samples_per_class,
        "data.test_samples_per_class": c.data.test_samples_per_class,
        "data.cluster_spread": c.data.cluster_spread,
        "data.train_images": c.data.train_images,
        "data.train_labels": c.data.train_labels,
        "data.test_images": c.data.test_images,
        "data.test_labels": c.data.test_labels,
        "partition.mode": c.partition.mode,
        "partition.num_clients": c.partition.num_clients,
        "partition.beta": c.partition.beta,
        "partition.samples_per_client": (
            "auto" if c.partition.samples_per_client is None else c.partition.samples_per_client
        ),
        "noise.flavor": c.noise.flavor,
        "noise.mode": c.noise.mode,
        "noise.custom_ratios": c.noise.custom_ratios,
        "model.hidden": c.hidden,
        "model.activation": c.activation,
        "optim.learning_rate": c.optimizer.learning_rate,
        "optim.momentum": c.optimizer.momentum,
        "optim.weight_decay": c.optimizer.weight_decay,
        "optim.batch_size": c.optimizer.batch_size,
        "sampling.temperature": c.sampling.temperature,
        "sampling.clean_fraction": c.sampling.clean_fraction,
        "sampling.client_fraction": c.sampling.client_fraction,
        "sampling.uniform_client": c.uniform_client,
        "sampling.uniform_data": c.uniform_data,
        "ssl.threshold": c.ssl.threshold,
        "ssl.lambda_u": c.ssl.lambda_u,
        "ssl.weak_noise_std": c.ssl.weak_noise_std,
        "ssl.strong_noise_std": c.ssl.strong_noise_std,
        "ssl.strong_mask_fraction": c.ssl.strong_mask_fraction,
        "ssl.num_weak_augments": c.ssl.num_weak_augments,
        "schedule.kind": c.schedule.kind,
        "schedule.t_max": c.schedule.t_max,
        "schedule.t_min": c.schedule.t_min,
        "schedule.r_min": c.schedule.r_min,
        "schedule.constant_epochs": c.schedule.constant_epochs,
        "rounds": c.rounds,
        "method": c.method,
        "seed": c.seed,
        "checkpoint.interval": c.checkpoint_interval,
        "log.real_time": c.log_real_time,
    }
    return {key: _fmt_value(values[key]) for key in KEYS}


def format_config(config: ExperimentConfig) -> str:
    """Echo text; parse_config(format_config(c)) == c."""
    return "".join(f"{k}={v}\n" for k, v in config_items(config).items())
