"""Federated learning with noisy labels via two-level confidence sampling."""

__version__ = "0.1.0"

from .data import (
    ClientShard,
    Dataset,
    NoiseSpec,
    PartitionSpec,
    generate_synthetic,
    inject_noise,
    load_idx,
    partition,
)
from .errors import (
    AllocationError,
    ConfigError,
    DivergenceError,
    FedNoilError,
    ParseError,
    ProtocolError,
)
from .localtrain import LocalUpdateReport, SslConfig, local_update
from .model import (
    ModelDescriptor,
    ModelParams,
    OptimizerConfig,
    OptimizerState,
    evaluate_accuracy,
    forward,
    init_params,
    loss_and_grad,
    sgd_step,
)
from .sampling import (
    ClientScore,
    SamplingConfig,
    client_probabilities,
    confidence_scores,
    local_data_probabilities,
    sample_clients,
    sample_labeled_subset,
)
from .schedule import (
    ScheduleSpec,
    budget_matched_constant,
    cosine_epochs,
    epochs_at,
    log_epochs,
    solve_psi1,
    solve_psi2,
)
from .server import (
    DataConfig,
    ExperimentConfig,
    ExperimentResult,
    GlobalState,
    aggregate,
    build_environment,
    run_experiment,
    run_round,
)
from .telemetry import (
    RoundRecord,
    avg_selected_noise_ratio,
    label_precision_recall,
    read_run_log,
    write_run_log,
)
from .config import format_config, parse_config
