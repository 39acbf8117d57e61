"""Local-epoch schedules between aggregation rounds.

Two decaying schedules (cosine and logarithm) start at t_max and reach t_min
at a target round r_min, plus a constant schedule and a helper that matches a
constant schedule's total epoch budget to a decaying reference.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import ConfigError
from .util import round_half_up

SCHEDULE_KINDS = ("cosine", "logarithm", "constant")


def solve_psi1(r_min: int, rounds: int) -> float:
    """Cosine decay coefficient making the cosine argument hit pi/2 at r_min."""
    if r_min <= 1:
        raise ConfigError(f"r_min must be > 1 to solve the decay rate, got {r_min}")
    if r_min > rounds:
        raise ConfigError(f"r_min {r_min} exceeds total rounds {rounds}")
    return 2.0 * (r_min - 1) / rounds


def solve_psi2(r_min: int, t_max: int, t_min: int) -> float:
    """Logarithm base making log_psi2(r_min) equal t_max - t_min."""
    if r_min <= 1:
        raise ConfigError(f"r_min must be > 1 to solve the decay rate, got {r_min}")
    if t_max <= t_min:
        raise ConfigError("t_max must exceed t_min")
    return float(r_min) ** (1.0 / (t_max - t_min))


@dataclass(frozen=True)
class ScheduleSpec:
    """Resolved schedule. psi values are derived from r_min on construction."""

    kind: str
    rounds: int
    t_max: int = 100
    t_min: int = 20
    r_min: int | None = None
    psi1: float | None = None
    psi2: float | None = None
    constant_epochs: int | None = None

    def __post_init__(self):
        if self.kind not in SCHEDULE_KINDS:
            raise ConfigError(f"unknown schedule kind {self.kind!r}")
        if self.rounds < 0:
            raise ConfigError("rounds must be nonnegative")
        if not 1 <= self.t_min <= self.t_max:
            raise ConfigError(f"need 1 <= t_min <= t_max, got {self.t_min}, {self.t_max}")
        if self.kind == "constant":
            if self.constant_epochs is None or self.constant_epochs < 1:
                raise ConfigError("constant schedule needs constant_epochs >= 1")
            return
        if self.r_min is None:
            raise ConfigError(f"{self.kind} schedule needs r_min")
        if self.r_min > self.rounds:
            raise ConfigError(f"r_min {self.r_min} exceeds total rounds {self.rounds}")
        if self.kind == "cosine" and self.psi1 is None:
            object.__setattr__(self, "psi1", solve_psi1(self.r_min, self.rounds))
        if self.kind == "logarithm" and self.psi2 is None:
            object.__setattr__(self, "psi2", solve_psi2(self.r_min, self.t_max, self.t_min))


def cosine_epochs(r: int, spec: ScheduleSpec) -> int:
    """Slow-then-fast decay: t_min + (t_max - t_min) * cos((r-1) pi / (psi1 R)).

    Clamped below at t_min, and pinned at t_min for every r >= r_min: past
    the zero of the cosine the raw formula would eventually climb again, but
    the schedule is defined to stay at its minimum once reached.
    """
    if r < 1 or r > spec.rounds:
        raise ConfigError(f"round {r} outside [1, {spec.rounds}]")
    if spec.r_min is not None and r >= spec.r_min:
        return spec.t_min
    raw = spec.t_min + (spec.t_max - spec.t_min) * math.cos(
        (r - 1) * math.pi / (spec.psi1 * spec.rounds)
    )
    return max(round_half_up(raw), spec.t_min)


def log_epochs(r: int, spec: ScheduleSpec) -> int:
    """Fast-then-slow decay: t_max - log_psi2(r), clamped below at t_min."""
    if r < 1:
        raise ConfigError(f"round must be >= 1, got {r}")
    raw = spec.t_max - math.log(r) / math.log(spec.psi2)
    return max(round_half_up(raw), spec.t_min)


def epochs_at(r: int, spec: ScheduleSpec) -> int:
    """Local epochs for round r under the given schedule."""
    if spec.kind == "cosine":
        return cosine_epochs(r, spec)
    if spec.kind == "logarithm":
        return log_epochs(r, spec)
    return spec.constant_epochs


def budget_matched_constant(reference: ScheduleSpec) -> int:
    """Constant per-round epoch count whose total over all rounds matches the
    reference schedule's total to within rounds/2 epochs."""
    if reference.rounds < 1:
        raise ConfigError("reference schedule must cover at least one round")
    total = sum(epochs_at(r, reference) for r in range(1, reference.rounds + 1))
    return round_half_up(total / reference.rounds)
