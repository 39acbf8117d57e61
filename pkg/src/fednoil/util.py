"""Small shared helpers: rounding and keyed random streams."""

from __future__ import annotations

import numpy as np


def round_half_up(x: float) -> int:
    """Round to the nearest integer with ties going up (3.5 -> 4, 2.5 -> 3).

    Used everywhere a fractional count (subset size, epoch count, flip
    count) must become an integer, so all modules share one rounding rule.
    """
    return int(np.floor(x + 0.5))


def derive_seedseq(*key: int) -> np.random.SeedSequence:
    """Seed sequence keyed by a tuple of non-negative integers."""
    return np.random.SeedSequence([int(k) for k in key])


def derive_rng(*key: int) -> np.random.Generator:
    """Independent generator for a (seed, purpose, round, client, ...) key.

    The same key always yields the same stream, so per-client and per-round
    streams are reproducible no matter in which order clients execute.
    """
    return np.random.default_rng(derive_seedseq(*key))
