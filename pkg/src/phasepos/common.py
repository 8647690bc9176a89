"""Shared constants, error types, and deterministic RNG derivation."""

from __future__ import annotations

import hashlib
import json

import numpy as np

SPEED_OF_LIGHT = 299_792_458.0  # m/s


class ConfigError(ValueError):
    """Invalid configuration value (CLI exit code 2)."""


class DataError(RuntimeError):
    """Missing, corrupt, or inconsistent artifact (CLI exit code 3)."""


class NumericError(RuntimeError):
    """Non-finite or internally inconsistent numeric result (CLI exit code 4)."""


def canonical_json(obj) -> str:
    """Stable serialization used for hashing: sorted keys, no whitespace drift."""
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def sha256_hex(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def derive_rng(master_seed: int, *labels: str) -> np.random.Generator:
    """Independent, reproducible stream for a named role under one master seed.

    Labels are hashed so adding a new role never shifts existing streams.
    """
    ints = [int.from_bytes(hashlib.sha256(s.encode("utf-8")).digest()[:8], "little")
            for s in labels]
    return np.random.default_rng(np.random.SeedSequence([int(master_seed) & (2**64 - 1), *ints]))
