"""Seed derivation and stable formatting shared across modules."""

from __future__ import annotations

import hashlib

import numpy as np
import yaml


def derive_seed(*parts: int) -> int:
    """Fold integer parts into one reproducible 32-bit seed.

    Uses numpy's SeedSequence so derived streams are independent and
    identical across platforms.
    """
    return int(np.random.SeedSequence(list(parts)).generate_state(1)[0])


def rng_from(*parts: int) -> np.random.Generator:
    return np.random.default_rng(list(parts))


def fmt_float(x: float) -> str:
    """Shortest round-trippable decimal form, byte-stable across runs."""
    return format(float(x), ".17g")


def canonical_yaml(obj) -> str:
    return yaml.safe_dump(obj, sort_keys=True, default_flow_style=False)


def config_digest(obj) -> str:
    """sha256 over the canonical YAML form of a config mapping."""
    return hashlib.sha256(canonical_yaml(obj).encode("utf-8")).hexdigest()
