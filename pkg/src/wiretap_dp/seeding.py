"""Seed derivation.

Every random stream in a run is derived from one master seed plus a tuple of
labels (purpose, task index, ...). Labels are hashed with CRC-32 so the rule
is stable across processes and Python versions, and the pair is fed through
``numpy.random.SeedSequence``.
"""

from __future__ import annotations

import zlib

import numpy as np


def derive_seed(seed: int, *labels: object) -> int:
    """Derive a 63-bit child seed from ``seed`` and an arbitrary label path."""
    keys = [zlib.crc32(str(label).encode("utf-8")) for label in labels]
    state = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *keys]).generate_state(
        1, dtype=np.uint64
    )
    return int(state[0] >> np.uint64(1))


def rng_for(seed: int, *labels: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *labels))
