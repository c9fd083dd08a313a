"""Deterministic named RNG substreams.

Every source of randomness in the simulator draws from a substream derived
from (master seed, label path), so client training order and parallelism
cannot change results.
"""

from __future__ import annotations

import hashlib

import numpy as np


def substream_seed(master_seed: int, *labels: object) -> int:
    """Map (master seed, label path) to a stable 64-bit child seed."""
    text = ":".join([str(int(master_seed))] + [str(lab) for lab in labels])
    digest = hashlib.sha256(text.encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little", signed=False)


def substream(master_seed: int, *labels: object) -> np.random.Generator:
    """Independent generator for the given label path.

    Same (seed, labels) always yields an identical draw sequence.
    """
    return np.random.default_rng(substream_seed(master_seed, *labels))
