"""Named substreams derived from a single run seed.

Every stochastic stage (cohort draw, splits, weight init, dropout, search)
pulls its own generator so that adding a stage never perturbs the others.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["substream", "substream_seed"]


def substream_seed(seed: int, name: str) -> int:
    """Derive a stable 64-bit child seed from ``seed`` and a stream name."""
    digest = hashlib.sha256(f"{seed}:{name}".encode()).digest()
    return int.from_bytes(digest[:8], "little")


def substream(seed: int, name: str) -> np.random.Generator:
    return np.random.default_rng(substream_seed(seed, name))
