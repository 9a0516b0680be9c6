"""Deterministic RNG derivation.

Every random draw in the toolkit comes from a numpy Generator produced by
`rng_from`, keyed by a master seed plus a tuple of context keys (split name,
class label, sample index, attack iteration, ...).  Two processes that derive
a generator from the same keys see the same stream, which is what makes
datasets, training runs, attacks and benchmark reports byte-reproducible.
"""

from __future__ import annotations

import zlib

import numpy as np


def stable_key(part) -> int:
    """Map a seed-key part (int or short string) to a non-negative int."""
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError(f"seed key parts must be non-negative, got {part}")
        return int(part)
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    raise TypeError(f"unsupported seed key part: {part!r}")


def seed_sequence(*parts) -> np.random.SeedSequence:
    return np.random.SeedSequence([stable_key(p) for p in parts])


def rng_from(*parts) -> np.random.Generator:
    """Generator for the stream identified by the given key tuple."""
    return np.random.Generator(np.random.PCG64(seed_sequence(*parts)))


def derive_seed(*parts) -> int:
    """Collapse a key tuple into a single reproducible integer seed."""
    return int(seed_sequence(*parts).generate_state(1, np.uint64)[0])
