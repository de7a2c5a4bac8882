"""Named, explicitly seeded counter-based random streams (Philox)."""

from __future__ import annotations

import zlib

import numpy as np


def make_rng(seed: int, stream: str) -> np.random.Generator:
    """A Philox generator keyed by ``(seed, stream)``.

    Distinct stream names give independent sequences for the same seed, so
    e.g. weight init and batch shuffling never perturb each other.
    """
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(stream.encode())])
    key = ss.generate_state(2, dtype=np.uint64)
    return np.random.Generator(np.random.Philox(key=key))


def derive_seed(seed: int, *parts: int) -> int:
    """A 64-bit child seed for per-item generation."""
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, *[int(p) for p in parts]])
    return int(ss.generate_state(1, dtype=np.uint64)[0])
