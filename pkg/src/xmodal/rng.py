"""Seeded randomness.

All generators are Philox (counter-based) so streams are identical across
platforms. Independent components draw from named sub-seeds of one root seed.
"""

from __future__ import annotations

import hashlib

import numpy as np


def subseed(seed: int, *names) -> int:
    """Derive a 63-bit seed from ``seed`` and a path of names."""
    key = ":".join([str(int(seed))] + [str(n) for n in names]).encode()
    return int.from_bytes(hashlib.sha256(key).digest()[:8], "little") >> 1


def generator(seed: int, *names) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(subseed(seed, *names) if names else int(seed)))


def truncated_normal(rng: np.random.Generator, shape, std: float = 0.02, bound: float = 2.0,
                     dtype=np.float64) -> np.ndarray:
    """Normal samples redrawn until they fall within ``bound`` standard deviations."""
    x = rng.standard_normal(shape)
    bad = np.abs(x) > bound
    while bad.any():
        x[bad] = rng.standard_normal(int(bad.sum()))
        bad = np.abs(x) > bound
    return (x * std).astype(dtype)
