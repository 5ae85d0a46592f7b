"""Deterministic seed derivation.

All randomness flows from one unsigned 64-bit run seed. Child seeds are
derived by folding labels into the parent with the splitmix64 finaliser, so
``derive(seed, "train", 17)`` is stable across processes and platforms.
"""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1


def splitmix64(x: int) -> int:
    x = (x + 0x9E3779B97F4A7C15) & MASK64
    z = x
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _label_word(label) -> int:
    if isinstance(label, (int, np.integer)):
        return int(label) & MASK64
    digest = hashlib.sha256(str(label).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive(seed: int, *labels) -> int:
    """Child seed of ``seed`` along the path ``labels``."""
    x = splitmix64(int(seed) & MASK64)
    for label in labels:
        x = splitmix64(x ^ _label_word(label))
    return x


def rng(seed: int, *labels) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(derive(seed, *labels)))
