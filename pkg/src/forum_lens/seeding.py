"""Seed derivation shared by every stochastic routine.

A child seed is the first 8 bytes (big-endian) of BLAKE2b over the
colon-joined text of the parent seed and the keys. Because the child depends
only on (parent, keys), replicate ``r`` gets the same stream no matter which
worker runs it or in what order.
"""

from __future__ import annotations

import hashlib

import numpy as np


def hash64(*parts: object) -> int:
    """Unsigned 64-bit BLAKE2b hash of the colon-joined ``str`` of *parts*."""
    text = ":".join(str(p) for p in parts).encode("utf-8")
    return int.from_bytes(hashlib.blake2b(text, digest_size=8).digest(), "big")


def derive_seed(seed: int, *keys: object) -> int:
    return hash64(int(seed), *keys)


def rng_for(seed: int, *keys: object) -> np.random.Generator:
    return np.random.default_rng(derive_seed(seed, *keys))
