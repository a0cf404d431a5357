"""Deterministic, order-independent random streams.

All randomness is derived from a master seed plus a tuple of keys
(experiment id, replication index, draw index, ...). Streams use the
counter-based Philox generator so that the stream for a given key tuple is
identical no matter which worker evaluates it or in what order.
"""

from __future__ import annotations

import zlib

import numpy as np


def _key_to_int(key) -> int:
    if isinstance(key, (bool, np.bool_)):
        return int(key)
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError("seed keys must be non-negative")
        return int(key)
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    raise TypeError(f"unsupported seed key {key!r}")


def seed_sequence(master: int, *keys) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master), spawn_key=tuple(_key_to_int(k) for k in keys))


def generator(master: int, *keys) -> np.random.Generator:
    """Return the Philox stream for ``(master, *keys)``."""
    return np.random.Generator(np.random.Philox(seed_sequence(master, *keys)))


def derive_seed(master: int, *keys) -> int:
    """Collapse ``(master, *keys)`` to a single 64-bit integer seed."""
    return int(seed_sequence(master, *keys).generate_state(1, dtype=np.uint64)[0])
