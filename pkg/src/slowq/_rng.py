"""Named, counter-based random streams derived from one master seed."""
from __future__ import annotations

import zlib

import numpy as np

_MASK = (1 << 64) - 1


def stream_key(name: str) -> int:
    return zlib.crc32(name.encode())


def _seq(master: int, name: str, *keys: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(int(master) & _MASK,
                                  spawn_key=(stream_key(name),) + tuple(int(k) for k in keys))


def rep_seeds(master: int, name: str, keys=(), start: int = 0, count: int = 1) -> np.ndarray:
    """Seeds for replications ``start .. start+count-1`` of one stream.

    ``generate_state`` is prefix consistent, so a batch never depends on how
    earlier batches were split.
    """
    state = _seq(master, name, *keys).generate_state(start + count, dtype=np.uint32)
    return state[start:].astype(np.int64)


def generator(master: int, name: str, *keys: int) -> np.random.Generator:
    return np.random.default_rng(_seq(master, name, *keys))
