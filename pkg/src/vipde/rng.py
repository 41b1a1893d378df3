"""Counter-based random streams keyed by (seed, stream id).

Every consumer asks for a named stream; names are mapped to integers with a
fixed hash so that two streams never share a counter sequence.
"""

from __future__ import annotations

import zlib

import numpy as np


def stream_key(*parts) -> tuple[int, ...]:
    key = []
    for part in parts:
        if isinstance(part, str):
            key.append(zlib.crc32(part.encode("utf-8")))
        else:
            key.append(int(part))
    return tuple(key)


def make_rng(seed: int, *stream) -> np.random.Generator:
    """Philox generator for the stream `stream` under the master `seed`."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=stream_key(*stream))
    return np.random.Generator(np.random.Philox(ss))


def derive_seed(seed: int, *stream) -> int:
    """A 63-bit child seed, stable across platforms and worker counts."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=stream_key(*stream))
    return int(ss.generate_state(2, dtype=np.uint32).astype(np.uint64) @ np.array([1, 2**32], dtype=np.uint64)) >> 1
