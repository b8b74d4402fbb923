"""Deterministic random streams derived from a single master seed.

Every source of randomness in the package (weight init, dropout masks,
jitter draws, data generation) pulls from a named stream so that runs are
reproducible regardless of evaluation order or thread count.  Streams are
built on the counter-based Philox generator: the key mixes the master seed
with a stable hash of the stream name plus an optional per-item index, so
stream(seed, "data", i) can be opened independently for every sample i.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1

#: Stream names used by the training/generation pipeline.
STREAM_INIT = "init"
STREAM_DROPOUT = "dropout"
STREAM_JITTER = "jitter"
STREAM_DATA = "data"


def _name_tag(name: str) -> int:
    """Stable 64-bit tag for a stream name (platform independent)."""
    digest = hashlib.blake2b(name.encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def stream(seed: int, name: str, index: int = 0) -> np.random.Generator:
    """Open the named substream of the master seed.

    The same (seed, name, index) triple always yields an identical
    generator; distinct triples yield statistically independent streams.
    """
    if index < 0:
        raise ValueError(f"stream index must be nonnegative, got {index}")
    key = np.array(
        [seed & _MASK64, (_name_tag(name) + index) & _MASK64],
        dtype=np.uint64,
    )
    return np.random.Generator(np.random.Philox(key=key))
