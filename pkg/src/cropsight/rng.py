"""Seeded random streams.

Every stream is a Philox-4x64 counter-based generator keyed by the user seed
plus a tuple of stream labels, so results do not depend on the order in which
streams are consumed.
"""

import zlib

import numpy as np

RNG_ALGORITHM = "philox4x64-v1"


def _key(part):
    if isinstance(part, (int, np.integer)):
        if part < 0:
            raise ValueError("stream keys must be non-negative")
        return int(part)
    return zlib.crc32(str(part).encode("utf-8"))


def stream(seed, *labels):
    """Return an independent ``numpy.random.Generator`` for ``(seed, *labels)``."""
    entropy = [_key(seed)] + [_key(p) for p in labels]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))
