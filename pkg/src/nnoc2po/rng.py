"""Named, index-addressable random streams.

A master seed is expanded into independent generators by mixing it with a
tuple of keys (stream names and sample indices) through ``SeedSequence``.
Because each sample owns its stream, results never depend on how work is
split between threads.
"""

from __future__ import annotations

import hashlib

import numpy as np

_MASK64 = (1 << 64) - 1


def _key_to_int(key) -> int:
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError("stream keys must be nonnegative")
        return int(key)
    digest = hashlib.sha256(str(key).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_seed(seed: int, *keys) -> int:
    """Deterministically derive a 64-bit seed from ``seed`` and ``keys``."""
    ss = np.random.SeedSequence([int(seed) & _MASK64, *(_key_to_int(k) for k in keys)])
    return int(ss.generate_state(2, np.uint32).view(np.uint64)[0])


def stream(seed: int, *keys) -> np.random.Generator:
    """Return a generator for the sub-stream ``(seed, *keys)``."""
    ss = np.random.SeedSequence([int(seed) & _MASK64, *(_key_to_int(k) for k in keys)])
    return np.random.Generator(np.random.PCG64(ss))
