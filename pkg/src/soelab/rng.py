"""Named, versioned, splittable random streams.

Streams are keyed by a tuple of ints/strings rather than by call order, so
any job can rebuild its own generator without coordinating with others.
"""

from __future__ import annotations

import hashlib

import numpy as np

RNG_VERSION = 1
_MASK64 = (1 << 64) - 1


def _key_word(key: int | str) -> int:
    if isinstance(key, (bool, np.bool_)):
        raise TypeError("bool is not a valid stream key")
    if isinstance(key, (int, np.integer)):
        return int(key) & _MASK64
    digest = hashlib.blake2b(str(key).encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def seed_sequence(*keys: int | str) -> np.random.SeedSequence:
    return np.random.SeedSequence([RNG_VERSION, *(_key_word(k) for k in keys)])


def stream(*keys: int | str) -> np.random.Generator:
    """Independent PCG64 generator for the given key path."""
    return np.random.Generator(np.random.PCG64(seed_sequence(*keys)))


def derive_seed(*keys: int | str) -> int:
    """Deterministic 64-bit child seed, e.g. ``derive_seed(base_seed, run_index)``."""
    lo, hi = seed_sequence(*keys).generate_state(2, dtype=np.uint32)
    return int(lo) | (int(hi) << 32)
