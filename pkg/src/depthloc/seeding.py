"""Stable seed derivation for nested experiment components.

Python's builtin ``hash`` is salted per process, so derived seeds are
computed from a keyed blake2b digest instead.  Any mix of ints, floats
and strings can be folded into a child seed; the result is stable
across processes, platforms and interpreter versions.
"""

from __future__ import annotations

import hashlib

import numpy as np


def derive_seed(*parts: int | float | str) -> int:
    """Fold ``parts`` into a 64-bit seed, deterministically."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        if isinstance(part, bool):
            raise TypeError("bool is ambiguous in a seed path")
        if isinstance(part, (int, np.integer)):
            token = b"i" + int(part).to_bytes(16, "little", signed=True)
        elif isinstance(part, (float, np.floating)):
            token = b"f" + repr(float(part)).encode()
        elif isinstance(part, str):
            token = b"s" + part.encode()
        else:
            raise TypeError(f"cannot derive seed from {type(part).__name__}")
        h.update(len(token).to_bytes(2, "little"))
        h.update(token)
    return int.from_bytes(h.digest(), "little")


def rng_from(*parts: int | float | str) -> np.random.Generator:
    """Generator seeded from a derived seed path."""
    return np.random.default_rng(derive_seed(*parts))
