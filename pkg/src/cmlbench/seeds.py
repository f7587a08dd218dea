"""Deterministic seed derivation and random-generator construction.

Every stochastic choice in the benchmark (initial conditions, deviation
vectors, split permutations) is driven by a Philox4x64-10 counter-based
generator keyed with a 64-bit seed.  Seeds are derived by hashing a
canonical string, so any subset of the grid can be regenerated
independently and still match a full run bit for bit.

The derivation scheme is part of the data format and must never change:

* canonical form of a part: ``repr()`` for floats (shortest round-trip
  decimal), ``str()`` for ints and strings;
* parts are joined with ``"|"`` and prefixed with ``"cmlbench:"``;
* the seed is the first 8 bytes (big-endian) of the SHA-256 digest of
  that ASCII string.
"""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = 0xFFFFFFFFFFFFFFFF


def canonical(part) -> str:
    """Canonical string form of a seed-derivation part."""
    if isinstance(part, bool):
        raise TypeError("bool is ambiguous in seed derivation")
    if isinstance(part, float):
        return repr(part)
    if isinstance(part, (int, str)):
        return str(part)
    if isinstance(part, np.integer):
        return str(int(part))
    if isinstance(part, np.floating):
        return repr(float(part))
    raise TypeError(f"cannot canonicalize {type(part).__name__} for seeding")


def derive_seed(*parts) -> int:
    """Hash ``parts`` into a 64-bit seed.

    Examples
    --------
    >>> derive_seed(42, "K", 2.0, "rho", 0.1, "N", 8, "ic", 0) > 0
    True
    """
    text = "cmlbench:" + "|".join(canonical(p) for p in parts)
    digest = hashlib.sha256(text.encode("ascii")).digest()
    return int.from_bytes(digest[:8], "big")


def make_rng(seed: int) -> np.random.Generator:
    """Philox4x64-10 generator keyed with a 64-bit seed."""
    return np.random.Generator(np.random.Philox(key=seed & MASK64))
