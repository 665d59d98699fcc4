"""Seed derivation shared by every stochastic component.

All randomness flows from explicit integer seeds.  Child seeds are derived by
hashing the parent seed together with a tag, so independent streams never
depend on the order in which they are requested.
"""

from __future__ import annotations

import hashlib

import numpy as np

_PERSON = b"fedver-seed"


def derive_seed(*parts: int | str) -> int:
    """Return a 64-bit seed that is a pure function of ``parts``."""
    h = hashlib.blake2b(digest_size=8, person=_PERSON)
    for part in parts:
        if isinstance(part, str):
            raw = part.encode("utf-8")
            h.update(b"s" + len(raw).to_bytes(4, "little") + raw)
        else:
            h.update(b"i" + int(part).to_bytes(16, "little", signed=True))
    return int.from_bytes(h.digest(), "little")


def make_rng(*parts: int | str) -> np.random.Generator:
    return np.random.default_rng(derive_seed(*parts))
