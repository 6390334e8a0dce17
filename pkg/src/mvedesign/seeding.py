"""Deterministic RNG derivation.

Every random draw in the package flows from a master seed through
``derive_rng``.  Child streams are keyed by string/int tokens so that the
realized randomness is independent of evaluation order and of how many
other streams were consumed before.
"""

import hashlib

import numpy as np


def token_to_int(token) -> int:
    """Map a seeding token (int or str) to a stable 64-bit integer."""
    if isinstance(token, (int, np.integer)):
        return int(token) & 0xFFFFFFFFFFFFFFFF
    digest = hashlib.sha256(str(token).encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little")


def derive_seed_sequence(*tokens) -> np.random.SeedSequence:
    return np.random.SeedSequence([token_to_int(t) for t in tokens])


def derive_rng(*tokens) -> np.random.Generator:
    """Generator seeded purely by the token tuple."""
    return np.random.default_rng(derive_seed_sequence(*tokens))
