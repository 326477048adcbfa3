"""Deterministic seed derivation shared by all pipeline stages.

A single user-facing seed fans out into independent per-stage seeds via a
labeled hash, so rerunning one stage never perturbs another.
"""

import hashlib

import numpy as np

_MASK63 = (1 << 63) - 1


def derive_seed(base: int, *labels) -> int:
    """Map (base seed, labels...) to a stable 63-bit integer."""
    h = hashlib.blake2b(digest_size=8)
    h.update(str(int(base)).encode())
    for label in labels:
        h.update(b"/")
        h.update(str(label).encode())
    return int.from_bytes(h.digest(), "little") & _MASK63


def derive_rng(base: int, *labels) -> np.random.Generator:
    """A numpy Generator seeded from a labeled hash of ``base``."""
    return np.random.default_rng(derive_seed(base, *labels))


def hash_unit(*parts) -> float:
    """Deterministic uniform-in-[0,1) value from a tuple of hashable parts."""
    h = hashlib.blake2b(digest_size=8)
    for part in parts:
        h.update(str(part).encode())
        h.update(b"\x1f")
    return int.from_bytes(h.digest(), "little") / 2.0**64
