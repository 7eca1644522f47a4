"""Stable derivation of per-purpose RNG seeds from one top-level seed.

Every source of randomness in the toolchain flows from a single seed; each
consumer derives its own stream by hashing (seed, purpose-label), so adding
or reordering consumers never shifts anyone else's stream.
"""

from __future__ import annotations

import hashlib


def derive_seed(seed: int, label: str) -> int:
    """Map (seed, label) to a 63-bit seed, stably across runs and platforms."""
    digest = hashlib.sha256(f"{seed}:{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "little") & 0x7FFF_FFFF_FFFF_FFFF
