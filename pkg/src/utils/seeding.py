import hashlib

import numpy as np


def derive_seed(seed: int, label: str) -> int:
    """Derive a stable 63-bit sub-seed from a root seed and a purpose label."""
    digest = hashlib.sha256(f"{int(seed)}::{label}".encode("utf-8")).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def make_rng(seed: int, label: str) -> np.random.Generator:
    """Return a numpy Generator seeded from (seed, label)."""
    return np.random.default_rng(derive_seed(seed, label))
