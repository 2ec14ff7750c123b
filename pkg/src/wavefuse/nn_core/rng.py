from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

ALGORITHM = "PCG64"


@dataclass
class RngState:
    """Seeded random stream. Same ``(seed, algorithm)`` gives the same draws."""

    seed: int
    algorithm: str = ALGORITHM
    generator: np.random.Generator = field(init=False, repr=False)

    def __post_init__(self):
        if self.algorithm != ALGORITHM:
            raise ValueError(f"unsupported rng algorithm {self.algorithm!r}")
        self.seed = int(self.seed) & 0xFFFFFFFFFFFFFFFF
        self.generator = np.random.Generator(np.random.PCG64(self.seed))

    def spawn(self, tag: str) -> "RngState":
        return RngState(derive_seed(self.seed, tag), self.algorithm)


def derive_seed(seed: int, tag: str) -> int:
    """Stable 64-bit child seed from a parent seed and a string tag."""
    h = hashlib.sha256(f"{int(seed)}:{tag}".encode()).digest()
    return int.from_bytes(h[:8], "little")
