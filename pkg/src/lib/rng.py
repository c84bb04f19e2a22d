"""Counter-based random streams.

Every draw comes from a Philox generator whose 128-bit key is (seed, trial)
and whose counter starts at (0, 0, step, purpose). Streams for different
(trial, step, purpose) triples never overlap, so parallel evaluation order and
resuming from a snapshot cannot change the sampled noise.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import IntEnum

import numpy as np

_U64 = 2**64


class Purpose(IntEnum):
    DATA = 0
    INIT = 1
    NOISE = 2
    SGLD = 3
    TRIAL = 4
    START = 5
    FAMILY = 6


@dataclass(frozen=True)
class Rng:
    seed: int
    trial: int = 0

    def __post_init__(self):
        if not 0 <= self.seed < _U64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {self.seed}")
        if not 0 <= self.trial < _U64:
            raise ValueError(f"trial must be a 64-bit unsigned integer, got {self.trial}")

    def for_trial(self, trial: int) -> "Rng":
        return Rng(self.seed, trial)

    def stream(self, purpose: Purpose, step: int = 0) -> np.random.Generator:
        key = np.array([self.seed, self.trial], dtype=np.uint64)
        counter = np.array([0, 0, step, int(purpose)], dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key, counter=counter))
