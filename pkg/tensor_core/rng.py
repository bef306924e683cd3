"""
Deterministic, splittable random streams.
"""

import zlib
from typing import Tuple, Union

import numpy as np


class Rng:
    """Counter-based (Philox) generator keyed by a 64-bit seed.

    ``split(label)`` derives an independent child stream, so dataset,
    poisoning and initialisation draws never share state.
    """

    def __init__(self, seed: int):
        if seed < 0 or seed >= 2 ** 64:
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {seed}")
        self.seed = int(seed)
        self._generator = np.random.Generator(np.random.Philox(key=self.seed))

    def __repr__(self) -> str:
        return f"Rng(seed={self.seed})"

    def split(self, label: Union[str, int]) -> "Rng":
        sequence = np.random.SeedSequence([self.seed & 0xFFFFFFFF, self.seed >> 32,
                                           zlib.crc32(str(label).encode("utf-8"))])
        return Rng(int(sequence.generate_state(1, np.uint64)[0]))

    def uniform(self, n: int) -> np.ndarray:
        return self._generator.random(n)

    def integers(self, low: int, high: int, size=None):
        """Uniform integers in [low, high)."""
        value = self._generator.integers(low, high, size=size)
        return int(value) if size is None else value

    def normal(self, shape: Tuple[int, ...], std: float = 1.0) -> np.ndarray:
        return self._generator.normal(0.0, std, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._generator.permutation(n)

    def choice(self, options):
        return options[self.integers(0, len(options))]


def gaussian(rng: Rng, mean: float, std: float, n: int) -> np.ndarray:
    """n draws from N(mean, std²); std=0 returns the constant mean."""
    if std < 0:
        raise ValueError(f"std must be non-negative, got {std}")
    if std == 0:
        return np.full(n, float(mean))
    return mean + std * rng._generator.standard_normal(n)
