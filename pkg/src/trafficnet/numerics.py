"""Dense float64 tensors and deterministic random number generation.

Tensors are plain numpy float64 arrays in row-major (C) order; the helpers
here enforce the construction contracts every other module relies on.
"""

from __future__ import annotations

import numpy as np

Tensor = np.ndarray


class Rng:
    """Seeded random source. Equal seeds give bit-identical draw sequences."""

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def spawn(self, key: int) -> "Rng":
        """Derive an independent substream; (seed, key) determines it fully."""
        child = Rng.__new__(Rng)
        child.seed = self.seed
        child._gen = np.random.Generator(
            np.random.PCG64(np.random.SeedSequence([self.seed, int(key)]))
        )
        return child

    def uniform(self, lo: float, hi: float, shape) -> Tensor:
        return self._gen.uniform(lo, hi, size=shape).astype(np.float64)

    def normal(self, mean: float, sd: float, shape) -> Tensor:
        return self._gen.normal(mean, sd, size=shape).astype(np.float64)

    def integers(self, lo: int, hi: int, shape=None):
        return self._gen.integers(lo, hi, size=shape)

    def random(self, shape=None):
        return self._gen.random(size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)


def _check_shape(shape) -> tuple:
    shape = tuple(int(d) for d in shape)
    if len(shape) == 0:
        raise ValueError("tensor shape must have at least one dimension")
    for d in shape:
        if d < 1:
            raise ValueError(f"tensor dimensions must be >= 1, got {shape}")
    return shape


def tensor_new(shape, fill: float = 0.0) -> Tensor:
    """Tensor of the given shape with every element equal to fill."""
    return np.full(_check_shape(shape), float(fill), dtype=np.float64)


def tensor_rand_uniform(shape, lo: float, hi: float, rng: Rng) -> Tensor:
    """I.i.d. uniform draws on [lo, hi); deterministic given the rng seed."""
    if not lo < hi:
        raise ValueError(f"uniform interval is empty: lo={lo} hi={hi}")
    return rng.uniform(lo, hi, _check_shape(shape))


def tensor_map(op, x: Tensor) -> Tensor:
    """Apply op elementwise; shape preserved."""
    return np.vectorize(op, otypes=[np.float64])(x)


def tensor_zip(op, a: Tensor, b: Tensor) -> Tensor:
    """Combine two same-shaped tensors elementwise."""
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch in zip: {a.shape} vs {b.shape}")
    return np.vectorize(op, otypes=[np.float64])(a, b)


def tensor_sum(x: Tensor) -> float:
    """Sum of all elements."""
    return float(np.sum(x))
