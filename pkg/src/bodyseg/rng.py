"""Reproducible random streams.

Every stochastic component in the package (weight init, dropout noise,
augmentation draws, minibatch shuffling) pulls from an :class:`RngStream`.
Streams are backed by the counter-based Philox 4x64 bit generator, keyed by
a SHA-256 digest of the root seed and the labels of all ``child`` calls, so
a given (seed, label path) pair produces the same sample sequence on every
platform and every run.
"""

from __future__ import annotations

import hashlib

import numpy as np

__all__ = ["RngStream"]


def _derive_key(seed: int, path: tuple[str, ...]) -> int:
    h = hashlib.sha256()
    h.update(int(seed).to_bytes(8, "little", signed=True))
    for label in path:
        h.update(b"\x00")
        h.update(label.encode("utf-8"))
    return int.from_bytes(h.digest()[:16], "little")


class RngStream:
    """A named, seeded random stream with derivable child streams.

    Child streams created with distinct labels are independent by key
    construction: each (seed, label path) maps to its own 128-bit Philox key.
    """

    def __init__(self, seed: int, _path: tuple[str, ...] = ()):
        self.seed = int(seed)
        self.path = _path
        self._gen = np.random.Generator(np.random.Philox(key=_derive_key(seed, _path)))

    def child(self, label: str) -> "RngStream":
        """Derive an independent stream identified by ``label``."""
        return RngStream(self.seed, self.path + (str(label),))

    def uniform(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape).astype(np.float64, copy=False)

    def normal(self, shape, std: float = 1.0) -> np.ndarray:
        return self._gen.normal(0.0, std, size=shape).astype(np.float64, copy=False)

    def integers(self, low: int, high: int, shape=None) -> np.ndarray:
        return self._gen.integers(low, high, size=shape)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, path={'/'.join(self.path) or '<root>'})"
