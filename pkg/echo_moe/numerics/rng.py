"""
Counter-based deterministic random number generation.

Every random draw in echo-moe flows from one root seed through named
SplitMix64 streams. A stream is a pure function of (seed, name path, counter),
so two runs with the same seed produce bit-identical parameters, dropout masks,
shuffles and synthetic corpora on every platform.
"""

from __future__ import annotations

import math

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN_GAMMA = 0x9E3779B97F4A7C15

FNV64_OFFSET = 0xCBF29CE484222325
FNV64_PRIME = 0x100000001B3

_GAMMA_U64 = np.uint64(GOLDEN_GAMMA)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


def fnv1a_64(data: bytes) -> int:
    """64-bit FNV-1a hash of a byte string."""
    h = FNV64_OFFSET
    for byte in data:
        h ^= byte
        h = (h * FNV64_PRIME) & MASK64
    return h


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a Python integer."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    # uint64 array arithmetic wraps modulo 2**64
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class SplitMix64:
    """
    Counter-based SplitMix64 stream.

    Output i of a stream is ``mix64(key + (i + 1) * GOLDEN_GAMMA)``; the key is
    derived from the root seed and the stream's name path, so child streams
    obtained through :meth:`fork` never overlap with their parent in practice.
    """

    def __init__(self, seed: int, path: str = "root"):
        """
        Initialize a stream.

        Args:
            seed: Root seed (any Python integer, reduced modulo 2**64)
            path: Name path identifying this stream below the root
        """
        self.seed = int(seed) & MASK64
        self.path = path
        self._key = mix64(self.seed ^ fnv1a_64(path.encode("utf-8")))
        self._counter = 0

    def fork(self, name: str | int) -> SplitMix64:
        """Derive an independent named child stream."""
        return SplitMix64(self.seed, f"{self.path}/{name}")

    @property
    def counter(self) -> int:
        """Number of 64-bit words drawn so far."""
        return self._counter

    def next_u64(self, n: int) -> np.ndarray:
        """Draw ``n`` raw 64-bit words."""
        counters = np.arange(self._counter + 1, self._counter + n + 1, dtype=np.uint64)
        self._counter += n
        z = np.uint64(self._key) + counters * _GAMMA_U64
        return _mix64_array(z)

    def uniform(self, shape: int | tuple[int, ...] = ()) -> np.ndarray:
        """Uniform doubles in [0, 1) with 53 random bits each."""
        shape_t = (shape,) if isinstance(shape, int) else tuple(shape)
        n = math.prod(shape_t)
        words = self.next_u64(n)
        values = (words >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)
        return values.reshape(shape_t)

    def normal(self, shape: int | tuple[int, ...] = (), std: float = 1.0) -> np.ndarray:
        """Gaussian draws via the Box-Muller transform."""
        shape_t = (shape,) if isinstance(shape, int) else tuple(shape)
        n = math.prod(shape_t)
        pairs = (n + 1) // 2
        u1 = 1.0 - self.uniform(pairs)  # (0, 1]
        u2 = self.uniform(pairs)
        radius = np.sqrt(-2.0 * np.log(u1))
        angle = 2.0 * math.pi * u2
        z = np.concatenate([radius * np.cos(angle), radius * np.sin(angle)])[:n]
        return (z * std).reshape(shape_t)

    def integers(self, high: int, size: int) -> np.ndarray:
        """Integers uniformly drawn from ``range(high)``."""
        if high <= 0:
            raise ValueError("high must be positive")
        return np.minimum((self.uniform(size) * high).astype(np.int64), high - 1)

    def permutation(self, n: int) -> np.ndarray:
        """A uniformly random permutation of ``range(n)``."""
        return np.argsort(self.uniform(n), kind="stable")

    def choice(self, n: int, k: int) -> np.ndarray:
        """``k`` distinct indices from ``range(n)`` without replacement, in draw order."""
        if not 0 <= k <= n:
            raise ValueError(f"cannot choose {k} items from {n}")
        return self.permutation(n)[:k]
