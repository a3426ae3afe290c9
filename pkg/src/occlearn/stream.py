"""Counter-based uniforms addressed by ``(seed, point index, slot)``."""

from __future__ import annotations

import numpy as np
from numba import njit

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_SLOT_MUL = np.uint64(0xD1B54A32D192ED03)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)


@njit(cache=True, nogil=True, inline="always")
def _mix(z):
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


@njit(cache=True, nogil=True)
def _uniforms(key, idx, slot):
    out = np.empty(idx.shape[0])
    salt = (np.uint64(slot) + np.uint64(1)) * _SLOT_MUL
    for n in range(idx.shape[0]):
        h = _mix(key ^ ((np.uint64(idx[n]) + np.uint64(1)) * _GOLDEN))
        h = _mix(h + salt)
        out[n] = np.float64(h >> np.uint64(11)) * (1.0 / 9007199254740992.0)
    return out


def _splitmix(z: np.ndarray) -> np.ndarray:
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


class UniformStream:
    """Stateless uniform draws in [0, 1).

    The value for a given ``(seed, index, slot)`` does not depend on who asks
    or in which order, so workers and the master see the same number for the
    same point.
    """

    def __init__(self, seed: int):
        self.seed = int(seed) & 0xFFFFFFFFFFFFFFFF
        self._key = _splitmix(np.array([self.seed], dtype=np.uint64) + _GOLDEN)[0]

    def uniform(self, indices, slot: int = 0) -> np.ndarray:
        idx = np.asarray(indices, dtype=np.int64)
        if idx.size and idx.min() < 0:
            raise ValueError("point indices must be non-negative")
        if slot < 0:
            raise ValueError("slot must be non-negative")
        return _uniforms(self._key, idx.reshape(-1), slot).reshape(idx.shape)

    def __call__(self, index: int, slot: int = 0) -> float:
        return float(self.uniform(np.array([index]), slot)[0])

    def __repr__(self):
        return f"UniformStream(seed={self.seed})"


class FixedStream:
    """Returns a constant for every draw. Handy for forcing degenerate couplings in tests."""

    def __init__(self, value: float):
        if not 0.0 <= value < 1.0:
            raise ValueError("value must lie in [0, 1)")
        self.value = float(value)
        self.seed = None

    def uniform(self, indices, slot: int = 0) -> np.ndarray:
        return np.full(np.shape(indices), self.value)

    def __call__(self, index: int, slot: int = 0) -> float:
        return self.value
