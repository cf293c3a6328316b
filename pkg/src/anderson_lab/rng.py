"""Counter-based randomness keyed by (seed, stream, site).

Each draw is a pure function of its key, so results do not depend on the
order of evaluation, on how work is split, or on the number of threads.
The mixer is the splitmix64 finaliser applied in wrapping uint64 arithmetic.
"""

from __future__ import annotations

import numpy as np

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_MASK = (1 << 64) - 1


def _mix(z: np.ndarray) -> np.ndarray:
    z = z.copy()
    z ^= z >> np.uint64(30)
    z *= _M1
    z ^= z >> np.uint64(27)
    z *= _M2
    z ^= z >> np.uint64(31)
    return z


def _absorb(state: np.ndarray, word) -> np.ndarray:
    word = np.asarray(word).astype(np.int64).astype(np.uint64)
    return _mix(state + _GOLDEN + _mix(word + _GOLDEN))


def hash_keys(seed: int, *keys) -> np.ndarray:
    """Hash a seed and a sequence of (broadcastable) integer keys to uint64."""
    shape = np.broadcast_shapes(*(np.shape(k) for k in keys)) if keys else ()
    with np.errstate(over="ignore"):
        state = np.full(shape, np.uint64(int(seed) & _MASK), dtype=np.uint64)
        state = _mix(state + _GOLDEN)
        for k in keys:
            state = _absorb(state, np.broadcast_to(k, shape))
    return state


def derive_seed(seed: int, *keys: int) -> int:
    """A child seed for the sub-task identified by ``keys``."""
    return int(hash_keys(seed, *[np.int64(k) for k in keys]))


def to_unit(h: np.ndarray) -> np.ndarray:
    """Map uint64 words to floats strictly inside (0, 1).

    52 bits plus a half step: with 53 the top value rounds to exactly 1.
    """
    return ((h >> np.uint64(12)).astype(np.float64) + 0.5) * 2.0**-52


def site_uniforms(seed: int, sites: np.ndarray, stream: int = 0) -> np.ndarray:
    """One uniform per row of ``sites`` (an (n, 3) integer array)."""
    sites = np.asarray(sites, dtype=np.int64).reshape(-1, 3)
    h = hash_keys(seed, stream, sites[:, 0], sites[:, 1], sites[:, 2])
    return to_unit(h)


def generator(seed: int, *keys: int) -> np.random.Generator:
    """A numpy Generator for bulk auxiliary randomness, seeded from the counter hash."""
    return np.random.default_rng(derive_seed(seed, *keys))
