"""Counter-based random streams.

A draw is a pure function of ``(seed, purpose, trajectory index, counter)``:
the SplitMix64 finaliser is applied to ``key + (counter + 1) * GOLDEN``.  No
generator state is carried between draws, so any subset of trajectories can be
simulated in any order (or concurrently) and still see the same numbers.

Both a scalar numba flavour (used inside kernels) and a vectorised numpy
flavour are provided; they agree bit for bit on the integer part and to the
last ulp or so on the floating point transforms.
"""
from __future__ import annotations

import numpy as np

from ._accel import njit

GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_MIX1 = np.uint64(0xBF58476D1CE4E5B9)
_MIX2 = np.uint64(0x94D049BB133111EB)
_PURPOSE_MUL = np.uint64(0xD1B54A32D192ED03)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_ONE = np.uint64(1)
_TWO53_INV = 1.0 / 9007199254740992.0
_TWO_PI = 2.0 * np.pi

# stream purposes
XI = 1
INIT = 2
GAUSS = 3
SIGMA_MC = 4

_U64_MASK = (1 << 64) - 1


def seed_to_u64(seed: int) -> np.uint64:
    return np.uint64(int(seed) & _U64_MASK)


@njit
def mix64(z):
    z = (z ^ (z >> _S30)) * _MIX1
    z = (z ^ (z >> _S27)) * _MIX2
    return z ^ (z >> _S31)


@njit
def stream_key(seed, purpose, index):
    """Key of the stream for trajectory ``index``; all arguments uint64."""
    base = mix64(seed ^ (purpose * _PURPOSE_MUL))
    return mix64(base + (index + _ONE) * GOLDEN)


@njit
def uniform(key, counter):
    """U[0, 1) with 53 random bits."""
    z = mix64(key + (counter + _ONE) * GOLDEN)
    return float(z >> _S11) * _TWO53_INV


@njit
def normal(key, counter):
    """Standard normal from uniforms ``2*counter`` and ``2*counter + 1`` (Box-Muller, cosine branch)."""
    c = counter + counter
    u1 = 1.0 - uniform(key, c)
    u2 = uniform(key, c + _ONE)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(_TWO_PI * u2)


# numpy flavour -------------------------------------------------------------

def mix64_np(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = (z ^ (z >> _S30)) * _MIX1
        z = (z ^ (z >> _S27)) * _MIX2
        return z ^ (z >> _S31)


def stream_keys_np(seed, purpose: int, indices) -> np.ndarray:
    idx = np.asarray(indices, dtype=np.uint64)
    with np.errstate(over="ignore"):
        base = mix64_np(np.array([seed_to_u64(seed) ^ (np.uint64(purpose) * _PURPOSE_MUL)]))
        return mix64_np(base + (idx + _ONE) * GOLDEN)


def uniform_np(keys: np.ndarray, counter) -> np.ndarray:
    with np.errstate(over="ignore"):
        z = mix64_np(keys + (np.uint64(counter) + _ONE) * GOLDEN)
    return (z >> _S11).astype(np.float64) * _TWO53_INV


def normal_np(keys: np.ndarray, counter) -> np.ndarray:
    c = 2 * int(counter)
    u1 = 1.0 - uniform_np(keys, c)
    u2 = uniform_np(keys, c + 1)
    return np.sqrt(-2.0 * np.log(u1)) * np.cos(_TWO_PI * u2)


def uniforms(seed: int, purpose: int, index: int, n: int) -> np.ndarray:
    """First ``n`` uniforms of one stream (convenience for non-kernel code)."""
    key = stream_keys_np(seed, purpose, [index])
    counters = np.arange(n, dtype=np.uint64)
    with np.errstate(over="ignore"):
        z = mix64_np(key + (counters + _ONE) * GOLDEN)
    return (z >> _S11).astype(np.float64) * _TWO53_INV
