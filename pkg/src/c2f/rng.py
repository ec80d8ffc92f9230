"""Deterministic, portable pseudo-random number generation.

The generator is counter based: draw ``n`` of a stream is a pure function of
``(seed, stream, n)``, so scalar and vectorised paths produce bit-identical
sequences and any position can be computed without replaying the stream.

Algorithm (fixed, do not change without bumping the regression vector):

* state derivation: ``base = mix64(mix64(seed ^ SEED_SALT) + stream * STREAM_SALT)``
* draw ``n``:       ``out_n = mix64(base + (n + 1) * GOLDEN)``
* ``mix64`` is the SplitMix64 finaliser (xor-shift / multiply, two rounds).
* ``uniform`` keeps the top 53 bits: ``(out >> 11) * 2**-53``, giving a
  full-mantissa float64 in ``[0, 1)``.

All integer arithmetic is modulo 2**64, which both Python ints and numpy
uint64 implement exactly, so uniform streams are bit-identical across
platforms. Normal deviates go through Box-Muller and therefore through libm;
they are deterministic per machine but not guaranteed bit-identical across
libm implementations.

First four ``next_u64`` outputs for seed 0, stream 0 (regression vector):

    12407216050462473994
    567824770961591048
    13829437085620285694
    3738049842509169621
"""

from __future__ import annotations

import numpy as np

_M64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_SEED_SALT = 0xA0761D6478BD642F
_STREAM_SALT = 0xE7037ED1A0B428DB

# Reserved stream indices; per-sample data streams live above _STREAM_DATA_BASE.
STREAM_INIT = 1
STREAM_SAMPLE = 2
STREAM_MC = 3
STREAM_DATA_BASE = 1 << 32


def _mix64(z: int) -> int:
    z &= _M64
    z = ((z ^ (z >> 30)) * 0xBF58476D1CE4E5B9) & _M64
    z = ((z ^ (z >> 27)) * 0x94D049BB133111EB) & _M64
    return z ^ (z >> 31)


def _mix64_vec(z: np.ndarray) -> np.ndarray:
    z = z.astype(np.uint64, copy=True)
    with np.errstate(over="ignore"):
        z ^= z >> np.uint64(30)
        z *= np.uint64(0xBF58476D1CE4E5B9)
        z ^= z >> np.uint64(27)
        z *= np.uint64(0x94D049BB133111EB)
        z ^= z >> np.uint64(31)
    return z


class Rng:
    """Counter-based PRNG stream identified by ``(seed, stream)``.

    Distinct streams of the same seed are decorrelated by the state
    derivation; use them for independent purposes (data generation, weight
    init, sampling decisions) so consuming one stream never shifts another.
    """

    def __init__(self, seed: int, stream: int = 0):
        self.seed = int(seed)
        self.stream = int(stream)
        self._base = _mix64(_mix64(self.seed ^ _SEED_SALT) + (self.stream * _STREAM_SALT & _M64))
        self._count = 0

    def __repr__(self):
        return f"Rng(seed={self.seed}, stream={self.stream}, count={self._count})"

    def next_u64(self) -> int:
        self._count += 1
        return _mix64(self._base + self._count * _GOLDEN)

    def uniform(self) -> float:
        """One float64 in [0, 1) with a fully random 53-bit mantissa."""
        return (self.next_u64() >> 11) * (2.0 ** -53)

    def uniforms(self, n: int) -> np.ndarray:
        """``n`` uniforms, bit-identical to ``n`` scalar ``uniform()`` calls."""
        counts = np.arange(self._count + 1, self._count + n + 1, dtype=np.uint64)
        self._count += n
        with np.errstate(over="ignore"):
            z = np.uint64(self._base) + counts * np.uint64(_GOLDEN)
        return (_mix64_vec(z) >> np.uint64(11)) * (2.0 ** -53)

    def normals(self, n: int) -> np.ndarray:
        """``n`` standard normals via Box-Muller; consumes ``2*ceil(n/2)`` draws."""
        m = (n + 1) // 2
        u = self.uniforms(2 * m)
        r = np.sqrt(-2.0 * np.log(1.0 - u[:m]))
        ang = 2.0 * np.pi * u[m:]
        out = np.concatenate([r * np.cos(ang), r * np.sin(ang)])
        return out[:n]

    def normal(self) -> float:
        return float(self.normals(1)[0])

    def randint(self, n: int) -> int:
        """Integer in [0, n) from one uniform draw (bias < 2**-53 * n)."""
        if n <= 0:
            raise ValueError(f"randint bound must be positive, got {n}")
        return min(int(self.uniform() * n), n - 1)


def data_rng(seed: int, index: int, namespace: int = 0) -> Rng:
    """Per-sample stream: generation is a pure function of (seed, namespace, index)."""
    return Rng(seed, stream=STREAM_DATA_BASE + (namespace << 40) + index)
