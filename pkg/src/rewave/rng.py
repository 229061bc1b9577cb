"""Counter-based 64-bit random streams.

Every draw is a pure function of ``(seed, counter)``, so a stream can be
evaluated for any subset of counters in any order and always yields the
same numbers. Seeds for sub-streams are derived with :func:`mix`.
"""

from __future__ import annotations

import hashlib

import numpy as np

MASK64 = (1 << 64) - 1
GOLDEN = 0x9E3779B97F4A7C15
_M1 = 0xBF58476D1CE4E5B9
_M2 = 0x94D049BB133111EB
_INV_2_53 = 1.0 / (1 << 53)


def mix64(z: int) -> int:
    """SplitMix64 finalizer on a Python int."""
    z &= MASK64
    z = ((z ^ (z >> 30)) * _M1) & MASK64
    z = ((z ^ (z >> 27)) * _M2) & MASK64
    return z ^ (z >> 31)


def _word(value) -> int:
    if isinstance(value, str):
        digest = hashlib.blake2b(value.encode("utf-8"), digest_size=8).digest()
        return int.from_bytes(digest, "little")
    if isinstance(value, (bool, np.bool_)):
        raise TypeError("booleans are not valid seed words")
    return int(value) & MASK64


def mix(*words) -> int:
    """Derive a 64-bit seed from integers and string tags.

    ``mix(master, class_id)`` and ``mix(class_seed, "aug", i)`` are the
    derivations used for class, episode and augmentation streams.
    """
    if not words:
        raise ValueError("mix() needs at least one word")
    h = GOLDEN
    for w in words:
        h = mix64(h ^ mix64((_word(w) + GOLDEN) & MASK64))
    return h


def draw(seed: int, counter: int) -> int:
    """Raw 64-bit output number ``counter`` of the stream ``seed``."""
    return mix64((seed + (counter + 1) * GOLDEN) & MASK64)


def uniform(seed: int, counter: int) -> float:
    """Uniform float in [0, 1) with 53 random bits."""
    return (draw(seed, counter) >> 11) * _INV_2_53


_U_M1 = np.uint64(_M1)
_U_M2 = np.uint64(_M2)
_U_GOLDEN = np.uint64(GOLDEN)
_S30, _S27, _S31, _S11 = (np.uint64(s) for s in (30, 27, 31, 11))


def uniforms(seed: int, counters: np.ndarray) -> np.ndarray:
    """Vectorised :func:`uniform` over an array of counters."""
    c = np.asarray(counters, dtype=np.uint64)
    z = np.uint64(seed & MASK64) + (c + np.uint64(1)) * _U_GOLDEN
    z = (z ^ (z >> _S30)) * _U_M1
    z = (z ^ (z >> _S27)) * _U_M2
    z = z ^ (z >> _S31)
    return (z >> _S11).astype(np.float64) * _INV_2_53


class Stream:
    """Sequential view over a counter-based stream, for small draws
    such as augmentation choices or split shuffles."""

    def __init__(self, seed: int):
        self.seed = seed & MASK64
        self.counter = 0

    def random(self) -> float:
        u = uniform(self.seed, self.counter)
        self.counter += 1
        return u

    def below(self, n: int) -> int:
        """Integer in [0, n)."""
        if n <= 0:
            raise ValueError("n must be positive")
        return min(int(self.random() * n), n - 1)

    def shuffle(self, items: list) -> list:
        """Fisher-Yates shuffle returning a new list."""
        out = list(items)
        for i in range(len(out) - 1, 0, -1):
            j = self.below(i + 1)
            out[i], out[j] = out[j], out[i]
        return out
