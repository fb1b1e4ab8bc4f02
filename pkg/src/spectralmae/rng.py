"""Counter-based deterministic random number generation.

Every draw is a pure function of (seed, counter): the generator feeds
``seed + (counter+1) * GOLDEN`` through the SplitMix64 finalizer
(Steele, Lea & Flood's mixing constants). There is no hidden state
beyond the counter, so identical seed + identical call sequence gives
bit-identical streams on every platform, streams can be forked with
`child`, and a generator position is two u64s in a checkpoint.
"""

from __future__ import annotations

import hashlib
import struct

import numpy as np

_MASK64 = (1 << 64) - 1
_GOLDEN = 0x9E3779B97F4A7C15
_MIX1 = 0xBF58476D1CE4E5B9
_MIX2 = 0x94D049BB133111EB


def _mix64(z: int) -> int:
    z &= _MASK64
    z = ((z ^ (z >> 30)) * _MIX1) & _MASK64
    z = ((z ^ (z >> 27)) * _MIX2) & _MASK64
    return z ^ (z >> 31)


def _mix64_array(z: np.ndarray) -> np.ndarray:
    # uint64 arithmetic wraps mod 2^64, matching the scalar path bit for bit
    z = z.astype(np.uint64, copy=True)
    z ^= z >> np.uint64(30)
    z *= np.uint64(_MIX1)
    z ^= z >> np.uint64(27)
    z *= np.uint64(_MIX2)
    z ^= z >> np.uint64(31)
    return z


class CounterRng:
    """SplitMix64 counter generator; see module docstring for the algorithm."""

    def __init__(self, seed: int, counter: int = 0):
        self.seed = int(seed) & _MASK64
        self.counter = int(counter)

    def state(self) -> tuple[int, int]:
        return (self.seed, self.counter)

    def next_u64(self) -> int:
        self.counter += 1
        return _mix64(self.seed + self.counter * _GOLDEN)

    def next_u64_array(self, n: int) -> np.ndarray:
        base = np.uint64(self.seed)
        idx = np.arange(self.counter + 1, self.counter + n + 1, dtype=np.uint64)
        self.counter += n
        with np.errstate(over="ignore"):
            return _mix64_array(base + idx * np.uint64(_GOLDEN))

    def uniform(self) -> float:
        """One float64 in [0, 1), from the top 53 bits of a draw."""
        return (self.next_u64() >> 11) / float(1 << 53)

    def uniform_array(self, shape) -> np.ndarray:
        n = int(np.prod(shape)) if np.ndim(shape) else int(shape)
        u = self.next_u64_array(n) >> np.uint64(11)
        return (u / float(1 << 53)).reshape(shape)

    def normal_array(self, shape) -> np.ndarray:
        """Standard normals via Box-Muller; consumes 2 draws per value."""
        n = int(np.prod(shape)) if np.ndim(shape) else int(shape)
        u1 = (self.next_u64_array(n) >> np.uint64(11)) + np.uint64(1)
        u2 = self.next_u64_array(n) >> np.uint64(11)
        u1 = u1 / float(1 << 53)  # in (0, 1]: log is finite
        u2 = u2 / float(1 << 53)
        z = np.sqrt(-2.0 * np.log(u1)) * np.cos(2.0 * np.pi * u2)
        return z.reshape(shape)

    def truncated_normal_array(self, shape, std: float = 1.0, bound: float = 2.0) -> np.ndarray:
        """Normals with |z| > bound resampled (per element, fixed retry order)."""
        n = int(np.prod(shape)) if np.ndim(shape) else int(shape)
        out = self.normal_array(n)
        for _ in range(64):
            bad = np.abs(out) > bound
            if not bad.any():
                break
            out[bad] = self.normal_array(int(bad.sum()))
        return (out * std).reshape(shape)

    def randbelow(self, n: int) -> int:
        """Integer in [0, n) via modulo; bias is < n / 2^64, documented and accepted."""
        if n <= 0:
            raise ValueError("randbelow requires n >= 1")
        return self.next_u64() % n

    def permutation(self, n: int) -> np.ndarray:
        """Fisher-Yates shuffle of arange(n)."""
        perm = np.arange(n, dtype=np.int64)
        for i in range(n - 1, 0, -1):
            j = self.randbelow(i + 1)
            perm[i], perm[j] = perm[j], perm[i]
        return perm

    def child(self, *tags) -> "CounterRng":
        """Fork an independent stream keyed by (seed, *tags).

        Tags (ints or strings) are folded through BLAKE2b-64 so the child
        seed depends only on the parent seed and the tag tuple, never on
        how many draws the parent has made.
        """
        h = hashlib.blake2b(digest_size=8)
        h.update(struct.pack("<Q", self.seed))
        for t in tags:
            if isinstance(t, (int, np.integer)):
                h.update(b"i" + struct.pack("<q", int(t)))
            elif isinstance(t, str):
                raw = t.encode("utf-8")
                h.update(b"s" + struct.pack("<I", len(raw)) + raw)
            else:
                raise TypeError(f"child tag must be int or str, got {type(t).__name__}")
        return CounterRng(struct.unpack("<Q", h.digest())[0])
