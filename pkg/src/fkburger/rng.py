"""Counter-based random streams.

Every Monte Carlo replica owns a Philox stream keyed by (master seed, replica
index), so results do not depend on how replicas are spread over workers.
Kernels consume raw 64-bit words; symbols are decoded from the top 53 bits.
"""
from __future__ import annotations

import numpy as np
from numba import njit

_INV53 = 1.0 / 9007199254740992.0  # 2**-53


def replica_seedseq(seed: int, replica: int = 0, stream: int = 0) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(seed) & ((1 << 64) - 1), spawn_key=(int(replica), int(stream)))


def replica_generator(seed: int, replica: int = 0, stream: int = 0) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(replica_seedseq(seed, replica, stream)))


def symbol_thresholds(probs) -> np.ndarray:
    """Cumulative thresholds for decoding a uniform into a symbol code."""
    cum = np.cumsum(np.asarray(probs, dtype=np.float64))
    cum[-1] = 1.0
    return cum


@njit(cache=True)
def uniform_from_raw(x):
    return (x >> np.uint64(11)) * _INV53


@njit(cache=True)
def decode_symbol(x, thr):
    u = (x >> np.uint64(11)) * _INV53
    if u < thr[0]:
        return 0
    if u < thr[1]:
        return 1
    if u < thr[2]:
        return 2
    if u < thr[3]:
        return 3
    return 4


def decode_symbols(raw: np.ndarray, thr: np.ndarray) -> np.ndarray:
    """Vectorised counterpart of :func:`decode_symbol`."""
    u = (raw >> np.uint64(11)).astype(np.float64) * _INV53
    return np.searchsorted(thr[:4], u, side="right").astype(np.uint8)


class RawStream:
    """Lazily extended window over one replica's raw 64-bit stream.

    ``buf[pos:]`` is the unconsumed part. Kernels read from it and report how
    far they got; when a sample runs past the end the window is grown and the
    sample is replayed from the same offset, which keeps results independent
    of the chunk size.
    """

    def __init__(self, seed: int, replica: int = 0, stream: int = 0, chunk: int = 1 << 16):
        self.bitgen = np.random.Philox(replica_seedseq(seed, replica, stream))
        self.chunk = int(chunk)
        self.buf = self.bitgen.random_raw(self.chunk)
        self.pos = 0
        self.consumed = 0

    def advance(self, new_pos: int):
        self.consumed += new_pos - self.pos
        self.pos = new_pos

    def grow(self, at_least: int | None = None):
        """Drop the consumed prefix and at least double the remaining window."""
        rest = self.buf[self.pos:]
        extra = max(self.chunk, len(rest), (at_least or 0) - len(rest))
        self.buf = np.concatenate([rest, self.bitgen.random_raw(extra)])
        self.pos = 0

    def take(self, n: int) -> np.ndarray:
        while len(self.buf) - self.pos < n:
            self.grow(n)
        out = self.buf[self.pos:self.pos + n]
        self.advance(self.pos + n)
        return out
