"""Envelopes, the reduced walk and typical-loop statistics.

The envelope of an F at position i is the sub-word X_phi(i) .. X_i. Its loop
length is the exit time of the reduced walk obtained by exploring the
envelope backwards from the F; nested envelopes are skipped in one step.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field

import numpy as np

from . import _loopkern as K
from .params import ModelParams
from .parallel import run_replicas
from .rng import RawStream, decode_symbols, replica_generator, symbol_thresholds
from .words import SYM_F, Word, as_word, match_kernel

VARIANTS = (
    "first-F-left-of-0",
    "first-production-eaten-by-F",
    "condition-X0-is-F",
    "condition-match-of-0-is-F",
)
LOOP_TYPES = ("hF", "cF")


class CensoredError(RuntimeError):
    """The backward search ran out of budget (or of available past)."""

    def __init__(self, msg, lower_bound=None):
        super().__init__(msg)
        self.lower_bound = lower_bound


class NotAnFError(ValueError):
    pass


@dataclass(frozen=True)
class Envelope:
    start: int
    end: int
    loop_type: str
    reduced_boundary: int
    children: tuple = ()
    word: Word = field(default=None, repr=False, compare=False)

    @property
    def size(self) -> int:
        return self.end - self.start + 1

    @property
    def interval(self):
        return (self.start, self.end)

    def symbols(self) -> np.ndarray:
        return self.word.symbols[self.word.index(self.start): self.word.index(self.end) + 1]

    def __str__(self):
        from .words import decode_text
        return decode_text(self.symbols())


@dataclass(frozen=True)
class ReducedWalkTrace:
    """Steps of the reduced walk; coordinate 'c' or 'h' per step."""

    coords: tuple
    increments: tuple
    consumed: tuple
    path: tuple  # (c_n, h_n) after each step
    tau: int
    terminating: str

    def consumed_on(self, coord: str) -> int:
        return sum(k for c, k in zip(self.coords, self.consumed) if c == coord)


@dataclass(frozen=True)
class LoopStats:
    length: int
    area: int
    loop_type: str | None
    censored: bool
    envelope_size: int
    no_f: bool = False


# ---------------------------------------------------------------- pasts

class StreamPast:
    """Lazily generated i.i.d. past: the symbol at position -k is draw k.

    Positions are 0, -1, -2, ...; ``window(lo, 0)`` extends the stream as
    needed.
    """

    def __init__(self, params: ModelParams, seed: int, replica: int = 0):
        self.stream = RawStream(seed, replica, stream=1)
        self.thr = symbol_thresholds(params.probabilities())
        self.syms = np.zeros(0, np.uint8)

    def window(self, lo: int, hi: int) -> np.ndarray:
        need = -lo + 1
        if need > len(self.syms):
            raw = self.stream.take(need - len(self.syms))
            self.syms = np.concatenate([self.syms, decode_symbols(raw, self.thr)])
        return self.syms[-hi: -lo + 1][::-1]

    def at(self, position: int) -> int:
        return int(self.window(position, position)[0])

    def first_position_available(self):
        return None  # unbounded


def _window(source, lo, hi):
    if isinstance(source, Word):
        lo = max(lo, source.first_position)
        return lo, source.symbols[source.index(lo): source.index(hi) + 1]
    return lo, source.window(lo, hi)


def find_envelope(source, f_position: int, budget: int | None = None) -> Envelope:
    """Envelope of the F at ``f_position``, with its nested sub-envelopes.

    ``source`` is a :class:`Word` or a lazily extendable past such as
    :class:`StreamPast`. At most ``budget`` symbols before the F are read.
    """
    if isinstance(source, str):
        source = Word.from_text(source)
    sym_at = source.symbols[source.index(f_position)] if isinstance(source, Word) else source.at(f_position)
    if sym_at != SYM_F:
        raise NotAnFError(f"symbol at position {f_position} is not an F")
    limit = budget if budget is not None else (1 << 62)
    span = 64
    while True:
        span = min(span, limit)
        lo, syms = _window(source, f_position - span, f_position)
        partner = match_kernel(np.ascontiguousarray(syms))
        j = partner[-1]
        if j >= 0:
            break
        exhausted = isinstance(source, Word) and lo == source.first_position
        if span >= limit or exhausted:
            raise CensoredError(
                f"no match for the F at {f_position} within {len(syms) - 1} earlier symbols",
                lower_bound=len(syms) + 1)
        span *= 4
    seg = np.ascontiguousarray(syms[j:])
    start = lo + int(j)
    word = Word(seg, origin=-start)
    return _build_tree(word, match_kernel(seg), 0, len(seg) - 1)


def _build_tree(word: Word, partner, a, b) -> Envelope:
    """Envelope tree for word indices a..b (b is the F, a its match)."""
    syms = word.symbols
    children = []
    i = b - 1
    while i > a:
        if syms[i] == SYM_F:
            k = int(partner[i])
            children.append(_build_tree(word, partner, k, i))
            i = k - 1
        else:
            i -= 1
    children.reverse()
    inner = slice(a + 1, b)
    outside = (partner[inner] < a)
    boundary = int(np.count_nonzero(outside))
    o = word.origin
    return Envelope(a - o, b - o, LOOP_TYPES[int(syms[a])], boundary, tuple(children), word)


def reduced_walk(envelope: Envelope) -> ReducedWalkTrace:
    """Replay the backward exploration of ``envelope`` as a two-coordinate walk."""
    word = envelope.word
    syms = word.symbols
    child_at = {word.index(ch.end): ch for ch in envelope.children}
    c = h = 0
    coords, incs, cons, path = [], [], [], []
    i = word.index(envelope.end) - 1
    a = word.index(envelope.start)
    while True:
        s = syms[i]
        if i in child_at:
            ch = child_at[i]
            coord = "h" if ch.loop_type == "cF" else "c"
            inc, k = ch.reduced_boundary, ch.size
            i -= k
        else:
            coord = "c" if s in (1, 3) else "h"
            inc = 1 if s >= 2 else -1
            k = 1
            i -= 1
        if coord == "c":
            c += inc
        else:
            h += inc
        coords.append(coord)
        incs.append(inc)
        cons.append(k)
        path.append((c, h))
        if c < 0 or h < 0:
            break
        if i < a:
            raise AssertionError("reduced walk ran past the envelope start")
    return ReducedWalkTrace(tuple(coords), tuple(incs), tuple(cons), tuple(path), len(coords), coords[-1])


def loop_length(envelope: Envelope) -> int:
    return reduced_walk(envelope).tau


def loop_area(envelope: Envelope) -> int:
    """Triangles of the loop plus those it encloses.

    A nested envelope of the opposite type lies inside the loop, except for
    the one triangle it shares with the loop itself.
    """
    tau = loop_length(envelope)
    inside = sum(ch.size - 1 for ch in envelope.children if ch.loop_type != envelope.loop_type)
    return tau + inside


def loop_stats(envelope: Envelope) -> LoopStats:
    return LoopStats(loop_length(envelope), loop_area(envelope), envelope.loop_type, False, envelope.size)


# ---------------------------------------------------------------- samplers

@dataclass
class LoopBatch:
    """Column arrays of loop samples from one run."""

    variant: str
    p: float
    seed: int
    length: np.ndarray
    area: np.ndarray
    size: np.ndarray
    loop_type: np.ndarray  # 0 hF, 1 cF, -1 unknown
    censored: np.ndarray
    no_f: np.ndarray
    alt_area: np.ndarray
    children: np.ndarray
    pool_index: np.ndarray | None = None  # pool member behind each resampled loop

    def __len__(self):
        return len(self.length)

    @property
    def ok(self) -> np.ndarray:
        return ~(self.censored | self.no_f)

    @property
    def censored_fraction(self) -> float:
        return float(self.censored.mean()) if len(self) else 0.0

    def stats(self, k: int) -> LoopStats:
        t = int(self.loop_type[k])
        return LoopStats(int(self.length[k]), int(self.area[k]), LOOP_TYPES[t] if t >= 0 else None,
                         bool(self.censored[k]), int(self.size[k]), bool(self.no_f[k]))

    @classmethod
    def from_records(cls, variant, p, seed, res) -> "LoopBatch":
        st = res[:, K.S_STATUS]
        return cls(variant, p, seed,
                   res[:, K.S_TAU].copy(), res[:, K.S_AREA].copy(), res[:, K.S_SIZE].copy(),
                   res[:, K.S_TYPE].astype(np.int8), st == K.CENSORED, st == K.NO_F,
                   res[:, K.S_ALT].copy(), res[:, K.S_M].copy())

    @classmethod
    def concat(cls, batches) -> "LoopBatch":
        b0 = batches[0]
        cols = ("length", "area", "size", "loop_type", "censored", "no_f", "alt_area", "children")
        return cls(b0.variant, b0.p, b0.seed,
                   *[np.concatenate([getattr(b, c) for b in batches]) for c in cols])

    def to_csv(self, fh, header_lines=()):
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["seed", "variant", "p", "loop_type", "length", "area", "envelope_size", "censored"])
        for k in range(len(self)):
            t = int(self.loop_type[k])
            w.writerow([self.seed, self.variant, repr(self.p), LOOP_TYPES[t] if t >= 0 else "",
                        int(self.length[k]), int(self.area[k]), int(self.size[k]), int(self.censored[k])])

    def csv_text(self, header_lines=()) -> str:
        buf = io.StringIO()
        self.to_csv(buf, header_lines)
        return buf.getvalue()


def _variant_code(variant) -> int:
    if isinstance(variant, int):
        if not 1 <= variant <= 4:
            raise ValueError("variant index must be 1..4")
        return variant
    try:
        return VARIANTS.index(variant) + 1
    except ValueError:
        raise ValueError(f"unknown sampler variant {variant!r}; choose from {VARIANTS}") from None


def _replica_records(p, code, n, seed, replica, budget):
    """Run ``n`` samples of one variant on one replica stream."""
    params = ModelParams(p)
    res = np.zeros((n, K.NSTAT), np.int64)
    if p == 0.0:
        # F has probability zero: no sampler can ever end on an F
        res[:, K.S_STATUS] = K.NO_F
        res[:, K.S_TYPE] = -1
        return res
    thr = symbol_thresholds(params.probabilities())
    stream = RawStream(seed, replica, stream=10 + code)
    attempts = np.zeros((n, 2), np.int64)
    j = 0
    while j < n:
        sym = decode_symbols(stream.buf[stream.pos:], thr)
        stop = len(sym)
        if code in (1, 3):
            j, off = K.run_backward(sym, j, stop, code == 1, budget, n, res)
        elif code == 2:
            j, off = K.run_first_eaten(sym, j, stop, budget, n, res)
        else:
            j, off = K.run_match_is_f(sym, j, stop, budget, n, res, attempts)
        stream.advance(stream.pos + off)
        if j < n:
            stream.grow()
    return res


def _replica_task(args):
    return _replica_records(*args)


def sample_loops(params: ModelParams, variant, n: int, seed: int, budget: int = 10**6,
                 workers: int = 1, per_replica: int = 10_000) -> LoopBatch:
    """``n`` typical-loop samples, split over replicas of ``per_replica`` draws.

    The split depends only on ``n`` and ``per_replica``, never on
    ``workers``, so results are identical for any worker count.
    """
    code = _variant_code(variant)
    if n < 1:
        raise ValueError("n must be positive")
    budget = int(budget)
    counts = [min(per_replica, n - r * per_replica) for r in range((n + per_replica - 1) // per_replica)]
    tasks = [(params.p, code, c, seed, r, budget) for r, c in enumerate(counts)]
    parts = run_replicas(_replica_task, tasks, workers)
    return LoopBatch.from_records(VARIANTS[code - 1], params.p, seed, np.concatenate(parts))


def sample_typical_loop(params: ModelParams, variant, seed: int, budget: int = 10**6) -> LoopStats:
    return sample_loops(params, variant, 1, seed, budget).stats(0)


def biased_weights(lengths) -> np.ndarray:
    w = np.asarray(lengths, dtype=np.float64)
    return w / w.sum()


def sample_biased_loops(params: ModelParams, n: int, seed: int, budget: int = 10**6,
                        n_base: int | None = None, workers: int = 1,
                        variant="condition-X0-is-F") -> LoopBatch:
    """Loops size-biased by length, by resampling a pool of typical loops.

    Each of the ``n`` outputs picks a pool member with probability
    proportional to its length (self-normalised over the uncensored pool).
    """
    n_base = n if n_base is None else int(n_base)
    pool = sample_loops(params, variant, n_base, seed, budget, workers)
    ok = np.flatnonzero(pool.ok)
    if ok.size == 0:
        raise CensoredError("no uncensored loop in the base pool")
    w = biased_weights(pool.length[ok])
    rng = replica_generator(seed, 0, stream=99)
    pick = ok[rng.choice(len(ok), size=n, p=w)]
    cols = ("length", "area", "size", "loop_type", "censored", "no_f", "alt_area", "children")
    return LoopBatch("length-biased", params.p, seed, *[getattr(pool, c)[pick] for c in cols], pool_index=pick)


def sample_biased_loop(params: ModelParams, seed: int, budget: int = 10**6, n_base: int = 1000) -> LoopStats:
    return sample_biased_loops(params, 1, seed, budget, n_base).stats(0)


# ---------------------------------------------------------------- comparisons

SIZE_CLASSES = 33  # sizes 1..32 and one class for > 32


def size_histogram(sizes) -> np.ndarray:
    s = np.asarray(sizes)
    return np.bincount(np.minimum(s, SIZE_CLASSES) - 1, minlength=SIZE_CLASSES)[:SIZE_CLASSES]


def compare_size_laws(a: LoopBatch, b: LoopBatch):
    """Two-sample chi-square over envelope-size classes; returns (stat, dof, p-value)."""
    from scipy.stats import chi2_contingency

    table = np.vstack([size_histogram(a.size[a.ok]), size_histogram(b.size[b.ok])])
    table = table[:, table.sum(axis=0) > 0]
    stat, pval, dof, _ = chi2_contingency(table, correction=False)
    return float(stat), int(dof), float(pval)


# ---------------------------------------------------------------- tail fits

BIASED_MIN_DISTINCT = 1000


def biased_window(x, pool_index, k_min: float = 100.0, k_max: float = 10_000.0):
    """Fit window for a resampled length-biased batch.

    Each pool loop is repeated in proportion to its length, so the tail is
    carried by few distinct pool loops. The upper end keeps at least
    max(1000, n/1000) distinct pool loops above it, n the number of distinct
    pool loops drawn.
    """
    x = np.asarray(x, dtype=np.float64)
    _, first = np.unique(np.asarray(pool_index), return_index=True)
    vals = np.sort(x[first])
    m = max(BIASED_MIN_DISTINCT, int(math.ceil(1e-3 * len(vals))))
    top = vals[-m] if len(vals) >= m else vals[0]
    return float(k_min), float(min(k_max, top))


def loop_tail_fits(batch: LoopBatch, method: str = "loglog", window=None, area_window=None, seed: int = 0,
                   budget: int | None = None) -> dict:
    """Tail fits of loop length and area over the samples that ended on an F.

    Censored loops (envelope search over budget) are excluded and the fit
    carries a warning. With ``budget`` the fits are repeated after also
    excluding every loop whose envelope exceeds budget/2, under the keys
    ``length_half_budget`` and ``area_half_budget``, so the sensitivity to
    truncation can be read off.
    """
    from .estimator import tail_fit

    keep = ~batch.no_f
    cens = batch.censored[keep]
    size = batch.size[keep]
    masks = [("", ~cens)]
    if budget is not None:
        masks.append(("_half_budget", ~cens & (size <= budget // 2)))
    out = {}
    for suffix, use in masks:
        for name, col, win in (("length", batch.length, window), ("area", batch.area, area_window)):
            x = col[keep][use].astype(np.float64)
            if win is None and batch.pool_index is not None:
                win = biased_window(x, batch.pool_index[keep][use])
            fit = tail_fit(x, method, window=win, seed=seed)
            dropped = int(len(use) - use.sum())
            if dropped:
                fit.censored_fraction = dropped / len(use)
                fit.warnings.append(f"{dropped} censored samples excluded")
            out[name + suffix] = fit
    return out
