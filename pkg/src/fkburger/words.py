"""Symbol calculus: words over {h, c, H, C, F}, reduction, matching, burger stacks.

Symbols are stored as small integer codes::

    h=0  c=1  H=2  C=3  F=4

h/c produce a hamburger/cheeseburger, H/C order one of that type and F orders
the freshest burger whatever its type.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .params import ModelParams, ParameterError
from .rng import RawStream, decode_symbols, replica_generator, symbol_thresholds

H_, C_ = 0, 1  # burger kinds, shared with production codes
SYM_h, SYM_c, SYM_H, SYM_C, SYM_F = 0, 1, 2, 3, 4
ALPHABET = "hcHCF"
_CODE = {ch: i for i, ch in enumerate(ALPHABET)}
PRODUCTIONS = frozenset("hc")
ORDERS = frozenset("HCF")

STRICT, COIN, SEEDED = "strict", "coin", "seeded-buffer"
_MODES = {STRICT: 0, COIN: 1, SEEDED: 2}


class UnderflowError(RuntimeError):
    """An order reached an empty (or exhausted) burger stack."""

    def __init__(self, index, msg=None):
        self.index = int(index)
        super().__init__(msg or f"burger stack underflow at symbol index {index}")


class NotBalancedError(ValueError):
    pass


def encode_text(text: str) -> np.ndarray:
    try:
        return np.fromiter((_CODE[ch] for ch in text if not ch.isspace()), dtype=np.uint8)
    except KeyError as exc:
        raise ValueError(f"unknown symbol {exc.args[0]!r}") from None


def decode_text(codes) -> str:
    return "".join(ALPHABET[int(s)] for s in codes)


@dataclass(frozen=True, eq=False)
class Word:
    """Finite symbol sequence; ``origin`` is the array index of position 0.

    Position ``k`` lives at array index ``k + origin`` so the past can carry
    negative positions.
    """

    symbols: np.ndarray
    origin: int = 0

    def __post_init__(self):
        arr = np.ascontiguousarray(self.symbols, dtype=np.uint8)
        if arr.ndim != 1:
            raise ValueError("a word is one-dimensional")
        if arr.size and arr.max() > 4:
            raise ValueError("symbol codes must be in 0..4")
        arr.setflags(write=False)
        object.__setattr__(self, "symbols", arr)
        object.__setattr__(self, "origin", int(self.origin))

    @classmethod
    def from_text(cls, text: str, origin: int = 0) -> "Word":
        return cls(encode_text(text), origin)

    def __len__(self):
        return len(self.symbols)

    def __str__(self):
        return decode_text(self.symbols)

    def __repr__(self):
        s = str(self)
        if len(s) > 40:
            s = s[:37] + "..."
        return f"Word({s!r}, origin={self.origin})"

    def __eq__(self, other):
        if not isinstance(other, Word):
            return NotImplemented
        return self.origin == other.origin and np.array_equal(self.symbols, other.symbols)

    def __hash__(self):
        return hash((self.origin, self.symbols.tobytes()))

    @property
    def first_position(self) -> int:
        return -self.origin

    @property
    def last_position(self) -> int:
        return len(self.symbols) - 1 - self.origin

    def positions(self) -> range:
        return range(self.first_position, self.last_position + 1)

    def index(self, position: int) -> int:
        i = position + self.origin
        if not 0 <= i < len(self.symbols):
            raise IndexError(f"position {position} outside word range")
        return i

    def at(self, position: int) -> str:
        return ALPHABET[self.symbols[self.index(position)]]

    def slice(self, start: int, end: int) -> "Word":
        """Sub-word on positions start..end (inclusive), keeping positions."""
        i, j = self.index(start), self.index(end)
        return Word(self.symbols[i:j + 1], origin=-start if start <= 0 <= end else self.origin - i)

    def count(self, ch: str) -> int:
        return int(np.count_nonzero(self.symbols == _CODE[ch]))

    # compact binary form: see docs/encoding.md
    def to_bytes(self) -> bytes:
        return pack_symbols(self.symbols, self.origin)

    @classmethod
    def from_bytes(cls, data: bytes) -> "Word":
        syms, origin = unpack_symbols(data)
        return cls(syms, origin)


_HEADER = struct.Struct("<4sQq")
_MAGIC = b"HCW1"


def pack_symbols(symbols, origin: int = 0) -> bytes:
    """Pack 3 bits per symbol, little-endian bit order."""
    syms = np.asarray(symbols, dtype=np.uint8)
    n = len(syms)
    bits = np.zeros(3 * n, dtype=np.uint8)
    bits[0::3] = syms & 1
    bits[1::3] = (syms >> 1) & 1
    bits[2::3] = (syms >> 2) & 1
    payload = np.packbits(bits, bitorder="little").tobytes()
    return _HEADER.pack(_MAGIC, n, int(origin)) + payload


def unpack_symbols(data: bytes):
    magic, n, origin = _HEADER.unpack_from(data)
    if magic != _MAGIC:
        raise ValueError("not a packed word")
    payload = np.frombuffer(data, dtype=np.uint8, offset=_HEADER.size)
    if len(payload) != (3 * n + 7) // 8:
        raise ValueError("packed word has the wrong payload length")
    bits = np.unpackbits(payload, bitorder="little")[: 3 * n]
    syms = bits[0::3] | (bits[1::3] << 1) | (bits[2::3] << 2)
    if syms.size and syms.max() > 4:
        raise ValueError("invalid symbol code in packed word")
    return syms.astype(np.uint8), origin


def as_word(w) -> Word:
    if isinstance(w, Word):
        return w
    if isinstance(w, str):
        return Word.from_text(w)
    return Word(np.asarray(w, dtype=np.uint8))


# ---------------------------------------------------------------- sampling

def sample_word(params: ModelParams, length: int, seed: int, origin: int = 0) -> Word:
    """i.i.d. symbols with the law of ``params``; deterministic in (params, length, seed)."""
    if not isinstance(params, ModelParams):
        params = ModelParams(float(params))
    if length < 1:
        raise ValueError("length must be positive")
    raw = RawStream(seed, 0).take(int(length))
    return Word(decode_symbols(raw, symbol_thresholds(params.probabilities())), origin)


# ---------------------------------------------------------------- matching

@njit(cache=True)
def match_kernel(sym):
    """Stack pass; partner index per symbol or -1 when unmatched."""
    n = sym.shape[0]
    partner = np.full(n, -1, np.int64)
    sh = np.empty(n, np.int64)
    sc = np.empty(n, np.int64)
    nh = 0
    nc = 0
    for i in range(n):
        s = sym[i]
        if s == 0:
            sh[nh] = i
            nh += 1
        elif s == 1:
            sc[nc] = i
            nc += 1
        elif s == 2:
            if nh > 0:
                nh -= 1
                j = sh[nh]
                partner[i] = j
                partner[j] = i
        elif s == 3:
            if nc > 0:
                nc -= 1
                j = sc[nc]
                partner[i] = j
                partner[j] = i
        else:
            th = sh[nh - 1] if nh > 0 else -1
            tc = sc[nc - 1] if nc > 0 else -1
            if th < 0 and tc < 0:
                continue
            if th > tc:
                nh -= 1
                j = th
            else:
                nc -= 1
                j = tc
            partner[i] = j
            partner[j] = i
    return partner


@dataclass(frozen=True, eq=False)
class MatchTable:
    """The matching involution of a word, in position coordinates."""

    word: Word
    partner: np.ndarray = field(repr=False)

    def phi(self, position: int):
        """Matched position, or None when the symbol is unmatched."""
        j = self.partner[self.word.index(position)]
        return None if j < 0 else int(j) - self.word.origin

    def is_matched(self, position: int) -> bool:
        return self.partner[self.word.index(position)] >= 0

    def unmatched_positions(self):
        return [int(i) - self.word.origin for i in np.flatnonzero(self.partner < 0)]

    def pairs(self):
        """(production position, order position) for every matched pair."""
        o = self.word.origin
        idx = np.flatnonzero((self.partner >= 0) & (self.word.symbols < 2))
        return [(int(i) - o, int(self.partner[i]) - o) for i in idx]

    def as_dict(self):
        o = self.word.origin
        return {int(i) - o: int(j) - o for i, j in enumerate(self.partner) if j >= 0}


def match_indices(word) -> MatchTable:
    """Match every order with the burger it eats (partial on finite words)."""
    word = as_word(word)
    partner = match_kernel(word.symbols)
    partner.setflags(write=False)
    return MatchTable(word, partner)


def reduce(word) -> Word:
    """Normal form under cC=cF=hH=hF=empty, cH=Hc, hC=Ch.

    Unmatched orders keep their relative order and come first, followed by
    the unmatched productions in their original order.
    """
    word = as_word(word)
    partner = match_kernel(word.symbols)
    free = partner < 0
    syms = word.symbols
    out = np.concatenate([syms[free & (syms >= 2)], syms[free & (syms < 2)]])
    return Word(out)


def is_balanced(word) -> bool:
    return len(reduce(word)) == 0


def f_symbol_count(word) -> int:
    """Number of F symbols left in the reduced word."""
    word = as_word(word)
    partner = match_kernel(word.symbols)
    return int(np.count_nonzero((partner < 0) & (word.symbols == SYM_F)))


# ---------------------------------------------------------------- burger stacks

@dataclass(frozen=True, eq=False)
class BurgerStack:
    """Unconsumed productions, bottom first; ``kinds`` uses 0=h, 1=c.

    ``underflow_mode`` decides what happens when an order finds no burger:
    ``strict`` raises, ``coin`` treats the stack as an unknown infinite one
    (typed orders always succeed, an F on an empty known stack picks its type
    by a fair coin drawn from ``seed``), ``seeded-buffer`` means the entries
    are a finite pre-seeded buffer and running out of it raises.
    """

    positions: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    kinds: np.ndarray = field(default_factory=lambda: np.zeros(0, np.uint8))
    underflow_mode: str = STRICT
    seed: int = 0

    def __post_init__(self):
        pos = np.ascontiguousarray(self.positions, dtype=np.int64)
        kinds = np.ascontiguousarray(self.kinds, dtype=np.uint8)
        if pos.shape != kinds.shape:
            raise ValueError("positions and kinds differ in length")
        if pos.size > 1 and np.any(np.diff(pos) <= 0):
            raise ValueError("stack positions must be strictly increasing")
        if kinds.size and kinds.max() > 1:
            raise ValueError("stack kinds must be 0 (h) or 1 (c)")
        if self.underflow_mode not in _MODES:
            raise ValueError(f"unknown underflow mode {self.underflow_mode!r}")
        pos.setflags(write=False)
        kinds.setflags(write=False)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "kinds", kinds)

    @classmethod
    def empty(cls, mode: str = STRICT, seed: int = 0) -> "BurgerStack":
        return cls(underflow_mode=mode, seed=seed)

    @classmethod
    def seeded_buffer(cls, size: int, top: str = "c") -> "BurgerStack":
        """Alternating h/c buffer of ``size`` burgers at positions -size..-1."""
        size = int(size)
        kinds = np.arange(size, dtype=np.int64) % 2
        # make the topmost entry the requested kind
        if size and kinds[-1] != "hc".index(top):
            kinds = 1 - kinds
        return cls(np.arange(-size, 0, dtype=np.int64), kinds.astype(np.uint8), SEEDED)

    def __len__(self):
        return len(self.kinds)

    def top(self):
        if not len(self):
            return None
        return "hc"[self.kinds[-1]]

    def entries(self):
        return [(int(p), "hc"[k]) for p, k in zip(self.positions, self.kinds)]

    def __str__(self):
        return "".join("hc"[k] for k in self.kinds)


@njit(cache=True)
def _resolve_kernel(sym, stop, init_kinds, mode, coin):
    """Resolve F symbols against an initial stack.

    Returns (resolved symbols, remaining stack sequence indices, error index).
    Sequence index i >= 0 refers to sym[i]; negative ones to initial entries.
    """
    n0 = init_kinds.shape[0]
    cap = n0 + stop
    sh = np.empty(cap, np.int64)
    sc = np.empty(cap, np.int64)
    nh = 0
    nc = 0
    for k in range(n0):
        if init_kinds[k] == 0:
            sh[nh] = k - n0
            nh += 1
        else:
            sc[nc] = k - n0
            nc += 1
    out = sym.copy()
    ncoin = 0
    for i in range(stop):
        s = sym[i]
        if s == 0:
            sh[nh] = i
            nh += 1
        elif s == 1:
            sc[nc] = i
            nc += 1
        elif s == 2:
            if nh > 0:
                nh -= 1
            elif mode != 1:
                return out, sh[:0], i
        elif s == 3:
            if nc > 0:
                nc -= 1
            elif mode != 1:
                return out, sh[:0], i
        else:
            if nh == 0 and nc == 0:
                if mode != 1:
                    return out, sh[:0], i
                out[i] = 2 + coin[ncoin]
                ncoin += 1
            elif nc == 0 or (nh > 0 and sh[nh - 1] > sc[nc - 1]):
                nh -= 1
                out[i] = 2
            else:
                nc -= 1
                out[i] = 3
    # merge the two per-type stacks back into one ordered stack
    rest = np.empty(nh + nc, np.int64)
    a = 0
    b = 0
    for k in range(nh + nc):
        if b >= nc or (a < nh and sh[a] < sc[b]):
            rest[k] = sh[a]
            a += 1
        else:
            rest[k] = sc[b]
            b += 1
    return out, rest, -1


def _run_stack(word: Word, stop: int, initial: BurgerStack):
    mode = _MODES[initial.underflow_mode]
    coin = np.zeros(0, np.uint8)
    if mode == 1:
        coin = replica_generator(initial.seed, 0, 7).integers(0, 2, size=max(stop, 1), dtype=np.uint8)
    out, rest, err = _resolve_kernel(word.symbols, stop, initial.kinds, mode, coin)
    if err >= 0:
        raise UnderflowError(err - word.origin,
                             f"order {ALPHABET[word.symbols[err]]} at position {err - word.origin} "
                             f"found no burger ({initial.underflow_mode} mode)")
    return out, rest


def resolve_F(word, stack: BurgerStack | None = None) -> Word:
    """Replace every F by the typed order it actually fulfils."""
    word = as_word(word)
    stack = stack if stack is not None else BurgerStack.empty()
    out, _ = _run_stack(word, len(word), stack)
    return Word(out, word.origin)


def stack_at(word, position: int, initial: BurgerStack | None = None) -> BurgerStack:
    """Burger stack after consuming the symbols up to and including ``position``."""
    word = as_word(word)
    initial = initial if initial is not None else BurgerStack.empty()
    stop = word.index(position) + 1
    _, rest = _run_stack(word, stop, initial)
    n0 = len(initial)
    pos = np.empty(len(rest), np.int64)
    kinds = np.empty(len(rest), np.uint8)
    for k, r in enumerate(rest):
        if r < 0:
            pos[k] = initial.positions[r + n0]
            kinds[k] = initial.kinds[r + n0]
        else:
            pos[k] = r - word.origin
            kinds[k] = word.symbols[r]
    # the initial buffer may use positions overlapping the word's; renumber if so
    if pos.size > 1 and np.any(np.diff(pos) <= 0):
        pos = np.arange(len(pos), dtype=np.int64) - len(pos) + (position + 1)
    return BurgerStack(pos, kinds, initial.underflow_mode, initial.seed)


def check_probability(p):
    if not (0.0 <= p < 0.5):
        raise ParameterError(f"p must lie in [0, 1/2), got {p!r}")
