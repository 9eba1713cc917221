"""Decorated planar maps built from balanced words.

Each symbol contributes one triangle of the refined map. Triangle k is
glued to triangle k+1 along a refinement edge (cyclically), a production
and the order that consumes it share their primal or dual edge, and every
quadrangle closed by an F has its diagonal flipped. Loops are the cycles
of triangles linked across refinement edges.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from . import _mapkern as MK
from .params import ModelParams
from .rng import RawStream, decode_symbol, symbol_thresholds
from .words import NotBalancedError, Word, as_word, decode_text, match_kernel

SCHEMA = 1
EDGE_CLASSES = ("primal", "dual")


class MapFormatError(ValueError):
    pass


class MalformedMapError(ValueError):
    pass


@dataclass(eq=False)
class PlanarMap:
    """Half-edge structure of a refined, decorated map.

    Half-edge 3k is the bottom refinement side of triangle k, 3k+1 its top
    refinement side and 3k+2 its primal or dual edge; the triangle named k is
    the face containing half-edge 3k+2.
    """

    nxt: np.ndarray
    twin: np.ndarray
    cls: np.ndarray  # per triangle: 0 primal edge, 1 dual edge
    flipped: np.ndarray  # per triangle: part of an F quadrangle
    word: Word | None = None
    origin: np.ndarray = field(init=False, repr=False)
    n_vertices: int = field(init=False)

    def __post_init__(self):
        self.face = MK.face_labels(self.nxt)
        if len(self.face) and self.face[0] < 0:
            raise MalformedMapError("a face is not a triangle with exactly one non-refinement edge")
        self.origin, self.n_vertices = MK.vertex_labels(self.nxt, self.twin)

    @property
    def n_triangles(self) -> int:
        return len(self.cls)

    @property
    def n_edges(self) -> int:
        """Edges of the underlying map; each shows up as a primal or a dual edge here."""
        return self.n_triangles // 2

    @property
    def root(self) -> int:
        """Root half-edge: top side of the last triangle, oriented towards its dual vertex."""
        return 3 * (self.n_triangles - 1) + 1

    @property
    def root_triangle(self) -> int:
        return int(self.face[self.twin[self.root]])

    def vertex_class(self) -> np.ndarray:
        """0 for primal, 1 for dual vertices (bottom sides start at dual vertices)."""
        vc = np.full(self.n_vertices, -1, np.int8)
        vc[self.origin[0::3]] = 1
        vc[self.origin[1::3]] = 0
        return vc

    def edge_ids(self) -> np.ndarray:
        """Edge id of every half-edge: refinement edges first, then the matched pairs."""
        m = self.n_triangles
        eid = np.empty(3 * m, np.int64)
        k = np.arange(m)
        eid[3 * k + 1] = k
        eid[3 * ((k + 1) % m)] = k
        partner = self.twin[3 * k + 2] // 3
        lower = np.minimum(k, partner)
        order = {j: i for i, j in enumerate(sorted(set(lower.tolist())))}
        eid[3 * k + 2] = [m + order[j] for j in lower.tolist()]
        return eid

    def counts(self) -> dict:
        vc = self.vertex_class()
        return {
            "vertices": self.n_vertices,
            "primal_vertices": int(np.count_nonzero(vc == 0)),
            "dual_vertices": int(np.count_nonzero(vc == 1)),
            "primal_edges": int(np.count_nonzero(self.cls == 0)) // 2,
            "dual_edges": int(np.count_nonzero(self.cls == 1)) // 2,
            "refinement_edges": self.n_triangles,
            "triangles": self.n_triangles,
        }

    def euler_characteristic(self) -> int:
        return self.n_vertices - 3 * self.n_triangles // 2 + self.n_triangles

    def validate(self):
        m = self.n_triangles
        if not MK.is_permutation(self.nxt, np.zeros(3 * m, np.bool_)):
            raise MalformedMapError("next is not a permutation")
        idx = np.arange(3 * m)
        if np.any(self.twin[self.twin] != idx) or np.any(self.twin == idx):
            raise MalformedMapError("twin is not a fixed-point-free involution")
        vc = self.vertex_class()
        if np.any(vc < 0) or np.any(vc[self.origin[0::3]] != 1) or np.any(vc[self.origin[1::3]] != 0):
            raise MalformedMapError("refinement edges must join a dual vertex to a primal one")
        ends = vc[self.origin[2::3]]
        if np.any(ends != self.cls):
            raise MalformedMapError("edge class disagrees with its endpoints")
        if self.euler_characteristic() != 2:
            raise MalformedMapError("Euler's formula fails")


def build_map(word) -> PlanarMap:
    """Decorated map of a balanced word (F symbols resolved by the stack)."""
    word = as_word(word)
    partner = match_kernel(word.symbols)
    if len(word) == 0 or np.any(partner < 0):
        raise NotBalancedError(f"word {str(word)[:40]!r} does not reduce to the empty word")
    nxt, twin, cls, flipped = MK.build_arrays(word.symbols, partner)
    return PlanarMap(nxt, twin, cls, flipped, word)


@dataclass(frozen=True)
class LoopOverlay:
    loops: tuple  # per loop, its triangle ids in walking order
    loop_of: np.ndarray  # loop id per triangle

    def __len__(self):
        return len(self.loops)

    def lengths(self):
        return [len(l) for l in self.loops]


def extract_loops(pmap: PlanarMap) -> LoopOverlay:
    """Loops of the map: triangles chained through their refinement edges."""
    loop, nl = MK.loop_labels(pmap.nxt, pmap.twin, pmap.face)
    if np.any(loop < 0):
        raise MalformedMapError("a triangle belongs to no loop")
    loops = []
    path = np.empty(pmap.n_triangles, np.int64)
    for lid in range(nl):
        f0 = int(np.flatnonzero(loop == lid)[0])
        start = pmap.nxt[3 * f0 + 2]
        n = MK.walk_path(pmap.nxt, pmap.twin, pmap.twin[start], path)
        tri = tuple(int(pmap.face[h]) for h in path[:n])
        if sorted(tri) != sorted(np.flatnonzero(loop == lid).tolist()):
            raise MalformedMapError(f"loop {lid} is not a simple cycle")
        loops.append(tri)
    return LoopOverlay(tuple(loops), loop)


def loop_of_f(pmap: PlanarMap, overlay: LoopOverlay, position: int) -> int:
    """Loop id of the F at ``position`` of the map's word."""
    word = pmap.word
    if word is None:
        raise ValueError("map has no word attached")
    i = word.index(position)
    if word.symbols[i] != 4:
        raise ValueError(f"symbol at {position} is not an F")
    j = int(match_kernel(word.symbols)[i])
    return int(overlay.loop_of[pmap.face[3 * j + 1]])


def root_loop(pmap: PlanarMap, overlay: LoopOverlay) -> int:
    return int(overlay.loop_of[pmap.root_triangle])


def interior_area_oracle(pmap: PlanarMap, overlay: LoopOverlay, loop_id: int, pockets: bool = False) -> int:
    """Loop length plus the triangles it separates from the root triangle.

    By default a triangle counts when it lies on the far side of the loop
    curve from the root. ``pockets=True`` instead counts every triangle
    that a flood fill from the root cannot reach without stepping on the
    loop, which also picks up sealed-off pockets on the root's side.
    A loop through the root triangle has area 0.
    """
    if not 0 <= loop_id < len(overlay):
        raise IndexError(f"no loop with id {loop_id}")
    lp = np.asarray(overlay.loop_of, np.int64)
    rf = pmap.root_triangle
    if pockets:
        return int(MK.flood_area(pmap.nxt, pmap.twin, pmap.face, lp, loop_id, rf))
    a = int(MK.side_area(pmap.nxt, pmap.twin, pmap.face, lp, pmap.cls, loop_id, rf))
    if a < 0:
        raise MalformedMapError("the loop does not separate the sphere into two sides")
    return a


def encode_map(pmap: PlanarMap) -> Word:
    """Recover the word of a map by following the root loop and undoing flips."""
    out = MK.encode_arrays(pmap.nxt, pmap.twin, pmap.cls)
    if len(out) != pmap.n_triangles:
        raise MalformedMapError("map could not be decoded into a word")
    return Word(out)


# ---------------------------------------------------------------- export

def to_dict(pmap: PlanarMap, overlay: LoopOverlay | None = None) -> dict:
    overlay = overlay or extract_loops(pmap)
    vc = pmap.vertex_class()
    eid = pmap.edge_ids()
    m = pmap.n_triangles
    edges = [{"id": k, "class": "refinement", "flipped": False} for k in range(m)]
    for k in range(m):
        e = int(eid[3 * k + 2])
        if e == len(edges):
            edges.append({"id": e, "class": EDGE_CLASSES[pmap.cls[k]], "flipped": bool(pmap.flipped[k])})
    return {
        "schema": SCHEMA,
        "word": str(pmap.word) if pmap.word is not None else None,
        "vertices": [{"id": v, "class": EDGE_CLASSES[c]} for v, c in enumerate(vc.tolist())],
        "half_edges": [{"id": h, "twin": int(pmap.twin[h]), "next": int(pmap.nxt[h]),
                        "origin": int(pmap.origin[h]), "edge": int(eid[h])} for h in range(3 * m)],
        "edges": edges,
        "triangles": [{"id": k, "class": EDGE_CLASSES[pmap.cls[k]], "loop_id": int(overlay.loop_of[k])}
                      for k in range(m)],
        "root": pmap.root,
        "root_triangle": pmap.root_triangle,
    }


def _loop_color(lid: int) -> str:
    return f"{(lid * 0.618033988749895) % 1.0:.4f} 0.85 0.90"


def to_dot(pmap: PlanarMap, overlay: LoopOverlay | None = None) -> str:
    """Primal graph plus one coloured cycle of triangle nodes per loop."""
    overlay = overlay or extract_loops(pmap)
    vc = pmap.vertex_class()
    lines = ["graph map {", "  node [shape=circle, label=\"\"];"]
    for v in np.flatnonzero(vc == 0).tolist():
        lines.append(f"  v{v};")
    seen = set()
    for k in range(pmap.n_triangles):
        h = 3 * k + 2
        if pmap.cls[k] == 0 and pmap.twin[h] not in seen:
            seen.add(h)
            a, b = pmap.origin[h], pmap.origin[pmap.twin[h]]
            lines.append(f"  v{a} -- v{b};")
    for lid, tri in enumerate(overlay.loops):
        col = _loop_color(lid)
        for t in tri:
            lines.append(f"  t{t} [shape=point, color=\"{col}\"];")
        for a, b in zip(tri, tri[1:] + tri[:1]):
            lines.append(f"  t{a} -- t{b} [style=dashed, color=\"{col}\"];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def export_map(pmap: PlanarMap, overlay: LoopOverlay | None = None, fmt: str = "json", path=None) -> str:
    if fmt == "json":
        text = json.dumps(to_dict(pmap, overlay), indent=1, sort_keys=True) + "\n"
    elif fmt == "dot":
        text = to_dot(pmap, overlay)
    else:
        raise ValueError(f"unknown map format {fmt!r}")
    if path is not None:
        try:
            with open(path, "w") as fh:
                fh.write(text)
        except OSError as exc:
            raise OSError(f"cannot write map to {path}: {exc.strerror}") from exc
    return text


def import_map(doc) -> PlanarMap:
    """Rebuild a map from its JSON document (text or parsed dict)."""
    if isinstance(doc, (str, bytes)):
        doc = json.loads(doc)
    if doc.get("schema") != SCHEMA:
        raise MapFormatError(f"unsupported map schema {doc.get('schema')!r}")
    hes = sorted(doc["half_edges"], key=lambda r: r["id"])
    if [r["id"] for r in hes] != list(range(len(hes))) or len(hes) % 3:
        raise MapFormatError("half-edge ids must be 0..3m-1")
    nxt = np.array([r["next"] for r in hes], np.int64)
    twin = np.array([r["twin"] for r in hes], np.int64)
    tri = sorted(doc["triangles"], key=lambda r: r["id"])
    cls = np.array([EDGE_CLASSES.index(r["class"]) for r in tri], np.int8)
    flip_by_edge = {r["id"]: r["flipped"] for r in doc["edges"]}
    flipped = np.array([flip_by_edge[hes[3 * k + 2]["edge"]] for k in range(len(tri))], np.bool_)
    word = Word.from_text(doc["word"]) if doc.get("word") else None
    pm = PlanarMap(nxt, twin, cls, flipped, word)
    pm.validate()
    return pm


def canonical_form(pmap: PlanarMap) -> tuple:
    """Relabel half-edges in breadth-first order from the root.

    Two maps are isomorphic (as rooted, decorated maps) iff their canonical
    forms are equal.
    """
    H = 3 * pmap.n_triangles
    label = np.full(H, -1, np.int64)
    order = [pmap.root]
    label[pmap.root] = 0
    i = 0
    while i < len(order):
        h = order[i]
        i += 1
        for g in (pmap.nxt[h], pmap.twin[h]):
            if label[g] < 0:
                label[g] = len(order)
                order.append(int(g))
    if len(order) != H:
        raise MalformedMapError("map is not connected")
    order = np.array(order)
    nxt = label[pmap.nxt[order]]
    twin = label[pmap.twin[order]]
    kind = np.array([0 if h % 3 != 2 else 1 + int(pmap.cls[h // 3]) + 2 * int(pmap.flipped[h // 3])
                     for h in order])
    return nxt.tobytes(), twin.tobytes(), kind.tobytes()


# ---------------------------------------------------------------- sampling

@njit(cache=True)
def _balanced_attempts(raw, thr, m, max_attempts, attempts0, out):
    """Draw words of length m until one is balanced, aborting early.

    An attempt stops as soon as an order finds no burger or more burgers
    are pending than symbols remain. Returns (status, attempts, used):
    status 0 found (word in out), 1 buffer exhausted, 2 max attempts hit.
    """
    kinds = np.empty(m, np.int8)
    used = 0
    attempts = attempts0
    n = raw.shape[0]
    while attempts < max_attempts:
        start = used
        ns = 0
        ok = True
        for i in range(m):
            if used >= n:
                return 1, attempts, start
            s = decode_symbol(raw[used], thr)
            used += 1
            out[i] = s
            if s < 2:
                kinds[ns] = s
                ns += 1
            elif s == 4:
                if ns == 0:
                    ok = False
                else:
                    ns -= 1
            else:
                want = s - 2
                k = ns - 1
                while k >= 0 and kinds[k] != want:
                    k -= 1
                if k < 0:
                    ok = False
                else:
                    for q in range(k, ns - 1):
                        kinds[q] = kinds[q + 1]
                    ns -= 1
            if not ok or ns > m - 1 - i:
                ok = False
                break
        attempts += 1
        if ok and ns == 0:
            return 0, attempts, used
    return 2, attempts, used


class AttemptsExhausted(RuntimeError):
    pass


def sample_balanced_word(params: ModelParams, length: int, seed: int, max_attempts: int = 10**7,
                         return_attempts: bool = False):
    """i.i.d. word of the given even length conditioned to reduce to nothing."""
    if length < 2 or length % 2:
        raise ValueError("length must be a positive even number")
    thr = symbol_thresholds(params.probabilities())
    stream = RawStream(seed, 0, stream=3)
    out = np.empty(length, np.uint8)
    attempts = 0
    while True:
        status, attempts, used = _balanced_attempts(stream.buf[stream.pos:], thr, length,
                                                    max_attempts, attempts, out)
        stream.advance(stream.pos + used)
        if status == 0:
            w = Word(out)
            return (w, attempts) if return_attempts else w
        if status == 2:
            raise AttemptsExhausted(f"no balanced word of length {length} in {max_attempts} attempts")
        stream.grow()


# ---------------------------------------------------------------- verification

def check_word(word) -> str:
    """Run every structural cross-check on one balanced word; returns 'ok' or the failed check."""
    return MK.CHECK_NAMES[MK.check_word(as_word(word).symbols)]


def verify_exhaustive(length: int) -> dict:
    """Cross-check every balanced word of the given length."""
    counts = np.zeros(len(MK.CHECK_NAMES), np.int64)
    bad = np.zeros(length, np.uint8)
    total = MK.exhaustive_check(length, counts, bad)
    failures = {MK.CHECK_NAMES[c]: int(counts[c]) for c in range(1, len(counts)) if counts[c]}
    return {"length": length, "words": int(total), "failures": failures,
            "first_failure": decode_text(bad) if failures else None}
