"""numba kernels for the word -> decorated map construction and its checks.

Half-edge layout: triangle k (0-based, one per symbol) owns half-edges
3k (bottom, along refinement edge k-1, dual -> primal), 3k+1 (top, along
refinement edge k, primal -> dual) and 3k+2 (its primal or dual edge).
``nxt`` is the successor around a face, ``twin`` the opposite half-edge.
Kernels ending in ``_into`` write to caller-provided buffers so the
exhaustive checker allocates nothing per word.
"""
import numpy as np
from numba import njit

from ._loopkern import S_ALT, S_AREA, S_SIZE, S_TAU, NSTAT, explore
from .words import match_kernel

BOTTOM, TOP, DIAG = 0, 1, 2


@njit(cache=True)
def build_into(sym, partner, nxt, twin, cls, flipped):
    """Glue the triangles of a balanced word and flip every F quadrangle.

    ``cls[k]`` ends up 0 when the edge of triangle k is primal and 1 when
    dual (after flips); ``flipped[k]`` marks the F quadrangles.
    """
    m = sym.shape[0]
    for k in range(m):
        s = sym[k]
        if s < 2:
            t = s
        elif s < 4:
            t = s - 2
        else:
            t = sym[partner[k]]
        cls[k] = t
        flipped[k] = False
        b, u, d = 3 * k, 3 * k + 1, 3 * k + 2
        if t == 0:
            # primal triangle: edge -> top -> bottom
            nxt[d] = u
            nxt[u] = b
            nxt[b] = d
        else:
            nxt[d] = b
            nxt[b] = u
            nxt[u] = d
        kp = k - 1 if k > 0 else m - 1
        twin[b] = 3 * kp + 1
        twin[3 * kp + 1] = b
        twin[d] = 3 * partner[k] + 2
    for k in range(m):
        if sym[k] == 4:
            j = partner[k]
            h = 3 * j + 2
            t = 3 * k + 2
            h1 = nxt[h]
            h2 = nxt[h1]
            t1 = nxt[t]
            t2 = nxt[t1]
            nxt[h] = h2
            nxt[h2] = t1
            nxt[t1] = h
            nxt[t] = t2
            nxt[t2] = h1
            nxt[h1] = t
            cls[j] = 1 - cls[j]
            cls[k] = 1 - cls[k]
            flipped[j] = True
            flipped[k] = True


@njit(cache=True)
def build_arrays(sym, partner):
    m = sym.shape[0]
    nxt = np.empty(3 * m, np.int64)
    twin = np.empty(3 * m, np.int64)
    cls = np.empty(m, np.int8)
    flipped = np.zeros(m, np.bool_)
    build_into(sym, partner, nxt, twin, cls, flipped)
    return nxt, twin, cls, flipped


@njit(cache=True)
def faces_into(nxt, face):
    """Face of every half-edge, named by the triangle owning its non-refinement edge.

    Returns False if some face is not a triangle with exactly one such edge.
    """
    for j in range(nxt.shape[0] // 3):
        d = 3 * j + 2
        a = nxt[d]
        b = nxt[a]
        if nxt[b] != d or a % 3 == 2 or b % 3 == 2:
            return False
        face[d] = j
        face[a] = j
        face[b] = j
    return True


@njit(cache=True)
def face_labels(nxt):
    face = np.full(nxt.shape[0], -1, np.int64)
    if not faces_into(nxt, face):
        face[:] = -1
    return face


@njit(cache=True)
def vertices_into(nxt, twin, vert):
    """Vertex of every half-edge (cycles of next o twin); returns the vertex count."""
    vert[:] = -1
    nv = 0
    for h in range(nxt.shape[0]):
        if vert[h] >= 0:
            continue
        g = h
        while vert[g] < 0:
            vert[g] = nv
            g = nxt[twin[g]]
        nv += 1
    return nv


@njit(cache=True)
def vertex_labels(nxt, twin):
    vert = np.empty(nxt.shape[0], np.int64)
    nv = vertices_into(nxt, twin, vert)
    return vert, nv


@njit(cache=True)
def is_permutation(a, seen):
    seen[:] = False
    for x in a:
        if x < 0 or x >= a.shape[0] or seen[x]:
            return False
        seen[x] = True
    return True


@njit(cache=True)
def loops_into(nxt, twin, face, loop):
    """Loop id of every face: faces joined across shared refinement edges."""
    m = nxt.shape[0] // 3
    loop[:] = -1
    nl = 0
    for f0 in range(m):
        if loop[f0] >= 0:
            continue
        e = nxt[3 * f0 + 2]  # a refinement half-edge of f0
        f = f0
        while loop[f] < 0:
            loop[f] = nl
            x = nxt[e]
            ex = x if x % 3 != 2 else nxt[x]  # the other refinement half-edge
            e = twin[ex]
            f = face[e]
        nl += 1
    return nl


@njit(cache=True)
def loop_labels(nxt, twin, face):
    loop = np.empty(nxt.shape[0] // 3, np.int64)
    nl = loops_into(nxt, twin, face, loop)
    return loop, nl


@njit(cache=True)
def flood_area(nxt, twin, face, loop, target, root_face):
    """Loop length plus every triangle the loop's triangles cut off from the root face.

    This also counts sealed-off pockets on the root's side of the curve, so
    it bounds :func:`side_area` from above.
    """
    m = loop.shape[0]
    if loop[root_face] == target:
        return 0
    seen = np.zeros(m, np.bool_)
    queue = np.empty(m, np.int64)
    qh = 0
    qt = 1
    seen[root_face] = True
    queue[0] = root_face
    while qh < qt:
        f = queue[qh]
        qh += 1
        h = 3 * f + 2
        for _ in range(3):
            g = face[twin[h]]
            if not seen[g] and loop[g] != target:
                seen[g] = True
                queue[qt] = g
                qt += 1
            h = nxt[h]
    return m - qt


@njit(cache=True)
def side_area_into(nxt, twin, face, loop, cls, target, root_face, comp, queue, side):
    """Triangles of loop ``target`` plus those on the far side of it from the root.

    The loop is a closed curve through its triangles. A loop triangle's own
    edge lies on the primal side of the curve when the edge is primal and
    on the dual side otherwise, so a non-loop triangle touching the loop
    across such an edge sits on that side. Pockets sealed off by the loop
    triangles but lying on the root's side of the curve are exterior.
    Returns -1 if the two sides of the curve turn out to be connected.
    """
    m = loop.shape[0]
    if loop[root_face] == target:
        return 0
    comp[:m] = -1
    nc = 0
    for f0 in range(m):
        if comp[f0] >= 0 or loop[f0] == target:
            continue
        comp[f0] = nc
        queue[0] = f0
        qh = 0
        qt = 1
        while qh < qt:
            f = queue[qh]
            qh += 1
            h = 3 * f + 2
            for _ in range(3):
                g = face[twin[h]]
                if comp[g] < 0 and loop[g] != target:
                    comp[g] = nc
                    queue[qt] = g
                    qt += 1
                h = nxt[h]
        nc += 1
    side[:nc] = -1
    length = 0
    for f in range(m):
        if loop[f] != target:
            continue
        length += 1
        g = face[twin[3 * f + 2]]
        if loop[g] == target:
            continue
        c = comp[g]
        if side[c] >= 0 and side[c] != cls[f]:
            return -1
        side[c] = cls[f]
    root_side = side[comp[root_face]]
    if root_side < 0:
        return -1
    inside = 0
    for f in range(m):
        if loop[f] != target and side[comp[f]] != root_side:
            inside += 1
    return inside + length


@njit(cache=True)
def side_area(nxt, twin, face, loop, cls, target, root_face):
    m = loop.shape[0]
    return side_area_into(nxt, twin, face, loop, cls, target, root_face,
                          np.empty(m, np.int64), np.empty(m, np.int64), np.empty(m, np.int64))


@njit(cache=True)
def flip_back(nxt, h, t):
    """Rotate the diagonal of the quadrangle made of the faces of h and t = twin(h)."""
    a = nxt[h]
    b = nxt[a]
    c = nxt[t]
    d = nxt[c]
    nxt[h] = d
    nxt[d] = a
    nxt[a] = h
    nxt[t] = b
    nxt[b] = c
    nxt[c] = t


@njit(cache=True)
def walk_path(nxt, twin, start, path):
    """Follow the loop entered through refinement half-edge ``start``.

    Stores the non-refinement half-edge of each visited face in ``path`` and
    returns the number of faces visited.
    """
    e = start
    n = 0
    while True:
        x = nxt[e]
        y = nxt[x]
        if x % 3 == 2:
            path[n] = x
            ex = y
        else:
            path[n] = y
            ex = x
        n += 1
        e = twin[ex]
        if e == start or n >= path.shape[0]:
            return n


@njit(cache=True)
def encode_into(nxt0, twin, cls0, nxt, cls, flipped, path, on, out):
    """Read the word back from a map by undoing F flips one at a time.

    While the root loop misses faces, the last face along it whose partner
    across its edge is unexplored marks a flipped quadrangle: rotate it
    back and walk again. The first visit of a quadrangle is a production of
    its (unflipped) type, the second an F if it was flipped and the
    matching typed order otherwise. Returns False when the map cannot be
    decoded.
    """
    m = nxt0.shape[0] // 3
    nxt[:] = nxt0
    cls[:] = cls0
    flipped[:] = False
    while True:
        n = walk_path(nxt, twin, 0, path)
        if n == m:
            break
        on[:] = False
        for i in range(n):
            on[path[i]] = True
        done = False
        for i in range(n - 1, -1, -1):
            d = path[i]
            if not on[twin[d]]:
                flip_back(nxt, d, twin[d])
                j1 = d // 3
                j2 = twin[d] // 3
                cls[j1] = 1 - cls[j1]
                cls[j2] = 1 - cls[j2]
                flipped[j1] = not flipped[j1]
                flipped[j2] = not flipped[j2]
                done = True
                break
        if not done:
            return False
    on[:] = False
    for i in range(m):
        d = path[i]
        j = d // 3
        if not on[twin[d]]:
            out[i] = cls[j]
        elif flipped[j]:
            out[i] = 4
        else:
            out[i] = 2 + cls[j]
        on[d] = True
    return True


@njit(cache=True)
def encode_arrays(nxt0, twin, cls0):
    m = nxt0.shape[0] // 3
    out = np.empty(m, np.uint8)
    ok = encode_into(nxt0, twin, cls0, np.empty(3 * m, np.int64), np.empty(m, np.int8),
                     np.empty(m, np.bool_), np.empty(m, np.int64), np.empty(3 * m, np.bool_), out)
    if not ok:
        return np.empty(0, np.uint8)
    return out


# failure codes of check_word
(OK, BAD_PERM, BAD_FACE, BAD_EULER, BAD_LOOPS, BAD_F_LOOP, BAD_LENGTH, BAD_AREA,
 BAD_ALT, BAD_ROUNDTRIP, UNBALANCED) = range(11)
CHECK_NAMES = ("ok", "half-edge permutations", "face shape", "Euler formula", "loop count",
               "F to loop assignment", "loop length", "loop area", "alternative area bound",
               "round trip", "not balanced")


@njit(cache=True)
def new_workspace(m):
    return (np.empty(3 * m, np.int64), np.empty(3 * m, np.int64), np.empty(m, np.int8),
            np.empty(m, np.bool_), np.empty(3 * m, np.int64), np.empty(3 * m, np.int64),
            np.empty(m, np.int64), np.empty(m + 1, np.int64), np.empty(m + 1, np.bool_),
            np.empty(m, np.int64), np.empty(m, np.int64), np.empty(m, np.int64),
            np.empty(3 * m, np.int64), np.empty(m, np.int8), np.empty(m, np.bool_),
            np.empty(m, np.int64), np.empty(3 * m, np.bool_), np.empty(m, np.uint8),
            np.empty(m, np.uint8), np.empty((64, 3), np.int64), np.zeros(NSTAT, np.int64))


@njit(cache=True)
def check_word_ws(sym, partner, ws):
    """Build the map of a balanced word and cross-check everything.

    Checks half-edge validity, Euler's formula, the loop count, that every F
    owns its own non-root loop, that loop length and area from the backward
    exploration equal the map's, the alternative area bound and the
    map -> word round trip. Returns a failure code (OK = 0).
    """
    (nxt, twin, cls, flipped, face, vert, loop, sizes, used, comp, queue, side,
     enxt, ecls, eflip, path, on, back, rev, frames, out) = ws
    m = sym.shape[0]
    for i in range(m):
        if partner[i] < 0:
            return UNBALANCED
    build_into(sym, partner, nxt, twin, cls, flipped)
    if not is_permutation(nxt, on):
        return BAD_PERM
    for h in range(3 * m):
        if twin[h] == h or twin[twin[h]] != h:
            return BAD_PERM
    if not faces_into(nxt, face):
        return BAD_FACE
    nv = vertices_into(nxt, twin, vert)
    n = m // 2
    # V - E + F = 2 with E = 3n refined edges and F = 2n triangles
    if nv - 3 * n + m != 2:
        return BAD_EULER
    nl = loops_into(nxt, twin, face, loop)
    nf = 0
    for i in range(m):
        if sym[i] == 4:
            nf += 1
    if nl != nf + 1:
        return BAD_LOOPS
    sizes[:nl] = 0
    for f in range(m):
        sizes[loop[f]] += 1
    root_face = face[0]
    used[:nl] = False
    used[loop[root_face]] = True
    for k in range(m):
        if sym[k] != 4:
            continue
        j = partner[k]
        lid = loop[face[3 * j + 1]]
        if used[lid]:
            return BAD_F_LOOP
        used[lid] = True
        ln = k - j
        for q in range(ln):
            rev[q] = sym[k - 1 - q]
        explore(rev, 0, ln, m + 1, out, frames)
        if out[S_SIZE] != k - j + 1 or out[S_TAU] != sizes[lid]:
            return BAD_LENGTH
        area = side_area_into(nxt, twin, face, loop, cls, lid, root_face, comp, queue, side)
        if area < 0 or out[S_AREA] != area:
            return BAD_AREA
        if abs(out[S_ALT] - area) > out[S_TAU]:
            return BAD_ALT
    if not encode_into(nxt, twin, cls, enxt, ecls, eflip, path, on, back):
        return BAD_ROUNDTRIP
    for i in range(m):
        if back[i] != sym[i]:
            return BAD_ROUNDTRIP
    return OK


@njit(cache=True)
def check_word(sym):
    return check_word_ws(sym, match_kernel(sym), new_workspace(sym.shape[0]))


@njit(cache=True)
def check_batch(words, codes):
    """check_word on every row of a 2-D array of equal-length words."""
    ws = new_workspace(words.shape[1])
    for r in range(words.shape[0]):
        sym = words[r]
        codes[r] = check_word_ws(sym, match_kernel(sym), ws)


@njit(cache=True)
def exhaustive_check(m, counts, first_bad):
    """Enumerate every balanced word of length m and run the checks on it.

    The matching is built along the enumeration, so each complete word
    costs only the map construction and the checks. counts[code] tallies
    the outcomes; first_bad receives the first failing word. Returns the
    number of words checked.
    """
    ws = new_workspace(m)
    sym = np.zeros(m, np.uint8)
    partner = np.full(m, -1, np.int64)
    # burger stack (kinds and positions) per depth, copied on each step
    kind = np.zeros((m + 1, m), np.int8)
    where = np.zeros((m + 1, m), np.int64)
    ns = np.zeros(m + 1, np.int64)
    choice = np.full(m + 1, -1, np.int64)
    total = 0
    d = 0
    have_bad = False
    while d >= 0:
        choice[d] += 1
        if choice[d] > 4:
            choice[d] = -1
            d -= 1
            continue
        if d == m:
            code = check_word_ws(sym, partner, ws)
            counts[code] += 1
            total += 1
            if code != OK and not have_bad:
                first_bad[:] = sym
                have_bad = True
            choice[d] = 5
            continue
        s = choice[d]
        size = ns[d]
        remaining = m - d - 1
        if s < 2:
            if size + 1 > remaining:
                continue
            kind[d + 1, :size] = kind[d, :size]
            where[d + 1, :size] = where[d, :size]
            kind[d + 1, size] = s
            where[d + 1, size] = d
            ns[d + 1] = size + 1
            partner[d] = -1
        else:
            if size == 0 or size - 1 > remaining:
                continue
            if s == 4:
                pos = size - 1
            else:
                want = s - 2
                pos = size - 1
                while pos >= 0 and kind[d, pos] != want:
                    pos -= 1
                if pos < 0:
                    continue
            j = where[d, pos]
            partner[d] = j
            partner[j] = d
            k = 0
            for q in range(size):
                if q != pos:
                    kind[d + 1, k] = kind[d, q]
                    where[d + 1, k] = where[d, q]
                    k += 1
            ns[d + 1] = size - 1
        sym[d] = s
        d += 1
    return total
