"""numba kernels for the burger-count walk (U^x, U^y).

The stack below the start of a walk is an alternating h/c buffer, kept
implicitly: burgers of the top kind sit at positions -1, -3, -5, ... and the
other kind at -2, -4, .... Burgers produced during the walk are kept in two
per-kind position stacks, which is all the F resolution needs.
"""
import numpy as np
from numba import njit

from .harmonic import eval_f
from .words import match_kernel

# walk state fields
W_NH, W_NC, W_HU, W_CU, W_TOPC, W_UX, W_UY, W_T = range(8)
NWALK = 8

# exit kinds
TIP, SIDE_X, SIDE_Y, INSIDE = 0, 1, 2, 3

# exit record fields
E_X0, E_TSTAR, E_KIND, E_ESTAR, E_CENSORED = range(5)
NEXIT = 5

# fields of an exit-statistics record
R_X0, R_T, R_EATER, R_J = range(4)
NREC = 4


@njit(cache=True)
def new_walk(top_c):
    st = np.zeros(NWALK, np.int64)
    st[W_TOPC] = 1 if top_c else 0
    return st


@njit(cache=True)
def _buffer_pos(st, kind):
    """Position of the topmost unused buffer burger of ``kind`` (0=h, 1=c)."""
    if (kind == 1) == (st[W_TOPC] == 1):
        used = st[W_CU] if kind == 1 else st[W_HU]
        return -1 - 2 * used
    used = st[W_CU] if kind == 1 else st[W_HU]
    return -2 - 2 * used


@njit(cache=True)
def step(s, st, sh, sc):
    """Apply symbol ``s`` at time st[W_T]; returns (resolved symbol, sh, sc).

    Updates U in place. The resolved symbol is s itself unless s is an F.
    """
    t = st[W_T]
    r = s
    if s == 0:
        if st[W_NH] >= sh.shape[0]:
            bigger = np.empty(2 * sh.shape[0] + 16, np.int64)
            bigger[: sh.shape[0]] = sh
            sh = bigger
        sh[st[W_NH]] = t
        st[W_NH] += 1
        st[W_UY] += 1
    elif s == 1:
        if st[W_NC] >= sc.shape[0]:
            bigger = np.empty(2 * sc.shape[0] + 16, np.int64)
            bigger[: sc.shape[0]] = sc
            sc = bigger
        sc[st[W_NC]] = t
        st[W_NC] += 1
        st[W_UX] += 1
    else:
        if s == 4:
            # the freshest burger decides
            ph = sh[st[W_NH] - 1] if st[W_NH] > 0 else _buffer_pos(st, 0)
            pc = sc[st[W_NC] - 1] if st[W_NC] > 0 else _buffer_pos(st, 1)
            r = 2 if ph > pc else 3
        if r == 2:
            if st[W_NH] > 0:
                st[W_NH] -= 1
            else:
                st[W_HU] += 1
            st[W_UY] -= 1
        else:
            if st[W_NC] > 0:
                st[W_NC] -= 1
            else:
                st[W_CU] += 1
            st[W_UX] -= 1
    st[W_T] = t + 1
    return r, sh, sc


@njit(cache=True)
def top_kind(st, sh, sc):
    ph = sh[st[W_NH] - 1] if st[W_NH] > 0 else _buffer_pos(st, 0)
    pc = sc[st[W_NC] - 1] if st[W_NC] > 0 else _buffer_pos(st, 1)
    return 0 if ph > pc else 1


@njit(cache=True)
def resolve_walk(sym, top_c):
    """Resolved symbols and U trajectory (length len(sym)+1) of a finite word."""
    st = new_walk(top_c)
    sh = np.empty(64, np.int64)
    sc = np.empty(64, np.int64)
    n = sym.shape[0]
    traj = np.zeros((n + 1, 2), np.int64)
    res = np.empty(n, np.uint8)
    for i in range(n):
        r, sh, sc = step(sym[i], st, sh, sc)
        res[i] = r
        traj[i + 1, 0] = st[W_UX]
        traj[i + 1, 1] = st[W_UY]
    return res, traj


@njit(cache=True)
def exit_trial(sym, a, stop, n, cap, top_c, out):
    """Cone exit of the walk driven by sym[a+1], sym[a+2], ... with X_0 = sym[a].

    X_0 acts on the initial buffer but does not move U. U leaves the quadrant
    {x >= 0, y >= -n} at T*. Returns the index past the last symbol read, or
    -1 if the window ran out.
    """
    if a >= stop:
        return -1
    st = new_walk(top_c)
    sh = np.empty(64, np.int64)
    sc = np.empty(64, np.int64)
    x0 = sym[a]
    _, sh, sc = step(x0, st, sh, sc)
    # U counts from the first step after X_0
    st[W_UX] = 0
    st[W_UY] = 0
    out[E_X0] = x0
    i = a + 1
    k = 0
    while True:
        if k >= cap:
            out[E_TSTAR] = k
            out[E_KIND] = INSIDE
            out[E_ESTAR] = 0
            out[E_CENSORED] = 1
            return i
        if i >= stop:
            return -1
        px = st[W_UX]
        py = st[W_UY]
        s = sym[i]
        _, sh, sc = step(s, st, sh, sc)
        i += 1
        k += 1
        if st[W_UX] < 0 or st[W_UY] < -n:
            out[E_TSTAR] = k
            if px == 0 and py == -n:
                out[E_KIND] = TIP
            elif st[W_UX] < 0:
                out[E_KIND] = SIDE_X
            else:
                out[E_KIND] = SIDE_Y
            out[E_ESTAR] = 1 if (x0 == 1 and out[E_KIND] == TIP and s == 4) else 0
            out[E_CENSORED] = 0
            return i


@njit(cache=True)
def run_exit_stats(sym, start, stop, cap, jmax, ntr, res):
    """Follow X_0 = c until it is eaten, for trials start..ntr-1.

    Record per trial (X_0, T or -1 if still alive after cap steps, code of the
    order that ate X_0, J) where J = -min U^y over the times before T: the
    number of hamburger orders reaching below 0, which is |J_T| on E.
    Trials with X_0 != c cost one symbol and record only X_0. A trial stops
    early, with eater -2, once J exceeds ``jmax`` (pass a negative jmax to
    never stop early).
    """
    sh = np.empty(1024, np.int64)
    sc = np.empty(1024, np.int64)
    pos = 0
    j = start
    while j < ntr:
        i = pos
        if i >= stop:
            return j, pos
        x0 = sym[i]
        i += 1
        res[j, R_X0] = x0
        if x0 != 1:
            res[j, R_T] = -1
            res[j, R_EATER] = -1
            res[j, R_J] = 0
            pos = i
            j += 1
            continue
        # only burgers produced after 0 matter while X_0 is alive
        nh = 0
        nc = 0
        uy = 0
        miny = 0
        t = 0
        eater = -1
        while t < cap:
            if i >= stop:
                return j, pos
            s = sym[i]
            i += 1
            t += 1
            if s == 0:
                if nh >= sh.shape[0]:
                    bigger = np.empty(2 * sh.shape[0], np.int64)
                    bigger[: sh.shape[0]] = sh
                    sh = bigger
                sh[nh] = t
                nh += 1
                uy += 1
            elif s == 1:
                if nc >= sc.shape[0]:
                    bigger = np.empty(2 * sc.shape[0], np.int64)
                    bigger[: sc.shape[0]] = sc
                    sc = bigger
                sc[nc] = t
                nc += 1
            elif s == 2:
                if nh > 0:
                    nh -= 1
                uy -= 1
                if uy < miny:
                    miny = uy
                    if jmax >= 0 and -miny > jmax:
                        eater = -2
                        break
            elif s == 3:
                if nc > 0:
                    nc -= 1
                else:
                    eater = 3
                    break
            else:
                if nh == 0 and nc == 0:
                    eater = 4
                    break
                if nc == 0 or (nh > 0 and sh[nh - 1] > sc[nc - 1]):
                    nh -= 1
                    uy -= 1
                else:
                    nc -= 1
        res[j, R_T] = t if eater > 0 else -1
        res[j, R_EATER] = eater
        res[j, R_J] = -miny
        pos = i
        j += 1
    return j, pos


# fields of a drift record
D_RAW, D_SYM, D_ANTI, D_S, D_TAU, D_ANTI0 = range(6)
NDRIFT = 6


@njit(cache=True)
def drift_block(sym, a, stop, ux0, uy0, top_c, burn, lam, radius, prm, p, cap, out):
    """One block of the walk started at U = (ux0, uy0), stopped when
    |V_t - V_0| > radius with V = lam @ U.

    Records f(V_tau) - f(V_0) and the compensator sum of
    E_t f(V_{t+1}) - f(V_t) under the exact step law given the stack top,
    split into the part shared by both tops and s_t * delta_t, where s_t is
    +1 (top c) or -1 (top h) and delta_t = (p/4)(f(V - lam e_x) - f(V - lam e_y)).
    D_ANTI0 is the same sum with delta frozen at the start point. The
    first ``burn`` symbols only build the stack the block starts from.
    Returns the index past the last symbol read, or -1 if the window ran out.
    """
    st = new_walk(top_c)
    sh = np.empty(64, np.int64)
    sc = np.empty(64, np.int64)
    if stop - a < burn:
        return -1
    for b in range(burn):
        _, sh, sc = step(sym[a + b], st, sh, sc)
    a += burn
    l00 = lam[0, 0]
    l01 = lam[0, 1]
    l11 = lam[1, 1]
    x0 = l00 * ux0 + l01 * uy0
    y0 = l11 * uy0
    f0 = eval_f(x0, y0, prm)
    d0 = 0.25 * p * (eval_f(x0 - l00, y0, prm) - eval_f(x0 - l01, y0 - l11, prm))
    r2 = radius * radius
    w_sym = 0.25  # (1-p)/4 + p/4 each for -x and -y on average
    csym = 0.0
    canti = 0.0
    ssum = 0
    i = a
    ux = 0
    uy = 0
    t = 0
    while True:
        x = x0 + l00 * ux + l01 * uy
        y = y0 + l11 * uy
        dx = x - x0
        dy = y - y0
        if dx * dx + dy * dy > r2:
            break
        if t >= cap:
            out[D_TAU] = -1
            return i
        if i >= stop:
            return -1
        fv = eval_f(x, y, prm)
        fpx = eval_f(x + l00, y, prm)
        fpy = eval_f(x + l01, y + l11, prm)
        fmx = eval_f(x - l00, y, prm)
        fmy = eval_f(x - l01, y - l11, prm)
        csym += 0.25 * (fpx + fpy) + w_sym * (fmx + fmy) - fv
        s = 1 if top_kind(st, sh, sc) == 1 else -1
        canti += s * 0.25 * p * (fmx - fmy)
        ssum += s
        st[W_UX] = ux
        st[W_UY] = uy
        _, sh, sc = step(sym[i], st, sh, sc)
        ux = st[W_UX]
        uy = st[W_UY]
        i += 1
        t += 1
    out[D_RAW] = eval_f(x, y, prm) - f0
    out[D_SYM] = csym
    out[D_ANTI] = canti
    out[D_S] = ssum
    out[D_TAU] = t
    out[D_ANTI0] = d0 * ssum
    return i


@njit(cache=True)
def block_increments(sym, a, stop, st, sh, sc, length, nblocks, out, done):
    """Increments of U over consecutive blocks of ``length`` steps.

    Continues the walk state (st, sh, sc) in place; ``done`` counts finished
    blocks. Returns (index past the last symbol read, sh, sc); stops early at
    a block boundary when the window runs out.
    """
    i = a
    while done[0] < nblocks:
        if stop - i < length:
            return i, sh, sc
        x0 = st[W_UX]
        y0 = st[W_UY]
        for k in range(length):
            _, sh, sc = step(sym[i], st, sh, sc)
            i += 1
        out[done[0], 0] = st[W_UX] - x0
        out[done[0], 1] = st[W_UY] - y0
        done[0] += 1
    return i, sh, sc


@njit(cache=True)
def matched_trial(sym, a, stop, cap, out):
    """Matched-word view of a trial starting at sym[a] = X_0.

    For X_0 = c, finds T = phi(0) by matching windows of doubling length up
    to cap + 1 symbols; out = (X_0, T or -1, X_T or -1, J) where J counts the
    orders between 0 and T that match before 0. Returns the index past the
    symbols the outcome depends on, or -1 if the window ran out.
    """
    x0 = sym[a]
    out[0] = x0
    out[1] = -1
    out[2] = -1
    out[3] = 0
    if x0 != 1:
        return a + 1
    length = 64
    while True:
        if length > cap + 1:
            length = cap + 1
        if stop - a < length:
            return -1
        partner = match_kernel(sym[a:a + length])
        t = partner[0]
        if t >= 0:
            j = 0
            for k in range(1, t):
                if sym[a + k] >= 2 and partner[k] < 0:
                    j += 1
            out[1] = t
            out[2] = sym[a + t]
            out[3] = j
            return a + t + 1
        if length == cap + 1:
            return a + length
        length *= 2


@njit(cache=True)
def reach_times(sym, a, stop, lam, steps, r_far2, r_near2, out):
    """Walk V from 0 for ``steps`` steps; out = (first t with |V_t|^2 >= r_far2
    or -1, same for r_near2). Returns the index past the symbols used."""
    if stop - a < steps:
        return -1
    st = new_walk(1)
    sh = np.empty(64, np.int64)
    sc = np.empty(64, np.int64)
    out[0] = -1
    out[1] = -1
    for t in range(1, steps + 1):
        _, sh, sc = step(sym[a + t - 1], st, sh, sc)
        x = lam[0, 0] * st[W_UX] + lam[0, 1] * st[W_UY]
        y = lam[1, 1] * st[W_UY]
        d2 = x * x + y * y
        if out[0] < 0 and d2 >= r_far2:
            out[0] = t
        if out[1] < 0 and d2 >= r_near2:
            out[1] = t
    return a + steps


@njit(cache=True)
def unmatched_f_profile(sym, marks):
    """Number of F left in the reduced prefix X_1..X_n at each n in marks.

    An F stays unmatched exactly when it finds no burger from the prefix
    itself, and later symbols never change that.
    """
    nh = 0
    nc = 0
    sh = np.empty(sym.shape[0], np.int64)
    sc = np.empty(sym.shape[0], np.int64)
    out = np.zeros(marks.shape[0], np.int64)
    f = 0
    k = 0
    for i in range(sym.shape[0]):
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
        elif s == 3:
            if nc > 0:
                nc -= 1
        else:
            if nh == 0 and nc == 0:
                f += 1
            elif nc == 0 or (nh > 0 and sh[nh - 1] > sc[nc - 1]):
                nh -= 1
            else:
                nc -= 1
        while k < marks.shape[0] and marks[k] == i + 1:
            out[k] = f
            k += 1
    return out
