"""numba kernels for backward envelope exploration and the loop samplers.

All kernels read already decoded symbol codes from a window of a replica's
stream and report how far they got, so the Python driver can grow the window
and replay an unfinished sample from its first symbol.
"""
import numpy as np
from numba import njit

# status codes
DONE, NEED, CENSORED, NO_F = 0, 1, 2, 3

# fields of a stats record
S_STATUS, S_SIZE, S_TAU, S_AREA, S_TYPE, S_ALT, S_M, S_CHILD = range(8)
NSTAT = 8


@njit(cache=True)
def explore(sym, a, stop, budget, out, frames):
    """Explore the envelope of an F backwards.

    ``sym[a], sym[a+1], ...`` are the symbols just before the F, read into
    the past. Fills ``out`` with (status, size, tau, area, type, alt, m,
    child size sum). type 0 means the F ate an h, 1 a c.
    ``frames`` is scratch space of shape (k, 3) for the open nested F's.
    Returns the index one past the last symbol read.
    """
    if frames.shape[0] < 2:
        frames = np.empty((64, 3), np.int64)
    d = 0
    frames[0, 0] = 0  # pending C
    frames[0, 1] = 0  # pending H
    frames[0, 2] = 0  # symbols read when the frame opened
    k = 0
    tau = 0
    tc = 0  # symbols consumed by steps moving c
    th = 0
    szc = 0  # sum of (size-1) over depth-1 children of type cF
    szh = 0
    m = 0
    child = 0
    i = a
    while True:
        if k >= budget:
            out[S_STATUS] = CENSORED
            out[S_SIZE] = k + 1
            out[S_TAU] = tau
            out[S_AREA] = 0
            out[S_TYPE] = -1
            out[S_ALT] = 0
            out[S_M] = m
            out[S_CHILD] = child
            return i
        if i >= stop:
            out[S_STATUS] = NEED
            return i
        s = sym[i]
        i += 1
        k += 1
        if s == 2:
            frames[d, 1] += 1
            if d == 0:
                tau += 1
                th += 1
        elif s == 3:
            frames[d, 0] += 1
            if d == 0:
                tau += 1
                tc += 1
        elif s == 4:
            d += 1
            if d >= frames.shape[0]:
                bigger = np.empty((2 * frames.shape[0], 3), np.int64)
                bigger[: frames.shape[0]] = frames
                frames = bigger
            frames[d, 0] = 0
            frames[d, 1] = 0
            frames[d, 2] = k
        else:
            # production: s == 0 is h (coordinate 1), s == 1 is c (coordinate 0)
            coord = 1 if s == 0 else 0
            if frames[d, coord] > 0:
                frames[d, coord] -= 1
                if d == 0:
                    tau += 1
                    if coord == 0:
                        tc += 1
                    else:
                        th += 1
            elif d == 0:
                tau += 1
                if coord == 0:
                    tc += 1
                else:
                    th += 1
                ltype = s  # 0: hF, 1: cF
                out[S_STATUS] = DONE
                out[S_SIZE] = k + 1
                out[S_TAU] = tau
                if ltype == 1:
                    out[S_AREA] = tau + szh
                    out[S_ALT] = tc
                else:
                    out[S_AREA] = tau + szc
                    out[S_ALT] = th
                out[S_TYPE] = ltype
                out[S_M] = m
                out[S_CHILD] = child
                return i
            else:
                # the production closes a nested envelope
                csize = k - frames[d, 2] + 1
                other = 1 - coord  # boundary coordinate of the child
                r = frames[d, other]
                d -= 1
                frames[d, other] += r
                if d == 0:
                    tau += 1
                    m += 1
                    child += csize
                    if other == 0:
                        tc += csize
                        szh += csize - 1
                    else:
                        th += csize
                        szc += csize - 1


@njit(cache=True)
def run_backward(sym, start, stop, first_scan, budget, n, res):
    """Variants scanning into the past from 0.

    first_scan=True looks for the first F at or left of 0, otherwise the
    symbol at 0 is taken to be an F. Fills res[start:] until the window
    runs out; returns (next sample, next offset).
    """
    out = np.zeros(NSTAT, np.int64)
    frames = np.empty((64, 3), np.int64)
    pos = 0
    j = start
    while j < n:
        i = pos
        used = 0
        if first_scan:
            found = False
            while used < budget:
                if i >= stop:
                    return j, pos
                s = sym[i]
                i += 1
                used += 1
                if s == 4:
                    found = True
                    break
            if not found:
                res[j, :] = 0
                res[j, S_STATUS] = NO_F
                res[j, S_TYPE] = -1
                pos = i
                j += 1
                continue
        i = explore(sym, i, stop, budget, out, frames)
        if out[S_STATUS] == NEED:
            return j, pos
        res[j, :] = out
        pos = i
        j += 1
    return j, pos


@njit(cache=True)
def _forward_segment_stats(sym, lo, hi, budget, out, frames):
    """Stats of the envelope sym[lo..hi] (sym[hi] is the F)."""
    rev = sym[lo:hi][::-1].copy()
    explore(rev, 0, rev.shape[0], budget, out, frames)


@njit(cache=True)
def run_first_eaten(sym, start, stop, budget, n, res):
    """Envelope of the first production at or after 0 whose match is an F."""
    out = np.zeros(NSTAT, np.int64)
    frames = np.empty((64, 3), np.int64)
    cap = stop + 1
    sh = np.empty(cap, np.int64)
    sc = np.empty(cap, np.int64)
    pos = 0
    j = start
    while j < n:
        base = pos
        nh = 0
        nc = 0
        best = -1
        best_end = -1
        t = 0
        status = NEED
        while True:
            if t >= budget:
                status = CENSORED
                break
            if base + t >= stop:
                return j, pos
            s = sym[base + t]
            if s == 0:
                sh[nh] = t
                nh += 1
            elif s == 1:
                sc[nc] = t
                nc += 1
            elif s == 2:
                if nh > 0:
                    nh -= 1
            elif s == 3:
                if nc > 0:
                    nc -= 1
            else:
                th = sh[nh - 1] if nh > 0 else -1
                tcc = sc[nc - 1] if nc > 0 else -1
                if th >= 0 or tcc >= 0:
                    if th > tcc:
                        nh -= 1
                        eaten = th
                    else:
                        nc -= 1
                        eaten = tcc
                    if best < 0 or eaten < best:
                        best = eaten
                        best_end = t
            t += 1
            if best >= 0:
                low = t + 1
                if nh > 0 and sh[0] < low:
                    low = sh[0]
                if nc > 0 and sc[0] < low:
                    low = sc[0]
                if low > best:
                    status = DONE
                    break
        if status == CENSORED:
            res[j, :] = 0
            res[j, S_STATUS] = CENSORED
            res[j, S_SIZE] = best_end - best + 1 if best >= 0 else 0
            res[j, S_TYPE] = -1
        else:
            _forward_segment_stats(sym, base + best, base + best_end, budget, out, frames)
            res[j, :] = out
        pos = base + t
        j += 1
    return j, pos


@njit(cache=True)
def run_match_is_f(sym, start, stop, budget, n, res, attempts):
    """Envelope of X_phi(0) conditioned on X_phi(0) = F, by rejection.

    Every attempt starts on fresh symbols. An attempt whose outcome is not
    decided within the budget is counted in ``attempts[j, 1]`` and
    discarded; ``attempts[j, 0]`` counts all attempts of sample j.
    """
    out = np.zeros(NSTAT, np.int64)
    frames = np.empty((64, 3), np.int64)
    sh = np.empty(budget + 1, np.int64)
    sc = np.empty(budget + 1, np.int64)
    pos = 0
    j = start
    while j < n:
        i = pos
        tries = 0
        undecided = 0
        while True:
            tries += 1
            if i >= stop:
                return j, pos
            x0 = sym[i]
            if x0 >= 2:
                i += 1
                continue
            # follow the production X_0 until something eats it
            nh = 0
            nc = 0
            if x0 == 0:
                sh[0] = 0
                nh = 1
            else:
                sc[0] = 0
                nc = 1
            t = 1
            fate = -1
            while t < budget:
                if i + t >= stop:
                    return j, pos
                s = sym[i + t]
                eaten = -1
                if s == 0:
                    sh[nh] = t
                    nh += 1
                elif s == 1:
                    sc[nc] = t
                    nc += 1
                elif s == 2:
                    if nh > 0:
                        nh -= 1
                        eaten = sh[nh]
                elif s == 3:
                    if nc > 0:
                        nc -= 1
                        eaten = sc[nc]
                else:
                    th = sh[nh - 1] if nh > 0 else -1
                    tcc = sc[nc - 1] if nc > 0 else -1
                    if th > tcc:
                        nh -= 1
                        eaten = th
                    elif tcc >= 0:
                        nc -= 1
                        eaten = tcc
                t += 1
                if eaten == 0:
                    fate = s
                    break
            if fate < 0:
                undecided += 1
                i += t
                continue
            if fate == 4:
                _forward_segment_stats(sym, i, i + t - 1, budget, out, frames)
                res[j, :] = out
                attempts[j, 0] = tries
                attempts[j, 1] = undecided
                pos = i + t
                j += 1
                break
            i += t
    return j, pos
