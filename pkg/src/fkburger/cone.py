"""Burger-count walks, the linear map to isotropic coordinates, cone exits,
block walks, martingale drift and covariance checks.

U = (U^x, U^y) counts cheeseburgers and hamburgers: c and h add one, C and H
remove one, and an F removes one of the type it actually eats. V = Lambda U
has isotropic limiting covariance. All cone logic runs on integer U: the
cone of angle theta0 translated so that its tip sits at U = (0, -n) is the
quadrant {U^x >= 0, U^y >= -n} in U coordinates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from . import _conekern as K
from .estimator import linear_fit, poisson_power_fit
from .harmonic import ConeFunction
from .params import ModelParams
from .parallel import run_replicas
from .rng import RawStream, decode_symbols, symbol_thresholds
from .words import BurgerStack, Word, as_word, f_symbol_count, resolve_F

# stream ids, one per experiment so that runs never share random numbers
STREAM_EXIT = 30
STREAM_EXIT_T = 31
STREAM_SAME = 32
STREAM_N0_CONE = 33
STREAM_N0_MATCH = 34
STREAM_DRIFT = 40
STREAM_COV = 60
STREAM_FCOUNT = 62
STREAM_TIME = 63

EXIT_KINDS = ("tip", "side-x", "side-y", "inside")


class DegenerateBlockError(ValueError):
    """A block point at the origin gives a zero block radius."""


class BudgetError(RuntimeError):
    pass


def _thresholds(params: ModelParams):
    return symbol_thresholds(params.probabilities())


# ---------------------------------------------------------------- count walks

@dataclass(frozen=True, eq=False)
class CountWalk:
    """Trajectory (U^x_i, U^y_i), i = 0..len(word), with U_0 = (0, 0)."""

    ux: np.ndarray
    uy: np.ndarray
    resolved: Word
    stack: str = ""

    def __len__(self):
        return len(self.ux) - 1

    @property
    def trajectory(self) -> np.ndarray:
        return np.column_stack([self.ux, self.uy])

    def at(self, i: int):
        return int(self.ux[i]), int(self.uy[i])

    def increments(self) -> np.ndarray:
        return np.diff(self.trajectory, axis=0)


_DX = np.array([0, 1, 0, -1, 0], np.int64)
_DY = np.array([1, 0, -1, 0, 0], np.int64)


def burger_counts(word, stack: BurgerStack | None = None) -> CountWalk:
    """Resolve the F symbols of ``word`` against ``stack`` and accumulate U."""
    word = as_word(word)
    res = resolve_F(word, stack)
    sym = res.symbols
    ux = np.concatenate([[0], np.cumsum(_DX[sym])])
    uy = np.concatenate([[0], np.cumsum(_DY[sym])])
    return CountWalk(ux, uy, res, "" if stack is None else str(stack))


def lambda_matrix(p: float) -> np.ndarray:
    """Lambda = (1/sigma) [[1, cos theta0], [0, sin theta0]], sigma^2 = (1-p)/2."""
    prm = ModelParams(p)
    t0 = prm.theta0
    return np.array([[1.0, math.cos(t0)], [0.0, math.sin(t0)]]) / math.sqrt(prm.sigma2)


def limit_covariance(p: float) -> np.ndarray:
    """Limiting covariance of U_n / sqrt(n)."""
    s2 = (1 - p) / 2
    return np.array([[s2, p / 2], [p / 2, s2]])


def lambda_transform(u, p: float) -> np.ndarray:
    """V = Lambda U for one point or an (n, 2) trajectory."""
    u = np.asarray(u, dtype=np.float64)
    return u @ lambda_matrix(p).T


def transformed_covariance(sigma, p: float) -> np.ndarray:
    lam = lambda_matrix(p)
    return lam @ np.asarray(sigma) @ lam.T


def lattice_point(params: ModelParams, radius: float, angle: float) -> tuple:
    """Integer U whose image Lambda U is closest to radius * e^(i angle) after rounding."""
    lam = lambda_matrix(params.p)
    target = radius * np.array([math.cos(angle), math.sin(angle)])
    u = np.rint(np.linalg.solve(lam, target)).astype(np.int64)
    return int(u[0]), int(u[1])


# ---------------------------------------------------------------- cones

@dataclass(frozen=True)
class ConeConfig:
    """Cone of angle theta0 with its tip moved to -n v0, v0 = Lambda (0, 1)."""

    p: float
    n: int = 0
    exact: bool = True

    @property
    def theta0(self) -> float:
        return ModelParams(self.p).theta0

    def contains(self, ux, uy):
        """Exact membership on integer U coordinates."""
        ux = np.asarray(ux)
        uy = np.asarray(uy)
        return (ux >= 0) & (uy >= -self.n)

    def contains_v(self, vx, vy):
        """Floating-point membership in V coordinates."""
        lam = lambda_matrix(self.p)
        tipx, tipy = -self.n * lam[0, 1], -self.n * lam[1, 1]
        ang = np.arctan2(np.asarray(vy) - tipy, np.asarray(vx) - tipx)
        at_tip = np.hypot(np.asarray(vx) - tipx, np.asarray(vy) - tipy) == 0
        return at_tip | ((ang >= 0) & (ang <= self.theta0))

    def boundary_distance(self, ux, uy):
        """Euclidean distance in V coordinates to the nearer boundary ray."""
        t0 = self.theta0
        # the ray U^x = 0 maps to direction theta0, the ray U^y = -n to direction 0
        v = lambda_transform(np.column_stack([np.asarray(ux, float), np.asarray(uy, float) + self.n]), self.p)
        d_lo = np.abs(v[:, 1])
        d_hi = np.abs(v[:, 0] * math.sin(t0) - v[:, 1] * math.cos(t0))
        return np.minimum(d_lo, d_hi)


def membership_agreement(p: float, n: int, points: int, seed: int, span: int = 1000, tol: float = 1e-9) -> dict:
    """Compare exact and floating-point membership on random lattice points.

    Disagreements are allowed only within tol * |V| of the boundary.
    """
    from .rng import replica_generator
    rng = replica_generator(seed, 0, 70)
    ux = rng.integers(-span, span + 1, size=points)
    uy = rng.integers(-span, span + 1, size=points)
    # include the boundary lines themselves
    ux[: points // 4] = 0
    uy[points // 4: points // 2] = -n
    cone = ConeConfig(p, n)
    a = cone.contains(ux, uy)
    v = lambda_transform(np.column_stack([ux, uy]), p)
    b = cone.contains_v(v[:, 0], v[:, 1])
    dist = cone.boundary_distance(ux, uy)
    band = dist <= tol * np.maximum(np.hypot(v[:, 0], v[:, 1]), 1.0)
    bad = (a != b) & ~band
    return {"points": int(points), "disagreements": int((a != b).sum()),
            "outside_band": int(bad.sum()), "band_points": int(band.sum()), "tolerance": tol}


@dataclass(frozen=True)
class ExitRecord:
    """Cone exit: step T*, exit kind, whether E*_n happened, censoring."""

    t_star: int
    kind: str
    e_star: bool
    censored: bool
    x0: int = -1

    @classmethod
    def from_array(cls, out) -> "ExitRecord":
        return cls(int(out[K.E_TSTAR]), EXIT_KINDS[int(out[K.E_KIND])], bool(out[K.E_ESTAR]),
                   bool(out[K.E_CENSORED]), int(out[K.E_X0]))


def _stack_top(stack) -> int | None:
    """1 (c) or 0 (h) for an alternating buffer, None for any other stack."""
    if stack is None:
        return 1
    if isinstance(stack, str):
        if stack not in ("c", "h"):
            raise ValueError("stack must be 'c', 'h' or a BurgerStack")
        return 1 if stack == "c" else 0
    kinds = stack.kinds
    if len(kinds) and np.all(np.diff(kinds.astype(np.int64)) != 0):
        return int(kinds[-1])
    return None


def exit_from_word(word, n: int, stack=None, x0: str | None = None) -> ExitRecord:
    """Cone exit of the walk driven by ``word`` = X_1 X_2 ..., with X_0 = x0
    applied to the stack beforehand. Uses F resolution by :func:`resolve_F`
    and is independent of the fast kernels. An unfinished exit is censored.
    """
    word = as_word(word)
    if n < 0:
        raise ValueError("n must be non-negative")
    if stack is None or isinstance(stack, str):
        top = "c" if stack is None else stack
        stack = BurgerStack.seeded_buffer(2 * (len(word) + 1), top)
    text = (x0 or "") + str(word)
    walk = burger_counts(Word.from_text(text), stack)
    off = 1 if x0 else 0
    ux = walk.ux[off:] - walk.ux[off]
    uy = walk.uy[off:] - walk.uy[off]
    out = np.flatnonzero((ux < 0) | (uy < -n))
    x0code = "hcHCF".index(x0) if x0 else -1
    if len(out) == 0:
        return ExitRecord(len(word), "inside", False, True, x0code)
    k = int(out[0])
    if ux[k - 1] == 0 and uy[k - 1] == -n:
        kind = "tip"
    elif ux[k] < 0:
        kind = "side-x"
    else:
        kind = "side-y"
    e_star = kind == "tip" and x0 == "c" and str(word)[k - 1] == "F"
    return ExitRecord(k, kind, e_star, False, x0code)


def cone_exit(params: ModelParams, n: int, stack="c", seed: int = 0, step_cap: int = 10**6,
              replica: int = 0) -> ExitRecord:
    """Sample X_0, X_1, ... and run the walk until U leaves {x >= 0, y >= -n}.

    ``stack`` is 'c' or 'h' (alternating buffer with that top, effectively
    unbounded) or a BurgerStack; a non-alternating stack goes through the
    generic resolver.
    """
    if n < 0:
        raise ValueError("n must be non-negative")
    thr = _thresholds(params)
    top = _stack_top(stack)
    stream = RawStream(seed, replica, STREAM_EXIT)
    if top is None:
        sym = decode_symbols(stream.take(step_cap + 1), thr)
        rec = exit_from_word(Word(sym[1:]), n, stack, "hcHCF"[sym[0]])
        return rec
    out = np.zeros(K.NEXIT, np.int64)
    while True:
        sym = decode_symbols(stream.buf[stream.pos:], thr)
        e = K.exit_trial(sym, 0, len(sym), n, step_cap, top, out)
        if e >= 0:
            stream.advance(stream.pos + e)
            return ExitRecord.from_array(out)
        stream.grow()


# ---------------------------------------------------------------- event identity

def _same_event_task(args):
    p, trials, n_values, m_values, horizon, seed, replica, top = args
    thr = symbol_thresholds(ModelParams(p).probabilities())
    stream = RawStream(seed, replica, STREAM_SAME, chunk=max(1 << 16, 4 * horizon))
    n_values = np.asarray(n_values)
    m2 = np.asarray(m_values) ** 2
    ev_match = np.zeros(4, np.int64)
    ev_cone = np.zeros(K.NEXIT, np.int64)
    viol = 0
    undecided = 0
    both = np.zeros((len(n_values), len(m2)), np.int64)
    for _ in range(trials):
        while len(stream.buf) - stream.pos < horizon + 1:
            stream.grow(horizon + 1)
        sym = decode_symbols(stream.buf[stream.pos:stream.pos + horizon + 1], thr)
        K.matched_trial(sym, 0, len(sym), horizon, ev_match)
        x0, t, xt, j = ev_match
        # with X_0 != c both events are empty, so both sides are decided
        found = x0 != 1 or t >= 0
        for a, n in enumerate(n_values):
            e = K.exit_trial(sym, 0, len(sym), int(n), horizon, top, ev_cone)
            cone_done = x0 != 1 or (e >= 0 and not ev_cone[K.E_CENSORED])
            estar = cone_done and bool(ev_cone[K.E_ESTAR])
            tstar = ev_cone[K.E_TSTAR]
            match_ev = x0 == 1 and t >= 0 and xt == 4 and j == n
            for b, mm in enumerate(m2):
                A = match_ev and t > mm
                B = estar and tstar > mm
                if cone_done and found:
                    viol += A != B
                    both[a, b] += A and B
                else:
                    # an event seen on the decided side must not be missed by the other
                    viol += (A and found) or (B and cone_done)
                    undecided += 1
        stream.advance(stream.pos + horizon + 1)
    return viol, undecided, both


def same_event_check(params: ModelParams, trials: int = 10**5, n_values=range(0, 11), m_values=(1, 2, 3, 5, 8, 13),
                     horizon: int = 400, seed: int = 0, replicas: int = 8, workers: int = 1, top: str = "c") -> dict:
    """Compare {X_0 = c, T > m^2, |J_T| = n, X_T = F} computed from the word's
    matching against E*_n with T* > m^2 computed from the cone walk, for every
    (n, m) pair on each of ``trials`` trajectories of ``horizon`` + 1 symbols.
    """
    m_values = [m for m in m_values if m * m < horizon]
    per = [trials // replicas + (r < trials % replicas) for r in range(replicas)]
    tasks = [(params.p, per[r], list(n_values), m_values, horizon, seed, r, 1 if top == "c" else 0)
             for r in range(replicas)]
    res = run_replicas(_same_event_task, tasks, workers)
    viol = sum(r[0] for r in res)
    und = sum(r[1] for r in res)
    both = sum(r[2] for r in res)
    return {"p": params.p, "trials": int(trials), "n_values": list(map(int, n_values)), "m_values": list(m_values),
            "horizon": horizon, "comparisons": int(trials * len(list(n_values)) * len(m_values)),
            "violations": int(viol), "undecided": int(und), "joint_events": both.tolist()}


def _count_task(args):
    kind, p, trials, cap, seed, replica = args
    thr = symbol_thresholds(ModelParams(p).probabilities())
    stream_id = STREAM_N0_CONE if kind == "cone" else STREAM_N0_MATCH
    stream = RawStream(seed, replica, stream_id)
    out = np.zeros(max(K.NEXIT, 4), np.int64)
    hits = 0
    done = 0
    sym = decode_symbols(stream.buf, thr)
    a = 0
    while done < trials:
        if kind == "cone":
            e = K.exit_trial(sym, a, len(sym), 0, cap, 1, out)
        else:
            e = K.matched_trial(sym, a, len(sym), cap, out)
        if e < 0:
            stream.advance(stream.pos + a)
            stream.grow()
            sym = decode_symbols(stream.buf[stream.pos:], thr)
            a = 0
            continue
        if kind == "cone":
            hits += bool(out[K.E_ESTAR]) and out[K.E_TSTAR] <= cap
        else:
            hits += out[0] == 1 and out[1] >= 0 and out[2] == 4 and out[3] == 0
        done += 1
        a = e
    stream.advance(stream.pos + a)
    return hits, stream.consumed


def n0_cross_check(params: ModelParams, trials: int = 10**6, cap: int = 10**4, seed: int = 0,
                   replicas: int = 8, workers: int = 1) -> dict:
    """Two estimates of P(X_0 = c, |J_T| = 0, E, T <= cap) on independent
    streams: cone exits with n = 0 and direct matching. Agreement is judged
    by a two-sample z statistic."""
    per = [trials // replicas + (r < trials % replicas) for r in range(replicas)]
    out = {}
    for kind in ("cone", "match"):
        res = run_replicas(_count_task, [(kind, params.p, per[r], cap, seed, r) for r in range(replicas)], workers)
        hits = sum(r[0] for r in res)
        out[kind] = {"hits": int(hits), "p_hat": hits / trials, "symbols": int(sum(r[1] for r in res))}
    p1, p2 = out["cone"]["p_hat"], out["match"]["p_hat"]
    pool = (out["cone"]["hits"] + out["match"]["hits"]) / (2 * trials)
    se = math.sqrt(max(pool * (1 - pool) * 2 / trials, 1e-300))
    z = (p1 - p2) / se
    out.update(trials=trials, cap=cap, z=z, agree=bool(abs(z) < 3))
    return out


# ---------------------------------------------------------------- exit exponents

def clopper_pearson(k, n, level=0.95):
    k = np.asarray(k)
    a = (1 - level) / 2
    lo = np.where(k > 0, stats.beta.ppf(a, k, n - k + 1), 0.0)
    hi = np.where(k < n, stats.beta.ppf(1 - a, k + 1, n - k), 1.0)
    return lo, hi


def _exit_stats_task(args):
    p, trials, cap, jmax, seed, replica, stream_id, budget = args
    thr = symbol_thresholds(ModelParams(p).probabilities())
    stream = RawStream(seed, replica, stream_id, chunk=1 << 20)
    res = np.zeros((trials, K.NREC), np.int64)
    j = 0
    while j < trials:
        sym = decode_symbols(stream.buf[stream.pos:], thr)
        j, off = K.run_exit_stats(sym, j, len(sym), cap, jmax, trials, res)
        stream.advance(stream.pos + off)
        if stream.consumed > budget:
            raise BudgetError(f"replica {replica} used more than {budget} symbols")
        if j < trials:
            stream.grow()
    return res, stream.consumed


@dataclass
class ExitExperiment:
    """Grid estimates and fits for the cone-exit exponents."""

    p: float
    rows: list
    fits: dict
    symbols: int
    budget: int
    diagnostics: dict = field(default_factory=dict)

    def csv_text(self, header_lines=()) -> str:
        lines = [f"# {h}" for h in header_lines]
        lines.append("item,n,m,trials,hits,p_hat,ci_lo,ci_hi")
        for r in self.rows:
            lines.append(",".join([r["item"], str(r["n"]), str(r["m"]), str(r["trials"]), str(r["hits"]),
                                   repr(float(r["p_hat"])), repr(float(r["ci_lo"])), repr(float(r["ci_hi"]))]))
        return "\n".join(lines) + "\n"


def _fit_json(slope, se, window, r2=None, **extra):
    d = {"slope": slope, "stderr": se, "window": list(window), "r2": r2}
    d.update(extra)
    return d


def estimate_exit_exponents(params: ModelParams, n_grid=range(2, 51), m_grid=range(2, 31),
                            trials_n: int = 4 * 10**6, trials_m: int = 16 * 10**6, cap_n: int = 62_500,
                            budget: int = 10**9, seed: int = 0, replicas: int = 16, workers: int = 1,
                            moments=(0.5, 1.0)) -> ExitExperiment:
    """Monte Carlo estimates of P(|J_T| = n, E), P(T > m^2, E) and the
    conditional moments E(T^a | |J_T| = n, E).

    Every trial draws X_0 and, when X_0 = c, follows it until it is eaten.
    The n-run stops a trial once more than max(n_grid) hamburger orders have
    reached below 0. The m-run stops trials at max(m)^2 steps and uses
    P(X_0 = c, E) = p / 4 to write P(T > m^2, E) = p/4 - P(T <= m^2, E).
    """
    n_grid = np.asarray(list(n_grid), np.int64)
    m_grid = np.asarray(list(m_grid), np.int64)
    cap_m = int(m_grid.max() ** 2)
    jmax = int(n_grid.max())
    per_budget = budget // (2 * replicas)

    def split(total):
        return [total // replicas + (r < total % replicas) for r in range(replicas)]

    run_n = run_replicas(_exit_stats_task, [(params.p, t, cap_n, jmax, seed, r, STREAM_EXIT, per_budget)
                                            for r, t in enumerate(split(trials_n))], workers)
    run_m = run_replicas(_exit_stats_task, [(params.p, t, cap_m, -1, seed, r, STREAM_EXIT_T, per_budget)
                                            for r, t in enumerate(split(trials_m))], workers)
    symbols = int(sum(r[1] for r in run_n) + sum(r[1] for r in run_m))
    if symbols > budget:
        raise BudgetError(f"used {symbols} symbols, budget {budget}")
    rows = []
    fits = {}

    # item (ii): P(|J_T| = n, E)
    res = np.concatenate([r[0] for r in run_n])
    isE = (res[:, K.R_X0] == 1) & (res[:, K.R_EATER] == 4)
    J = res[isE, K.R_J]
    T = res[isE, K.R_T]
    hits = np.array([(J == n).sum() for n in n_grid])
    lo, hi = clopper_pearson(hits, trials_n)
    for n, k, a, b in zip(n_grid, hits, lo, hi):
        rows.append({"item": "J", "n": int(n), "m": "", "trials": trials_n, "hits": int(k),
                     "p_hat": k / trials_n, "ci_lo": float(a), "ci_hi": float(b)})
    # equal weight per grid point; the count-weighted Poisson fit is kept as a
    # diagnostic since it is dominated by the pre-asymptotic points at n <= 4
    ok = hits > 0
    slope, _, _, r2 = linear_fit(np.log(n_grid[ok]), np.log(hits[ok] / trials_n))
    pslope, _, pse = poisson_power_fit(n_grid, hits, trials_n)
    rep_hits = []
    for r, _ in run_n:
        jj = r[(r[:, K.R_X0] == 1) & (r[:, K.R_EATER] == 4), K.R_J]
        rep_hits.append((len(r), np.array([(jj == n).sum() for n in n_grid])))
    from .rng import replica_generator
    rng = replica_generator(seed, 0, 38)
    boots = []
    for _ in range(200):
        pick = rng.integers(0, len(rep_hits), size=len(rep_hits))
        nn = sum(rep_hits[i][0] for i in pick)
        kk = sum(rep_hits[i][1] for i in pick)
        if np.all(kk > 0):
            boots.append(linear_fit(np.log(n_grid), np.log(kk / nn))[0])
    se = float(np.std(boots, ddof=1)) if len(boots) > 1 else float("nan")
    alive = (res[:, K.R_X0] == 1) & (res[:, K.R_EATER] == -1)
    fits["J"] = _fit_json(slope, se, (int(n_grid.min()), int(n_grid.max())), r2, method="loglog-regression",
                          target=-(2 * params.p0 + 1), censored_fraction=float(alive.mean()),
                          empty_points=int((~ok).sum()), poisson_slope=pslope, poisson_stderr=pse)

    # item (v): conditional moments
    mom = {}
    for a_exp in moments:
        ns, vals = [], []
        for n in n_grid:
            t = T[J == n].astype(np.float64)
            if len(t) >= 30:
                ns.append(n)
                vals.append(np.mean(t ** a_exp))
        if len(ns) >= 3:
            b, _, bse, r2 = linear_fit(np.log(ns), np.log(vals))
            mom[str(a_exp)] = _fit_json(b, bse, (int(min(ns)), int(max(ns))), r2, target=2 * a_exp,
                                        values=[float(v) for v in vals])
    fits["moments"] = mom

    # item (iii): P(T > m^2, E)
    per_rep = []
    for r, _ in run_m:
        e = (r[:, K.R_X0] == 1) & (r[:, K.R_EATER] == 4)
        tt = np.sort(r[e, K.R_T])
        per_rep.append((len(r), np.searchsorted(tt, m_grid ** 2, side="right")))
    N = sum(x[0] for x in per_rep)
    k_le = sum(x[1] for x in per_rep)
    pc = 0.25 * params.p
    est = pc - k_le / N
    lo, hi = clopper_pearson(k_le, N)
    for m, k, e, a, b in zip(m_grid, k_le, est, lo, hi):
        rows.append({"item": "T", "n": "", "m": int(m), "trials": N, "hits": int(k), "p_hat": float(e),
                     "ci_lo": float(pc - b), "ci_hi": float(pc - a)})
    ok = est > 0
    slope, _, _, r2 = linear_fit(np.log(m_grid[ok]), np.log(est[ok]))
    # replica bootstrap for the slope error
    from .rng import replica_generator
    rng = replica_generator(seed, 0, 39)
    boots = []
    for _ in range(200):
        pick = rng.integers(0, len(per_rep), size=len(per_rep))
        nn = sum(per_rep[i][0] for i in pick)
        kk = sum(per_rep[i][1] for i in pick)
        e = pc - kk / nn
        if np.all(e > 0):
            boots.append(linear_fit(np.log(m_grid), np.log(e))[0])
    se = float(np.std(boots, ddof=1)) if len(boots) > 1 else float("nan")
    alive_m = sum(((r[:, K.R_X0] == 1) & (r[:, K.R_EATER] == -1)).sum() for r, _ in run_m)
    fits["T"] = _fit_json(slope, se, (int(m_grid.min()), int(m_grid.max())), r2, method="loglog-regression",
                          target=-2 * params.p0, nonpositive_points=int((~ok).sum()))
    # P(E | X_0 = c) = p is bracketed by the eaten-by-F and the still-alive fractions
    nc = sum(((r[:, K.R_X0] == 1)).sum() for r, _ in run_m)
    low = k_le[-1] / nc if nc else float("nan")
    diag = {"p_E_given_c_lower": float(low), "p_E_given_c_upper": float(low + alive_m / nc),
            "p": params.p, "c_trials_m": int(nc), "censored_n_run": int(alive.sum())}
    return ExitExperiment(params.p, rows, fits, symbols, budget, diag)


# ---------------------------------------------------------------- block walks

@dataclass(frozen=True, eq=False)
class BlockWalk:
    eps: float
    points: np.ndarray
    times: np.ndarray

    def __len__(self):
        return len(self.times)


def block_walk(v, eps: float) -> BlockWalk:
    """Stopping times tau_0 = 0, tau_{k+1} = min{t > tau_k: |V_t - V_{tau_k}| > eps |Y_k|}
    and points Y_k = V_{tau_k}, over a finite trajectory ``v`` of shape (n, 2)."""
    if not eps > 0:
        raise ValueError("eps must be positive")
    v = np.asarray(v, dtype=np.float64)
    times = [0]
    k = 0
    n = len(v)
    while True:
        y = v[times[-1]]
        r = eps * math.hypot(y[0], y[1])
        if r == 0:
            raise DegenerateBlockError(f"block point {len(times) - 1} is at the origin")
        d = np.hypot(v[times[-1] + 1:, 0] - y[0], v[times[-1] + 1:, 1] - y[1])
        idx = np.flatnonzero(d > r)
        if len(idx) == 0:
            break
        times.append(times[-1] + 1 + int(idx[0]))
        k += 1
        if times[-1] >= n - 1:
            break
    t = np.asarray(times, np.int64)
    return BlockWalk(eps, v[t], t)


# ---------------------------------------------------------------- drift

@dataclass
class DriftResult:
    """Estimates of E f(Y_1) - f(v)."""

    function: str
    u: tuple
    radius: float
    eps: float
    replicas: int
    estimate: float
    stderr: float
    ci: tuple
    sign: int
    inconclusive: bool
    compensator: float
    compensator_stderr: float
    raw: float
    raw_stderr: float
    mean_tau: float
    seeding: str

    def as_dict(self) -> dict:
        d = dict(self.__dict__)
        d["ci"] = list(self.ci)
        d["u"] = list(self.u)
        return d


def _drift_task(args):
    prm, p, u, radius, count, first, burn, seed, chunk, cap = args
    thr = symbol_thresholds(ModelParams(p).probabilities())
    lam = lambda_matrix(p)
    stream = RawStream(seed, chunk, STREAM_DRIFT, chunk=1 << 18)
    out = np.zeros((count, K.NDRIFT))
    j = 0
    a = 0
    sym = decode_symbols(stream.buf, thr)
    while j < count:
        top = (first + j) % 2
        e = K.drift_block(sym, a, len(sym), u[0], u[1], top, burn, lam, radius, prm, p, cap, out[j])
        if e < 0:
            stream.advance(stream.pos + a)
            stream.grow()
            sym = decode_symbols(stream.buf[stream.pos:], thr)
            a = 0
            continue
        a = e
        j += 1
    return out


def _mean_se(x):
    return float(np.mean(x)), float(np.std(x, ddof=1) / math.sqrt(len(x)))


def martingale_drift_test(f: ConeFunction, u, eps: float, params: ModelParams, replicas: int = 10**4,
                          seed: int = 0, burn: int = 1000, seeding: str = "burn-in", chunks: int = 8,
                          workers: int = 1, level: float = 0.95, step_cap: int = 10**8) -> DriftResult:
    """Estimate E f(Y_1) - f(v) for the block walk from v = Lambda u.

    Replicas alternate between buffers topped by c and by h, so the stack
    ensemble is symmetric under exchanging the two burger types. With
    ``seeding='burn-in'`` each replica first runs ``burn`` symbols to build a
    random stack; ``seeding='alternating'`` starts from the bare buffer.

    The reported estimate is the compensator sum with the stack-top term
    taken relative to its value at v; that term has mean zero under the
    symmetric ensemble. The plain compensator and f(Y_1) - f(v) are
    reported as well.
    """
    if seeding not in ("burn-in", "alternating"):
        raise ValueError("seeding must be 'burn-in' or 'alternating'")
    if f.prm is None:
        raise ValueError("test function has no compiled profile")
    u = (int(u[0]), int(u[1]))
    lam = lambda_matrix(params.p)
    v = lam @ np.array(u, dtype=np.float64)
    radius = eps * float(np.hypot(*v))
    if radius == 0:
        raise DegenerateBlockError("start point is the origin")
    b = burn if seeding == "burn-in" else 0
    per = [replicas // chunks + (r < replicas % chunks) for r in range(chunks)]
    first = np.concatenate([[0], np.cumsum(per)[:-1]])
    tasks = [(f.prm, params.p, u, radius, per[c], int(first[c]), b, seed, c, step_cap) for c in range(chunks)]
    out = np.concatenate(run_replicas(_drift_task, tasks, workers))
    if np.any(out[:, K.D_TAU] < 0):
        raise RuntimeError("a block did not finish within the step cap")
    est_x = out[:, K.D_SYM] + out[:, K.D_ANTI] - out[:, K.D_ANTI0]
    comp_x = out[:, K.D_SYM] + out[:, K.D_ANTI]
    est, se = _mean_se(est_x)
    comp, comp_se = _mean_se(comp_x)
    raw, raw_se = _mean_se(out[:, K.D_RAW])
    z = stats.norm.ppf(0.5 + level / 2)
    ci = (est - z * se, est + z * se)
    inconclusive = ci[0] <= 0 <= ci[1]
    sign = 0 if inconclusive else (1 if est > 0 else -1)
    return DriftResult(f.name, u, float(np.hypot(*v)), eps, replicas, est, se, ci, sign, inconclusive,
                       comp, comp_se, raw, raw_se, float(out[:, K.D_TAU].mean()), seeding)


# ---------------------------------------------------------------- covariance

def _cov_task(args):
    p, base, nblocks, burn, seed, replica = args
    thr = symbol_thresholds(ModelParams(p).probabilities())
    stream = RawStream(seed, replica, STREAM_COV, chunk=max(1 << 20, 2 * base))
    st = K.new_walk(replica % 2)
    sh = np.empty(1024, np.int64)
    sc = np.empty(1024, np.int64)
    scratch = np.zeros((1, 2), np.int64)
    d = np.zeros(1, np.int64)
    while d[0] < 1:
        if len(stream.buf) - stream.pos < burn:
            stream.grow(burn)
        sym = decode_symbols(stream.buf[stream.pos:stream.pos + burn], thr)
        i, sh, sc = K.block_increments(sym, 0, len(sym), st, sh, sc, burn, 1, scratch, d)
        stream.advance(stream.pos + i)
    out = np.zeros((nblocks, 2), np.int64)
    done = np.zeros(1, np.int64)
    while done[0] < nblocks:
        sym = decode_symbols(stream.buf[stream.pos:], thr)
        i, sh, sc = K.block_increments(sym, 0, len(sym), st, sh, sc, base, nblocks, out, done)
        stream.advance(stream.pos + i)
        if done[0] < nblocks:
            stream.grow(base)
    return out


@dataclass
class CovarianceResult:
    p: float
    steps: int
    blocks: int
    sigma: np.ndarray
    sigma_stderr: np.ndarray
    transformed: np.ndarray
    ladder: list

    def relative_errors(self) -> dict:
        target = limit_covariance(self.p)
        c = (1 - 2 * self.p) / (1 - self.p) ** 2
        t = self.transformed
        out = {"var_x": self.sigma[0, 0] / target[0, 0] - 1, "var_y": self.sigma[1, 1] / target[1, 1] - 1,
               "diag_x": t[0, 0] / c - 1, "diag_y": t[1, 1] / c - 1,
               "offdiag_over_diag": abs(t[0, 1]) / (0.5 * (t[0, 0] + t[1, 1]))}
        out["cov"] = self.sigma[0, 1] / target[0, 1] - 1 if target[0, 1] else float(self.sigma[0, 1])
        return {k: float(v) for k, v in out.items()}

    def as_dict(self) -> dict:
        return {"p": self.p, "steps": self.steps, "blocks": self.blocks, "sigma": self.sigma.tolist(),
                "sigma_stderr": self.sigma_stderr.tolist(), "transformed": self.transformed.tolist(),
                "target": limit_covariance(self.p).tolist(), "relative_errors": self.relative_errors(),
                "ladder": self.ladder}


def _cov_of(z):
    c = np.cov(z[:, 0], z[:, 1])
    # delta-method errors for sample second moments
    k = len(z)
    se = np.array([[math.sqrt(2 / (k - 1)) * c[0, 0], math.sqrt((c[0, 0] * c[1, 1] + c[0, 1] ** 2) / (k - 1))],
                   [0.0, math.sqrt(2 / (k - 1)) * c[1, 1]]])
    se[1, 0] = se[0, 1]
    return c, se


def covariance_check(params: ModelParams, steps: int = 10**6, trials: int = 400, seed: int = 0,
                     base: int = 10**4, replicas: int = 4, burn: int = 10**5, workers: int = 1) -> CovarianceResult:
    """Batch-means estimate of the covariance of U_n / sqrt(n) at n = steps.

    Each replica runs one long walk after a burn-in and cuts it into blocks
    of ``base`` steps; sums of consecutive blocks give the increments over
    ``steps`` steps, and coarser aggregation levels are reported as a ladder
    to show the finite-n trend.
    """
    if steps < 10**4:
        raise ValueError("steps must be at least 10^4")
    base = min(base, steps)
    if steps % base:
        raise ValueError("steps must be a multiple of base")
    agg = steps // base
    per = [trials // replicas + (r < trials % replicas) for r in range(replicas)]
    outs = run_replicas(_cov_task, [(params.p, base, per[r] * agg, burn, seed, r) for r in range(replicas)], workers)
    ladder = []
    level = base
    while level <= steps:
        a = level // base
        zs = []
        for o in outs:
            k = len(o) // a
            zs.append(o[: k * a].reshape(k, a, 2).sum(axis=1) / math.sqrt(level))
        z = np.concatenate(zs)
        c, se = _cov_of(z)
        ladder.append({"n": level, "blocks": len(z), "var_x": c[0, 0], "var_y": c[1, 1], "cov": c[0, 1],
                       "var_diff": float(np.var(z[:, 0] - z[:, 1], ddof=1))})
        if level == steps:
            sigma, sigma_se = c, se
        level *= 10
    if ladder[-1]["n"] != steps:
        raise ValueError("steps must be base times a power of ten")
    return CovarianceResult(params.p, steps, int(trials), sigma, sigma_se,
                            transformed_covariance(sigma, params.p), ladder)


# ---------------------------------------------------------------- diagnostics

def f_count_diagnostic(params: ModelParams, n_grid=None, trials: int = 100, seed: int = 0) -> dict:
    """Mean of F_n / sqrt(n), F_n the number of F left in reduce(X_1..X_n)."""
    if n_grid is None:
        n_grid = [2 ** k for k in range(10, 21)]
    marks = np.asarray(sorted(n_grid), np.int64)
    thr = _thresholds(params)
    stream = RawStream(seed, 0, STREAM_FCOUNT, chunk=int(marks[-1]))
    acc = np.zeros(len(marks))
    for _ in range(trials):
        sym = decode_symbols(stream.take(int(marks[-1])), thr)
        acc += K.unmatched_f_profile(sym, marks) / np.sqrt(marks)
    mean = acc / trials
    return {"n": marks.tolist(), "mean_f_over_sqrt_n": mean.tolist(), "trials": trials,
            "decreasing": bool(np.all(np.diff(mean) < 0))}


def f_count_reference(word) -> int:
    return f_symbol_count(word)


def time_bound_diagnostic(params: ModelParams, m_grid=(4, 8, 16, 32, 64, 128), trials: int = 2000,
                          seed: int = 0) -> dict:
    """Frequencies of {T+_{m log^2 m} < m^2} and {T+_{m / log m} > m^2} for the
    walk V from 0, where T+_r is the first time |V| >= r."""
    lam = lambda_matrix(params.p)
    thr = _thresholds(params)
    stream = RawStream(seed, 0, STREAM_TIME)
    far, slow = [], []
    out = np.zeros(2, np.int64)
    for m in m_grid:
        steps = m * m
        r_far = m * math.log(m) ** 2
        r_near = m / math.log(m)
        nf = ns = 0
        for _ in range(trials):
            sym = decode_symbols(stream.take(steps), thr)
            K.reach_times(sym, 0, len(sym), lam, steps, r_far ** 2, r_near ** 2, out)
            nf += out[0] >= 0 and out[0] < steps
            ns += out[1] < 0
        far.append(nf / trials)
        slow.append(ns / trials)
    return {"m": list(m_grid), "trials": trials, "freq_far_before_m2": far, "freq_near_after_m2": slow,
            "nonincreasing": bool(np.all(np.diff(far) <= 0) and np.all(np.diff(slow) <= 0))}
