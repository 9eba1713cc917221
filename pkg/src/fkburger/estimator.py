"""Tail-exponent fitting and a synthetic heavy-tail calibration suite.

``tail_fit`` estimates alpha in P(X > k) ~ k^-alpha either by regressing the
empirical log-survival on log k over a window, or by the Hill estimator on
the top order statistics. Standard errors come from a 50-block bootstrap.

The calibration suite runs walks with i.i.d. integer steps X >= -1 whose
upper tail is P(X >= k) ~ k^-alpha: first return times (tail index 1/alpha),
the lower tail of S_n, and the sum-over-maximum ratio for alpha < 1.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit
from scipy import special, stats

from .rng import replica_generator

DEFAULT_K_MIN = 100
DEFAULT_K_MAX = 10_000
MIN_EXCEEDANCES = 100
MIN_SAMPLES = 1000
N_BLOCKS = 50


class DegenerateWindowError(ValueError):
    pass


class InsufficientSamplesError(ValueError):
    pass


@dataclass
class TailFit:
    """A fitted tail exponent: P(X > k) ~ k^-exponent."""

    exponent: float
    stderr: float
    method: str
    window: tuple
    n_samples: int
    censored_fraction: float = 0.0
    r2: float = float("nan")
    intercept: float = float("nan")
    warnings: list = field(default_factory=list)

    @property
    def slope(self) -> float:
        return -self.exponent

    def within(self, target: float, tol: float) -> bool:
        return abs(self.exponent - target) <= tol

    def as_dict(self) -> dict:
        d = asdict(self)
        d["window"] = list(self.window)
        d["slope"] = self.slope
        return {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in d.items()}

    def to_json(self) -> str:
        return json.dumps(self.as_dict(), sort_keys=True)


# ---------------------------------------------------------------- regression helpers

def linear_fit(x, y, w=None):
    """Weighted least squares y = a + b x; returns (b, a, stderr_b, r2)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    w = np.ones_like(x) if w is None else np.asarray(w, dtype=np.float64)
    if len(x) < 2 or np.ptp(x) == 0:
        raise DegenerateWindowError("need at least two distinct abscissae")
    W = w.sum()
    mx, my = (w * x).sum() / W, (w * y).sum() / W
    sxx = (w * (x - mx) ** 2).sum()
    b = (w * (x - mx) * (y - my)).sum() / sxx
    a = my - b * mx
    resid = y - a - b * x
    ss_res = (w * resid ** 2).sum()
    ss_tot = (w * (y - my) ** 2).sum()
    r2 = 1 - ss_res / ss_tot if ss_tot > 0 else 1.0
    dof = max(len(x) - 2, 1)
    se = math.sqrt(ss_res / dof / sxx) if len(x) > 2 else float("nan")
    return float(b), float(a), se, float(r2)


def loglog_slope(x, y) -> tuple:
    """Slope of log y against log x over positive entries."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    ok = (x > 0) & (y > 0)
    return linear_fit(np.log(x[ok]), np.log(y[ok]))


def poisson_power_fit(x, counts, exposure):
    """Fit counts_i ~ Poisson(exposure * A x_i^b) by Newton's method.

    Returns (b, log A, stderr of b). Zero counts are fine.
    """
    x = np.asarray(x, dtype=np.float64)
    k = np.asarray(counts, dtype=np.float64)
    lx = np.log(x)
    X = np.column_stack([np.ones_like(lx), lx])
    off = math.log(exposure)
    beta = np.array([math.log(max(k.sum(), 1) / exposure / len(x)), 0.0])
    for _ in range(100):
        mu = np.exp(off + X @ beta)
        grad = X.T @ (k - mu)
        hess = X.T @ (X * mu[:, None])
        stepv = np.linalg.solve(hess, grad)
        beta = beta + stepv
        if np.max(np.abs(stepv)) < 1e-12:
            break
    mu = np.exp(off + X @ beta)
    cov = np.linalg.inv(X.T @ (X * mu[:, None]))
    return float(beta[1]), float(beta[0]), float(math.sqrt(cov[1, 1]))


# ---------------------------------------------------------------- tail fits

def default_window(x: np.ndarray, k_min=DEFAULT_K_MIN, k_max=DEFAULT_K_MAX):
    """[k_min, min(k_max, x_(m))] where x_(m) is the m-th largest value and
    m = max(100, N/10^4): the upper end keeps at least m exceedances."""
    xs = np.sort(x)
    m = max(MIN_EXCEEDANCES, int(math.ceil(1e-4 * len(xs))))
    top = xs[-m] if len(xs) >= m else xs[0]
    return float(k_min), float(min(k_max, top))


def _survival_at(xs_sorted, ks, n_total):
    return (n_total - np.searchsorted(xs_sorted, ks, side="right")) / n_total


def _loglog_core(x, n_total, lo, hi, npts=20):
    ks = np.unique(np.geomspace(lo, hi, npts))
    surv = _survival_at(np.sort(x), ks, n_total)
    ok = surv > 0
    if ok.sum() < 3:
        raise DegenerateWindowError("fewer than three window points with exceedances")
    return linear_fit(np.log(ks[ok]), np.log(surv[ok]))


def _hill_core(x, k):
    xs = np.sort(x)[::-1]
    if k >= len(xs):
        raise DegenerateWindowError("Hill order count exceeds sample size")
    ref = xs[k]
    if ref <= 0:
        raise DegenerateWindowError("Hill reference order statistic must be positive")
    gamma = float(np.mean(np.log(xs[:k] / ref)))
    if gamma <= 0:
        raise DegenerateWindowError("top order statistics are all equal")
    return 1.0 / gamma


def _block_bootstrap(x, fn, n_blocks=N_BLOCKS, seed=0, reps=200):
    """Standard deviation of fn over resamples of contiguous blocks."""
    blocks = np.array_split(np.asarray(x), n_blocks)
    rng = replica_generator(seed, 0, 50)
    vals = []
    for _ in range(reps):
        pick = rng.integers(0, n_blocks, size=n_blocks)
        try:
            vals.append(fn(np.concatenate([blocks[i] for i in pick])))
        except DegenerateWindowError:
            continue
    if len(vals) < 2:
        return float("nan")
    return float(np.std(vals, ddof=1))


def tail_fit(samples, method: str = "loglog", window=None, k: int | None = None,
             censored=None, seed: int = 0, n_blocks: int = N_BLOCKS, bootstrap: int = 200) -> TailFit:
    """Fit the upper-tail exponent of ``samples``.

    ``censored`` is an optional boolean mask of samples known only to exceed
    their recorded value. They count as large values in the survival
    function; the loglog window is capped below the smallest censored value
    and Hill uses the uncensored values only, with a warning either way.
    """
    x = np.asarray(samples, dtype=np.float64)
    cens = np.zeros(len(x), bool) if censored is None else np.asarray(censored, bool)
    if cens.shape != x.shape:
        raise ValueError("censored mask must match samples")
    n_total = len(x)
    unc = x[~cens]
    cfrac = float(cens.mean()) if n_total else 0.0
    warnings = []
    if len(unc) == 0:
        raise InsufficientSamplesError("all samples are censored")
    if len(unc) < MIN_SAMPLES:
        raise InsufficientSamplesError(f"need at least {MIN_SAMPLES} uncensored samples, got {len(unc)}")
    if np.ptp(unc) == 0:
        raise DegenerateWindowError("samples are constant")
    if cfrac > 0:
        warnings.append(f"censored fraction {cfrac:.4g}: fit restricted to the uncensored region, "
                        "exponent may be biased")

    if method == "loglog":
        if window is None:
            lo, hi = default_window(unc)
        else:
            lo, hi = map(float, window)
        if cfrac > 0:
            hi = min(hi, float(x[cens].min()) - 1)
        lo = max(lo, float(unc.min()))
        hi = min(hi, float(unc.max()))
        if not hi > lo:
            raise DegenerateWindowError(f"empty fitting window [{lo}, {hi}]")
        # censored samples stay in the denominator and count as exceedances
        big = np.where(cens, np.inf, x)
        b, a, _, r2 = _loglog_core(big, n_total, lo, hi)
        se = _block_bootstrap(big, lambda s: -_loglog_core(s, len(s), lo, hi)[0], n_blocks, seed, bootstrap)
        return TailFit(-b, se, "loglog-regression", (lo, hi), n_total, cfrac, r2, a, warnings)
    if method == "hill":
        kk = int(math.ceil(math.sqrt(len(unc)))) if k is None else int(k)
        if kk > len(unc) - 1:
            raise DegenerateWindowError("Hill order count exceeds sample size")
        est = _hill_core(unc, kk)
        se = _block_bootstrap(unc, lambda s: _hill_core(s, min(kk, len(s) - 1)), n_blocks, seed, bootstrap)
        return TailFit(est, se, "hill", (kk,), n_total, cfrac, float("nan"), float("nan"), warnings)
    raise ValueError(f"unknown method {method!r}")


def pareto_sample(alpha: float, n: int, seed: int) -> np.ndarray:
    """Exact Pareto: P(X > x) = x^-alpha for x >= 1."""
    u = replica_generator(seed, 0, 51).random(n)
    return (1.0 - u) ** (-1.0 / alpha)


# ---------------------------------------------------------------- heavy law

@dataclass(frozen=True)
class HeavyLaw:
    """Integer law on {-1} U {1, 2, ...} with P(X = k) proportional to
    k^-(alpha+1) for k >= 1.

    With ``mean_zero`` the mass at -1 is set so that E X = 0 (needs
    alpha > 1); otherwise ``neg_mass`` is put at -1.
    """

    alpha: float
    mean_zero: bool = True
    neg_mass: float = 0.0

    def __post_init__(self):
        if not 0 < self.alpha < 2:
            raise ValueError("alpha must lie in (0, 2)")
        if self.mean_zero and not self.alpha > 1:
            raise ValueError("a mean-zero law needs alpha > 1")
        if not 0 <= self.neg_mass < 1:
            raise ValueError("neg_mass must lie in [0, 1)")

    @property
    def positive_mean(self) -> float:
        """Mean of the positive part (zeta(alpha)/zeta(alpha+1))."""
        if self.alpha <= 1:
            return float("inf")
        return float(special.zeta(self.alpha) / special.zeta(self.alpha + 1))

    @property
    def p_neg(self) -> float:
        if self.mean_zero:
            mu = self.positive_mean
            return mu / (1 + mu)
        return self.neg_mass

    def mass(self, k):
        """P(X = k) for integer k."""
        k = np.asarray(k)
        pos = (1 - self.p_neg) * np.where(k >= 1, np.maximum(k, 1.0) ** (-self.alpha - 1.0), 0.0) \
            / special.zeta(self.alpha + 1)
        return np.where(k == -1, self.p_neg, pos)

    def survival(self, k):
        """P(X > k) for integers k >= 0."""
        k = np.asarray(k, dtype=np.float64)
        # sum_{j > k} j^-(a+1) = zeta(a+1, k+1)
        return (1 - self.p_neg) * special.zeta(self.alpha + 1, k + 1) / special.zeta(self.alpha + 1)

    def mean(self) -> float:
        if self.alpha <= 1:
            return float("inf")
        return (1 - self.p_neg) * self.positive_mean - self.p_neg


def heavy_sample(law: HeavyLaw, n: int, seed: int, stream: int = 52) -> np.ndarray:
    """Draw ``n`` samples; the positive part uses numpy's Zipf sampler."""
    rng = replica_generator(seed, 0, stream)
    neg = rng.random(n) < law.p_neg
    pos = rng.zipf(law.alpha + 1.0, size=n)
    return np.where(neg, -1, pos).astype(np.int64)


class _HeavyStream:
    """Chunked stream of heavy-law increments for the walk kernels."""

    def __init__(self, law, seed, replica, chunk=1 << 20):
        self.law = law
        self.rng = replica_generator(seed, replica, 53)
        self.chunk = chunk
        self.buf = self._draw(chunk)
        self.pos = 0

    def _draw(self, n):
        neg = self.rng.random(n) < self.law.p_neg
        pos = self.rng.zipf(self.law.alpha + 1.0, size=n)
        return np.where(neg, -1, pos).astype(np.int64)

    def grow(self):
        rest = self.buf[self.pos:]
        self.buf = np.concatenate([rest, self._draw(max(self.chunk, len(rest)))])
        self.pos = 0


# ---------------------------------------------------------------- return times

@njit(cache=True)
def _return_times(z, start, stop, s0, cap, ntr, out):
    """First time S_t <= 0 (t >= 1) for walks S_0 = s0, S_t = s0 + z_1 + ... + z_t.

    Steps are >= -1, so from s0 >= 1 this is the first hit of 0. Writes T or
    -cap (censored) into out[j]; returns (next trial, next offset).
    """
    pos = 0
    j = start
    while j < ntr:
        i = pos
        s = s0
        t = 0
        done = False
        while t < cap:
            if i >= stop:
                return j, pos
            s += z[i]
            i += 1
            t += 1
            if s <= 0:
                done = True
                break
        out[j] = t if done else -cap
        pos = i
        j += 1
    return j, pos


def return_times(law: HeavyLaw, trials: int, cap: int, seed: int, start: int = 1, replica: int = 0):
    """Return times for ``trials`` walks; negative entries are censored at cap."""
    stream = _HeavyStream(law, seed, replica)
    out = np.zeros(trials, np.int64)
    j = 0
    while j < trials:
        j, off = _return_times(stream.buf[stream.pos:], j, len(stream.buf) - stream.pos, start, cap, trials, out)
        stream.pos += off
        if j < trials:
            stream.grow()
    return out


def return_time_experiment(alpha: float, trials: int, cap: int, seed: int, start: int = 1,
                           window=None, method: str = "loglog") -> TailFit:
    """Tail of the first return time of a mean-zero heavy walk (target 1/alpha).

    ``start=1`` runs S_0 = 1 until S hits 0; ``start=0`` runs S_0 = 0 until
    S first enters (-inf, 0] at a positive time.
    """
    if not 1 < alpha < 2:
        raise ValueError("alpha must lie in (1, 2)")
    law = HeavyLaw(alpha)
    t = return_times(law, trials, cap, seed, start)
    cens = t < 0
    vals = np.where(cens, cap, t)
    if window is None:
        window = (10.0, max(20.0, cap / 10))
    fit = tail_fit(vals, method, window=window, censored=cens, seed=seed)
    return fit


def deterministic_return_fit(trials: int = 2000):
    """Alternating +1/-1 steps from 0: every walk returns at time 2, so the
    tail fit is rejected as degenerate."""
    t = np.full(trials, 2, dtype=np.int64)
    return tail_fit(t, "loglog")


# ---------------------------------------------------------------- envelope checks

@njit(cache=True)
def _walk_sums(z, n, trials):
    s = np.zeros(trials, np.int64)
    mx = np.zeros(trials, np.int64)
    k = 0
    for j in range(trials):
        acc = 0
        m = z[k]
        for i in range(n):
            v = z[k]
            acc += v
            if v > m:
                m = v
            k += 1
        s[j] = acc
        mx[j] = m
    return s, mx


def _sums(law, n, trials, seed, replica=0):
    rng = replica_generator(seed, replica, 54)
    s = np.empty(trials, np.int64)
    mx = np.empty(trials, np.int64)
    per = max(1, (1 << 22) // n)
    for a in range(0, trials, per):
        b = min(trials, a + per)
        m = (b - a) * n
        neg = rng.random(m) < law.p_neg
        pos = rng.zipf(law.alpha + 1.0, size=m)
        z = np.where(neg, -1, pos).astype(np.int64)
        s[a:b], mx[a:b] = _walk_sums(z, n, b - a)
    return s, mx


def envelope_fit(stat, lambdas, min_hits: int = 5) -> dict:
    """Test log P(stat > lambda) for an exponential envelope over the grid.

    Two weighted fits of y = log P are compared: exponential (y linear in
    lambda) and polynomial (y linear in log lambda). The envelope holds when
    the exponential slope is significantly negative and the exponential fit
    is at least as good as the polynomial one. The quadratic coefficient in
    lambda is reported too. Grid points with fewer than ``min_hits``
    exceedances are flagged and left out.
    """
    stat = np.asarray(stat, dtype=np.float64)
    lambdas = np.asarray(lambdas, dtype=np.float64)
    n = len(stat)
    hits = np.array([(stat > lam).sum() for lam in lambdas])
    ok = (hits >= min_hits) & (lambdas > 0)
    res = {"lambda": lambdas.tolist(), "hits": hits.tolist(), "trials": n, "flagged": (~ok).tolist()}
    if ok.sum() < 4:
        res.update(slope=None, slope_stderr=None, curvature=None, curvature_stderr=None,
                   sse_exponential=None, sse_polynomial=None, envelope=False)
        return res
    lam = lambdas[ok]
    y = np.log(hits[ok] / n)
    # binomial delta-method weights
    p = hits[ok] / n
    w = hits[ok] / np.maximum(1 - p, 1e-12)
    b, a, b_se, r2 = linear_fit(lam, y, w)
    bp, ap, _, r2p = linear_fit(np.log(lam), y, w)
    sse_exp = float((w * (y - a - b * lam) ** 2).sum())
    sse_pol = float((w * (y - ap - bp * np.log(lam)) ** 2).sum())
    X = np.column_stack([np.ones_like(lam), lam, lam ** 2])
    cov = np.linalg.inv(X.T @ (X * w[:, None]))
    coef = cov @ X.T @ (w * y)
    resid = y - X @ coef
    s2 = max(float((w * resid ** 2).sum()) / max(len(lam) - 3, 1), 1.0)
    c, c_se = float(coef[2]), float(math.sqrt(cov[2, 2] * s2))
    envelope = bool(b + 2 * b_se < 0 and sse_exp <= sse_pol)
    res.update(slope=b, slope_stderr=b_se, intercept=a, r2=r2, polynomial_slope=bp, polynomial_r2=r2p,
               sse_exponential=sse_exp, sse_polynomial=sse_pol, curvature=c, curvature_stderr=c_se,
               envelope=envelope)
    return res


def left_tail_and_summax_checks(alpha_left: float = 4 / 3, eps_left: float = 0.1, n_left: int = 10_000,
                                alpha_sum: float = 0.75, eps_sum: float = 0.2, m_sum: int = 10_000,
                                trials: int = 20_000, seed: int = 0, lambda_left=None, lambda_sum=None) -> dict:
    """Exponential-envelope checks for the lower tail of a mean-zero heavy walk
    and for sum / max^(1+eps), each with a heavy-tailed negative control.

    Controls: the upper tail of the same walk at the same scale, and the sum
    normalised by the deterministic scale m^((1+eps)/alpha) instead of the
    maximum; both keep a polynomial tail, so their envelope check must fail.
    """
    law = HeavyLaw(alpha_left)
    s, _ = _sums(law, n_left, trials, seed, 0)
    scale = n_left ** (1.0 / (alpha_left - eps_left))
    lower = -s / scale
    upper = s / scale
    if lambda_left is None:
        lambda_left = np.linspace(0.1, 1.0, 10)
    left = envelope_fit(lower, lambda_left)
    hi = np.quantile(upper, [0.5, 0.999])
    left_control = envelope_fit(upper, np.linspace(max(hi[0], 0.05), hi[1], 10))

    law2 = HeavyLaw(alpha_sum, mean_zero=False)
    s2, mx2 = _sums(law2, m_sum, trials, seed, 1)
    ratio = s2 / mx2.astype(np.float64) ** (1 + eps_sum)
    if lambda_sum is None:
        q = np.quantile(ratio, [0.5, 0.999])
        lambda_sum = np.linspace(q[0], q[1], 10)
    summax = envelope_fit(ratio, lambda_sum)
    c_fit = -summax["slope"] if summax["slope"] is not None else float("nan")
    freq20 = float((ratio > 20).mean())
    summax["freq_at_20"] = freq20
    summax["bound_at_20"] = math.exp(-c_fit * 20) if c_fit == c_fit else None
    det = s2 / m_sum ** ((1 + eps_sum) / alpha_sum)
    qd = np.quantile(det, [0.5, 0.999])
    summax_control = envelope_fit(det, np.linspace(qd[0], qd[1], 10))
    passed = bool(left["envelope"] and summax["envelope"] and c_fit > 0
                  and not left_control["envelope"] and not summax_control["envelope"])
    return {
        "left_tail": dict(left, alpha=alpha_left, eps=eps_left, n=n_left),
        "left_tail_control": dict(left_control, statistic="upper tail S_n / n^(1/(alpha-eps))"),
        "sum_max": dict(summax, alpha=alpha_sum, eps=eps_sum, m=m_sum),
        "sum_max_control": dict(summax_control, statistic="S_m / m^((1+eps)/alpha)"),
        "passed": passed,
    }


def summax_ratio(alpha: float, eps: float, m: int, trials: int, seed: int) -> np.ndarray:
    law = HeavyLaw(alpha, mean_zero=False)
    s, mx = _sums(law, m, trials, seed, 1)
    return s / mx.astype(np.float64) ** (1 + eps)


def ks_against_law(samples, law: HeavyLaw, kmax: int = 50) -> float:
    """Chi-square p-value of small values against the exact mass function."""
    x = np.asarray(samples)
    ks = np.arange(1, kmax + 1)
    obs = np.array([(x == -1).sum()] + [(x == k).sum() for k in ks] + [(x > kmax).sum()])
    probs = np.concatenate([[law.p_neg], law.mass(ks), [law.survival(kmax)]])
    exp = probs * len(x)
    return float(stats.chisquare(obs, exp).pvalue)
