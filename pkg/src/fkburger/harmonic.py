"""Homogeneous test functions r^d phi(theta) on cones and their Laplacians.

The sub/super-martingale arguments for the cone walk use perturbations of the
cone-harmonic functions r^{pi/theta} sin(pi theta / theta). This module builds
the six perturbed functions (three "upper" with negative Laplacian, three
"lower" with positive Laplacian), the cubic boundary patch that makes a lower
function negative on the cone boundary while keeping its Laplacian positive,
and grid-based sign certificates for all of them.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from numba import njit

from .params import ModelParams

KINDS = ("g1u", "g2u", "g3u", "g1l", "g2l", "g3l")


class InadmissibleError(ValueError):
    """A test function's sign condition fails for the requested epsilon."""

    def __init__(self, kind, condition):
        super().__init__(f"{kind}: sign condition fails: {condition}")
        self.kind = kind
        self.condition = condition


class DomainError(ValueError):
    pass


def _second_difference(phi, theta, h):
    return (-phi(theta + 2 * h) + 16 * phi(theta + h) - 30 * phi(theta)
            + 16 * phi(theta - h) - phi(theta - 2 * h)) / (12 * h * h)


def numeric_second_derivative(phi, theta, h=1e-4):
    """Fourth-order central difference, Richardson-extrapolated once."""
    coarse = _second_difference(phi, theta, h)
    fine = _second_difference(phi, theta, h / 2)
    return (16 * fine - coarse) / 15


@dataclass(frozen=True, eq=False)
class ConeFunction:
    """f(r, theta) = r^d phi(theta) on the cone lo <= theta <= hi.

    ``sign`` is the claimed sign of the Laplacian on [claim_lo, claim_hi]
    (0 for harmonic functions). ``prm`` is the profile in the flat form read
    by the numba evaluator (see :func:`eval_f`); it is empty for profiles
    that only exist as Python callables.
    """

    name: str
    d: float
    phi: object
    dphi: object
    ddphi: object | None
    lo: float
    hi: float
    sign: int = 0
    claim_lo: float | None = None
    claim_hi: float | None = None
    prm: np.ndarray = field(default_factory=lambda: np.zeros(0))
    info: dict = field(default_factory=dict)

    def __call__(self, r, theta):
        r = np.asarray(r, dtype=np.float64)
        return r ** self.d * self.phi(np.asarray(theta, dtype=np.float64))

    def cartesian(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        return self(np.hypot(x, y), np.arctan2(y, x))

    def second(self, theta):
        if self.ddphi is not None:
            return self.ddphi(theta)
        return numeric_second_derivative(self.phi, theta)

    def angular_laplacian(self, theta):
        """d^2 phi + phi'': the Laplacian divided by r^(d-2)."""
        theta = np.asarray(theta, dtype=np.float64)
        return self.d ** 2 * self.phi(theta) + self.second(theta)

    def laplacian(self, r, theta):
        return polar_laplacian(self, r, theta)

    @property
    def claim(self):
        lo = self.lo if self.claim_lo is None else self.claim_lo
        hi = self.hi if self.claim_hi is None else self.claim_hi
        return lo, hi


def polar_laplacian(f: ConeFunction, r, theta):
    """r^(d-2) (d^2 phi + phi''), with phi'' numeric when no formula is given."""
    r = np.asarray(r, dtype=np.float64)
    theta = np.asarray(theta, dtype=np.float64)
    if np.any(r <= 0):
        raise DomainError("r must be positive")
    tol = 1e-12
    if np.any(theta < f.lo - tol) or np.any(theta > f.hi + tol):
        raise DomainError(f"theta outside [{f.lo}, {f.hi}] for {f.name}")
    return r ** (f.d - 2) * f.angular_laplacian(theta)


# ---------------------------------------------------------------- profiles

def _sine_profile(k, shift):
    """phi = sin(k (theta - shift)) with its first two derivatives."""
    return (lambda t: np.sin(k * (np.asarray(t) - shift)),
            lambda t: k * np.cos(k * (np.asarray(t) - shift)),
            lambda t: -k * k * np.sin(k * (np.asarray(t) - shift)))


# flat profile layout read by eval_phi
P_D, P_K, P_SHIFT, P_HI_ON, P_TT, P_A, P_B, P_C, P_DD, P_LO_ON, P_MID = range(11)
NPRM = 11


def _sine_prm(d, k, shift):
    prm = np.zeros(NPRM)
    prm[P_D] = d
    prm[P_K] = k
    prm[P_SHIFT] = shift
    return prm


@njit(cache=True)
def eval_phi(th, prm):
    if prm[P_LO_ON] > 0 and th < 2 * prm[P_MID] - prm[P_TT]:
        th = 2 * prm[P_MID] - th
    if prm[P_HI_ON] > 0 and th > prm[P_TT]:
        u = th - prm[P_TT]
        return prm[P_A] + u * (prm[P_B] + u * (prm[P_C] + u * prm[P_DD]))
    return math.sin(prm[P_K] * (th - prm[P_SHIFT]))


@njit(cache=True)
def eval_f(x, y, prm):
    r = math.hypot(x, y)
    return r ** prm[P_D] * eval_phi(math.atan2(y, x), prm)


def harmonic_function(d, k, shift, lo, hi, name="harmonic"):
    phi, dphi, ddphi = _sine_profile(k, shift)
    return ConeFunction(name, d, phi, dphi, ddphi, lo, hi, 0, prm=_sine_prm(d, k, shift))


def cone_harmonic(params: ModelParams) -> ConeFunction:
    """r^(2 p0) sin(2 p0 theta), harmonic and positive in the cone of angle theta0."""
    a = 2 * params.p0
    return harmonic_function(a, a, 0.0, 0.0, params.theta0, "cone-harmonic")


def make_test_function(kind: str, eps: float, params: ModelParams) -> ConeFunction:
    """One of the six perturbed cone functions, with exponents as used in the
    upper (g1u, g2u, g3u) and lower (g1l, g2l, g3l) bounds.

    Upper functions are positive with negative Laplacian on their cone; lower
    functions have positive Laplacian on the cone between their zero rays and
    turn negative just outside it. Raises InadmissibleError when eps is too
    large for the sign condition to hold.
    """
    if kind not in KINDS:
        raise ValueError(f"unknown test function {kind!r}")
    if not eps > 0:
        raise InadmissibleError(kind, "eps > 0")
    t0 = params.theta0
    a = 2 * params.p0  # = pi / theta0
    pi = math.pi
    if kind == "g1u":
        d, k, shift = 1 - eps, pi / (pi + 2 * eps), t0 - pi - eps
        lo, hi = t0 - pi - eps, t0 + eps
        if not t0 + eps < pi:
            raise InadmissibleError(kind, "theta0 + eps < pi")
        if not d < k:
            raise InadmissibleError(kind, "1 - eps < pi/(pi + 2 eps)")
        sign, clo, chi = -1, lo, hi
    elif kind in ("g2u", "g3u"):
        k, shift = pi / (t0 + 2 * eps), -eps
        d = a - 5 * eps if kind == "g2u" else -a + 5 * eps
        lo, hi = -eps, t0 + eps
        if not t0 + eps < pi:
            raise InadmissibleError(kind, "theta0 + eps < pi")
        if not abs(d) < k:
            raise InadmissibleError(kind, "|2 p0 - 5 eps| < pi/(theta0 + 2 eps)")
        sign, clo, chi = -1, lo, hi
    elif kind == "g1l":
        k, shift = pi / (pi - 2 * eps), t0 - pi + eps
        d = 1 + eps
        lo, hi = t0 - pi, t0
        if not 2 * eps < pi / 2:
            raise InadmissibleError(kind, "2 eps < pi/2")
        if not d > k:
            raise InadmissibleError(kind, "1 + eps > pi/(pi - 2 eps)")
        sign, clo, chi = 1, t0 - pi + eps, t0 - eps
    else:
        if not 2 * eps < t0:
            raise InadmissibleError(kind, "2 eps < theta0")
        k, shift = pi / (t0 - 2 * eps), eps
        d = a + 5 * eps if kind == "g2l" else -a - 5 * eps
        lo, hi = 0.0, t0
        if not abs(d) > k:
            raise InadmissibleError(kind, "|2 p0 + 5 eps| > pi/(theta0 - 2 eps)")
        sign, clo, chi = 1, eps, t0 - eps
    phi, dphi, ddphi = _sine_profile(k, shift)
    return ConeFunction(kind, d, phi, dphi, ddphi, lo, hi, sign, clo, chi,
                        prm=_sine_prm(d, k, shift),
                        info={"eps": eps, "k": k, "shift": shift, "p": params.p})


# ---------------------------------------------------------------- cubic patch

@dataclass(frozen=True)
class PatchCoefficients:
    """Cubic s(theta) = a + b u + c u^2 + d u^3, u = theta - theta_t, glued
    C^2 to the sine profile at theta_t and used up to theta_end.

    ``patch_slope`` is the frequency pi/(pi - 2 eps) of the sine profile,
    kept apart from the model's F probability. ``delta1`` is half the
    distance from the zero of the patched profile to theta_end (the patched
    profile is negative on the last 2 delta1 of the cone).
    """

    eps: float
    delta: float
    theta_t: float
    a: float
    b: float
    c: float
    d: float
    patch_slope: float
    theta_end: float
    zero: float
    delta1: float

    def s(self, theta):
        u = np.asarray(theta, dtype=np.float64) - self.theta_t
        return self.a + u * (self.b + u * (self.c + u * self.d))

    def ds(self, theta):
        u = np.asarray(theta, dtype=np.float64) - self.theta_t
        return self.b + u * (2 * self.c + 3 * u * self.d)

    def dds(self, theta):
        u = np.asarray(theta, dtype=np.float64) - self.theta_t
        return 2 * self.c + 6 * self.d * u

    def as_dict(self):
        return {k: float(v) for k, v in self.__dict__.items()}


class PatchError(ValueError):
    def __init__(self, condition, theta=None):
        where = "" if theta is None else f" at theta={theta:.6g}"
        super().__init__(f"cubic patch check failed: {condition}{where}")
        self.condition = condition
        self.theta = theta


def cubic_patch(eps: float, base: ConeFunction | None = None, params: ModelParams | None = None,
                delta: float | None = None, check: bool = True):
    """Patch the sine profile of a lower test function near both zero rays.

    With k the profile frequency and theta_z its upper zero, take
    delta = (k/3) eps, theta_t = theta_z - delta, a = phi, b = phi' and
    c = phi''/2 at theta_t (so that s is C^2 there) and d = 1/(k eps); the cubic is used on
    [theta_t, theta_z + eps] and mirrored at the lower zero ray. Returns
    (coefficients, patched ConeFunction). With ``check`` the patched profile
    is verified: negative at both ends, C^2 at the seams and positive
    d^2 phi + phi'' on a 10^4 point grid.
    """
    if base is None:
        if params is None:
            raise ValueError("need a base function or model parameters")
        base = make_test_function("g1l", eps, params)
    k = base.info["k"]
    shift = base.info["shift"]
    zero_lo = shift
    zero_hi = shift + math.pi / k
    mid = 0.5 * (zero_lo + zero_hi)
    theta_end = zero_hi + eps
    if delta is None:
        delta = (k / 3) * eps
    tt = zero_hi - delta
    a = float(base.phi(tt))
    b = float(base.dphi(tt))
    c = float(base.ddphi(tt)) / 2  # s'' = 2c at the seam
    dd = 1 / (k * eps)
    tmp = PatchCoefficients(eps, delta, tt, a, b, c, dd, k, theta_end, float("nan"), float("nan"))
    # zero of the cubic on [tt, theta_end]
    grid = np.linspace(tt, theta_end, 20001)
    vals = tmp.s(grid)
    neg = np.nonzero(vals < 0)[0]
    if neg.size:
        i = neg[0]
        lo_t, hi_t = grid[max(i - 1, 0)], grid[i]
        for _ in range(80):
            m = 0.5 * (lo_t + hi_t)
            if tmp.s(m) < 0:
                hi_t = m
            else:
                lo_t = m
        zero = 0.5 * (lo_t + hi_t)
    else:
        zero = float("nan")
    coeffs = PatchCoefficients(eps, delta, tt, a, b, c, dd, k, theta_end, zero, (theta_end - zero) / 2)

    prm = base.prm.copy()
    prm[P_HI_ON] = 1
    prm[P_TT] = tt
    prm[P_A], prm[P_B], prm[P_C], prm[P_DD] = a, b, c, dd
    prm[P_LO_ON] = 1
    prm[P_MID] = mid

    def fold(t):
        t = np.asarray(t, dtype=np.float64)
        return np.where(t < 2 * mid - tt, 2 * mid - t, t), np.where(t < 2 * mid - tt, -1.0, 1.0)

    def phi(t):
        u, _ = fold(t)
        return np.where(u > tt, coeffs.s(u), base.phi(u))

    def dphi(t):
        u, sgn = fold(t)
        return sgn * np.where(u > tt, coeffs.ds(u), base.dphi(u))

    def ddphi(t):
        u, _ = fold(t)
        return np.where(u > tt, coeffs.dds(u), base.ddphi(u))

    lo = 2 * mid - theta_end
    patched = ConeFunction(base.name + "-patched", base.d, phi, dphi, ddphi, lo, theta_end, 1,
                           lo, theta_end, prm=prm, info=dict(base.info, patch=coeffs.as_dict()))
    if check:
        verify_patch(coeffs, base, patched)
    return coeffs, patched


def patch_report(coeffs: PatchCoefficients, base: ConeFunction, patched: ConeFunction, npts: int = 10_000):
    tt = coeffs.theta_t
    glue = {
        "value": abs(float(base.phi(tt)) - float(coeffs.s(tt))),
        "first": abs(float(base.dphi(tt)) - float(coeffs.ds(tt))),
        "second": abs(float(base.ddphi(tt)) - float(coeffs.dds(tt))),
    }
    grid = np.linspace(patched.lo, patched.hi, npts)
    lap = patched.angular_laplacian(grid)
    return {
        "s_end": float(coeffs.s(coeffs.theta_end)),
        "phi_lo_end": float(patched.phi(patched.lo)),
        "glue": glue,
        "min_laplacian": float(lap.min()),
        "argmin": float(grid[int(np.argmin(lap))]),
        "grid": npts,
    }


def verify_patch(coeffs, base, patched, npts: int = 10_000):
    rep = patch_report(coeffs, base, patched, npts)
    if not rep["s_end"] < 0:
        raise PatchError("s(theta_end) < 0", coeffs.theta_end)
    if not rep["phi_lo_end"] < 0:
        raise PatchError("patched profile negative at the lower end", patched.lo)
    for key, v in rep["glue"].items():
        if not v < 1e-10:
            raise PatchError(f"C2 gluing ({key} derivative)", coeffs.theta_t)
    if not rep["min_laplacian"] > 0:
        raise PatchError("d^2 phi + phi'' > 0", rep["argmin"])
    return rep


# ---------------------------------------------------------------- certificates

def homogeneity_error(f: ConeFunction, lambdas=(2.0, 10.0), npts: int = 50) -> float:
    """Largest relative deviation from f(lambda x) = lambda^d f(x)."""
    lo, hi = f.claim
    th = np.linspace(lo, hi, npts + 2)[1:-1]
    r = np.linspace(1.0, 5.0, npts)
    x, y = r * np.cos(th), r * np.sin(th)
    base = f.cartesian(x, y)
    worst = 0.0
    for lam in lambdas:
        scaled = f.cartesian(lam * x, lam * y)
        den = np.maximum(np.abs(lam ** f.d * base), 1e-300)
        worst = max(worst, float(np.max(np.abs(scaled - lam ** f.d * base) / den)))
    return worst


def sign_certificate(f: ConeFunction, n_r: int = 100, n_theta: int = 100, r_max: float = 100.0) -> dict:
    """Check the claimed Laplacian sign on an (r, theta) grid over the open
    claimed cone, and again with the grid density doubled."""
    lo, hi = f.claim

    def run(nr, nt):
        r = np.linspace(1.0, r_max, nr)
        th = lo + (np.arange(nt) + 0.5) * (hi - lo) / nt
        R, TH = np.meshgrid(r, th, indexing="ij")
        lap = polar_laplacian(f, R, TH)
        margin = f.sign * lap if f.sign else -np.abs(lap)
        bad = np.argwhere(margin <= 0) if f.sign else np.argwhere(np.abs(lap) > 1e-8 * np.maximum(1, np.abs(f(R, TH))))
        failures = [{"r": float(R[i, j]), "theta": float(TH[i, j]), "laplacian": float(lap[i, j])} for i, j in bad[:20]]
        return float(np.min(np.abs(lap))), failures, len(bad)

    m1, fail1, n1 = run(n_r, n_theta)
    m2, fail2, n2 = run(2 * n_r, 2 * n_theta)
    return {
        "function": f.name,
        "eps": f.info.get("eps"),
        "grid": [n_r, n_theta],
        "sign": f.sign,
        "cone": [lo, hi],
        "min_abs_margin": min(m1, m2),
        "failures": fail1 + fail2,
        "n_failures": n1 + n2,
        "homogeneity_error": homogeneity_error(f),
        "passed": n1 + n2 == 0,
    }


def outside_values(f: ConeFunction, offset: float = 1e-3) -> tuple[float, float]:
    """Profile just outside the claimed cone on both sides."""
    lo, hi = f.claim
    return float(f.phi(lo - offset)), float(f.phi(hi + offset))


def certificate_suite(params: ModelParams, eps_values=(0.01, 0.02, 0.05), patch_eps=(0.02,)) -> dict:
    """Sign certificates of all six test functions plus the cubic patches."""
    reports = []
    for eps in eps_values:
        for kind in KINDS:
            f = make_test_function(kind, eps, params)
            rep = sign_certificate(f)
            if kind in ("g1u", "g2u", "g3u"):
                lo, hi = f.claim
                th = np.linspace(lo, hi, 1002)[1:-1]
                rep["positive_inside"] = bool(np.all(f.phi(th) > 0))
                rep["passed"] = rep["passed"] and rep["positive_inside"]
            else:
                outside = outside_values(f)
                rep["negative_outside"] = bool(outside[0] < 0 and outside[1] < 0)
                rep["passed"] = rep["passed"] and rep["negative_outside"]
            if kind == "g3u":
                rep["decays"] = bool(f.d < 0)
                rep["passed"] = rep["passed"] and rep["decays"]
            reports.append(rep)
    patches = []
    for eps in patch_eps:
        try:
            coeffs, patched = cubic_patch(eps, params=params, check=False)
            base = make_test_function("g1l", eps, params)
            rep = patch_report(coeffs, base, patched)
            cert = sign_certificate(patched)
            rep.update(eps=eps, coefficients=coeffs.as_dict(), certificate=cert)
            rep["passed"] = bool(rep["s_end"] < 0 and rep["phi_lo_end"] < 0
                                 and max(rep["glue"].values()) < 1e-10
                                 and rep["min_laplacian"] > 0 and cert["passed"])
        except InadmissibleError as exc:
            rep = {"eps": eps, "passed": False, "error": str(exc)}
        patches.append(rep)
    return {
        "p": params.p,
        "functions": reports,
        "patches": patches,
        "passed": all(r["passed"] for r in reports) and all(r["passed"] for r in patches),
    }
