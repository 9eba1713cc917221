"""End-to-end acceptance checks, one test per criterion.

Each test prints a single pass/fail line; the lines are repeated in the
terminal summary. Several of these are long Monte Carlo runs.
"""
import math

import numpy as np
import pytest

from fkburger.cone import covariance_check, estimate_exit_exponents, lattice_point, martingale_drift_test, \
    same_event_check
from fkburger.estimator import left_tail_and_summax_checks, return_time_experiment
from fkburger.harmonic import certificate_suite, cubic_patch, make_test_function
from fkburger.loops import VARIANTS, compare_size_laws, loop_tail_fits, sample_biased_loops, sample_loops
from fkburger.maps import verify_exhaustive
from fkburger.params import ModelParams, p0_from_q, q_from_p, theta0_from_p

LOOP_BUDGET = 10**8
LOOP_N = 10**6


@pytest.fixture(scope="module")
def typical_fits():
    out = {}
    for q in (1, 2):
        batch = sample_loops(ModelParams.from_q(q), "condition-X0-is-F", LOOP_N, seed=3, budget=LOOP_BUDGET)
        out[q] = (batch, loop_tail_fits(batch, budget=LOOP_BUDGET))
    return out


def test_criterion_01_parameter_identities(verdict):
    rng = np.random.default_rng(2024)
    ps = rng.uniform(0, 0.5, 100)
    err = max(abs(p0_from_q(q_from_p(p)) - math.pi / (2 * theta0_from_p(p))) for p in ps)
    q1 = ModelParams.from_q(1)
    ok = err < 1e-12 and q1.p0 == 0.75
    verdict(1, ok, f"max |p0(q) - pi/(2 theta0)| = {err:.2e} over 100 p; p0(q=1) = {q1.p0!r}")
    assert ok


def test_criterion_02_exhaustive_oracle(verdict):
    words, bad = 0, {}
    for n in range(2, 17, 2):
        r = verify_exhaustive(n)
        words += r["words"]
        if r["failures"]:
            bad[n] = (r["failures"], r["first_failure"])
    ok = not bad
    verdict(2, ok, f"{words} balanced words of length <= 16 checked (length, area, round trip); failures {bad}")
    assert ok


def test_criterion_03_same_event(verdict):
    res = {}
    for p in (1 / 3, math.sqrt(2) - 1):
        r = same_event_check(ModelParams(p), trials=10**5, seed=1)
        res[round(p, 4)] = r["violations"]
    ok = all(v == 0 for v in res.values())
    verdict(3, ok, f"violations per p over 10^5 trajectories: {res}")
    assert ok


def test_criterion_04_length_exponent(verdict, typical_fits):
    f1, f2 = typical_fits[1][1]["length"], typical_fits[2][1]["length"]
    ok = f1.within(4 / 3, 0.10) and f2.within(1.5, 0.12)
    verdict(4, ok, f"q=1 Len exponent {f1.exponent:.3f} +- {f1.stderr:.3f} (target 4/3 +- 0.10, window "
                   f"{f1.window}); q=2 {f2.exponent:.3f} +- {f2.stderr:.3f} (target 3/2 +- 0.12, window {f2.window})")
    assert ok


def test_criterion_05_area_exponent(verdict, typical_fits):
    f1, f2 = typical_fits[1][1]["area"], typical_fits[2][1]["area"]
    ok = f1.within(1, 0.15) and f2.within(1, 0.15)
    verdict(5, ok, f"Area exponent q=1 {f1.exponent:.3f} +- {f1.stderr:.3f}, q=2 {f2.exponent:.3f} +- "
                   f"{f2.stderr:.3f} (target 1 +- 0.15)")
    assert ok


def test_criterion_06_biased_exponents(verdict):
    batch = sample_biased_loops(ModelParams.from_q(1), LOOP_N, seed=3, budget=LOOP_BUDGET)
    fits = loop_tail_fits(batch, budget=LOOP_BUDGET)
    fl, fa = fits["length"], fits["area"]
    ok = fl.within(1 / 3, 0.10) and fa.within(0.25, 0.10)
    verdict(6, ok, f"biased Len exponent {fl.exponent:.3f} (target 1/3 +- 0.10, window {fl.window}), "
                   f"Area {fa.exponent:.3f} (target 1/4 +- 0.10, window {fa.window})")
    assert ok


def test_criterion_07_cone_exponents(verdict):
    r = estimate_exit_exponents(ModelParams(1 / 3), n_grid=range(2, 51), m_grid=range(2, 31), budget=10**9, seed=7)
    j, t = r.fits["J"], r.fits["T"]
    ok = abs(-j["slope"] - 2.5) <= 0.2 and abs(-t["slope"] - 1.5) <= 0.2 and r.symbols <= 10**9
    verdict(7, ok, f"P(|J_T| = n, E) slope {j['slope']:.3f} +- {j['stderr']:.3f} (target -2.5 +- 0.2); "
                   f"P(T > m^2, E) slope {t['slope']:.3f} +- {t['stderr']:.3f} (target -1.5 +- 0.2); "
                   f"{r.symbols} symbols")
    assert ok


def test_criterion_08_covariance(verdict):
    r = covariance_check(ModelParams(1 / 3), steps=10**6, trials=400, seed=1)
    err = r.relative_errors()
    keys = ("var_x", "var_y", "cov", "diag_x", "diag_y")
    ok = all(abs(err[k]) < 0.02 for k in keys) and abs(err["offdiag_over_diag"]) < 0.02
    s = r.sigma
    verdict(8, ok, f"Var {s[0, 0]:.4f}/{s[1, 1]:.4f} (1/3), Cov {s[0, 1]:.4f} (1/6); relative errors "
                   + ", ".join(f"{k} {err[k]:+.4f}" for k in keys + ("offdiag_over_diag",)) + " (tolerance 0.02)")
    assert ok


def test_criterion_09_harmonic_certificates(verdict):
    rep = certificate_suite(ModelParams(1 / 3), eps_values=(0.01, 0.02, 0.05), patch_eps=(0.01, 0.02, 0.05))
    nfun = sum(r["passed"] for r in rep["functions"])
    npatch = sum(r["passed"] for r in rep["patches"])
    ok = bool(rep["passed"])
    verdict(9, ok, f"{nfun}/{len(rep['functions'])} sign certificates and {npatch}/{len(rep['patches'])} "
                   "cubic patches pass")
    assert ok


def test_criterion_10_drift_sign(verdict):
    prm = ModelParams(1 / 3)
    eps = 0.05
    g3 = make_test_function("g3u", eps, prm)
    _, g1 = cubic_patch(eps, params=prm)
    parts, ok = [], True
    for radius in (200, 1000):
        for name, f, angle, want in (("g3u", g3, prm.theta0 / 2, -1), ("g1l-patched", g1, prm.theta0 - math.pi / 2, 1)):
            u = lattice_point(prm, radius, angle)
            r = martingale_drift_test(f, u, eps, prm, replicas=10**4, seed=radius, level=0.95)
            ok &= r.sign == want
            parts.append(f"{name} |v|={radius}: {r.estimate:+.3e} CI [{r.ci[0]:+.2e}, {r.ci[1]:+.2e}]")
    verdict(10, ok, "; ".join(parts))
    assert ok


def test_criterion_11_appendix(verdict):
    parts, ok = [], True
    for a in (4 / 3, 1.5):
        f = return_time_experiment(a, 2 * 10**5, 10**5, seed=1)
        ok &= f.within(1 / a, 0.1)
        parts.append(f"alpha={a:.4g}: return exponent {f.exponent:.3f} (target {1 / a:.3f})")
    env = left_tail_and_summax_checks(trials=20_000, seed=0)
    ok &= env["passed"]
    parts.append(f"left-tail slope {env['left_tail']['slope']:.3f}, sum/max slope {env['sum_max']['slope']:.3f}, "
                 f"controls rejected {not env['left_tail_control']['envelope'] and not env['sum_max_control']['envelope']}")
    verdict(11, ok, "; ".join(parts))
    assert ok


def test_criterion_12_sampler_equality(verdict):
    prm = ModelParams.from_q(1)
    batches = [sample_loops(prm, v, 10**5, seed=20 + k) for k, v in enumerate(VARIANTS)]
    pvals = {}
    for i in range(4):
        for j in range(i + 1, 4):
            pvals[f"{i + 1}-{j + 1}"] = compare_size_laws(batches[i], batches[j])[2]
    ok = min(pvals.values()) > 1e-3
    verdict(12, ok, "pairwise chi-square p-values " + ", ".join(f"{k} {v:.3g}" for k, v in pvals.items()))
    assert ok
