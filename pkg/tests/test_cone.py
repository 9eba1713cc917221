import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from fkburger import _conekern as CK
from fkburger.cone import (BudgetError, ConeConfig, DegenerateBlockError, block_walk, burger_counts,
                           clopper_pearson, cone_exit, covariance_check, estimate_exit_exponents, exit_from_word,
                           f_count_diagnostic, f_count_reference, lambda_matrix, lambda_transform,
                           lattice_point, limit_covariance, martingale_drift_test, membership_agreement,
                           n0_cross_check, same_event_check, time_bound_diagnostic, transformed_covariance)
from fkburger.harmonic import harmonic_function, make_test_function
from fkburger.params import ModelParams
from fkburger.rng import RawStream, decode_symbols, symbol_thresholds
from fkburger.words import BurgerStack, Word, f_symbol_count

Q1 = ModelParams(1 / 3)


def _symbols(p, n, seed):
    thr = symbol_thresholds(ModelParams(p).probabilities())
    return decode_symbols(RawStream(seed, 0, 500).take(n), thr)


# ---------------------------------------------------------------- walks and transforms

def test_burger_count_examples():
    assert burger_counts("c").at(1) == (1, 0)
    assert burger_counts("cC").at(2) == (0, 0)
    assert burger_counts("hF").at(2) == (0, 0)
    assert str(burger_counts("hF").resolved) == "hH"


@given(st.text(alphabet="hcHCF", max_size=50))
def test_count_increments_are_unit(text):
    w = burger_counts(text, BurgerStack.empty("coin", seed=2))
    inc = w.increments()
    assert np.all(np.abs(inc).sum(axis=1) == 1)
    assert w.at(0) == (0, 0)


def test_lambda_examples():
    assert np.allclose(lambda_transform((0, 0), 1 / 3), 0.0)
    lam = lambda_matrix(1 / 3) * math.sqrt(1 / 3)
    assert lam[0, 1] == pytest.approx(-0.5, abs=1e-14)
    assert lam[1, 1] == pytest.approx(math.sqrt(3) / 2, abs=1e-14)


@given(st.floats(0.0, 0.49))
def test_transformed_limit_is_isotropic(p):
    t = transformed_covariance(limit_covariance(p), p)
    c = (1 - 2 * p) / (1 - p) ** 2
    assert np.allclose(t, c * np.eye(2), atol=1e-12)


def test_transformed_limit_q1():
    assert np.allclose(transformed_covariance(limit_covariance(1 / 3), 1 / 3), 0.75 * np.eye(2), atol=1e-12)


def test_lattice_point_angle():
    u = lattice_point(Q1, 1000.0, Q1.theta0 / 2)
    v = lambda_transform(u, Q1.p)
    assert abs(math.hypot(*v) - 1000) < 2
    assert abs(math.atan2(v[1], v[0]) - Q1.theta0 / 2) < 2e-3


# ---------------------------------------------------------------- cones

@pytest.mark.parametrize("n", [0, 3, 17])
def test_membership_agreement(n):
    r = membership_agreement(Q1.p, n, 20000, seed=n)
    assert r["outside_band"] == 0


def test_exit_example_side_x():
    rec = exit_from_word("C", 1)
    assert rec.t_star == 1 and rec.kind == "side-x" and not rec.e_star


def test_exit_at_tip_when_n_is_zero():
    # with n = 0 the start point is the tip itself
    rec = exit_from_word("C", 0)
    assert rec.t_star == 1 and rec.kind == "tip" and not rec.e_star


def test_exit_e_star_example():
    # X_0 = c, then H leaves U at (0, -1) with n = 1, then F eats X_0
    rec = exit_from_word("HF", 1, x0="c")
    assert rec.kind == "tip" and rec.e_star and rec.t_star == 2


def test_exit_censored():
    assert exit_from_word("ch", 0).censored


def test_kernel_matches_generic_exit():
    for p in (1 / 3, math.sqrt(2) - 1):
        sym = _symbols(p, 300 * 2001, seed=7)
        out = np.zeros(CK.NEXIT, np.int64)
        a = 0
        checked = 0
        for trial in range(300):
            n = trial % 6
            cap = 2000
            e = CK.exit_trial(sym, a, a + cap + 1, n, cap, 1, out)
            seg = sym[a:a + cap + 1]
            ref = exit_from_word(Word(seg[1:]), n, "c", "hcHCF"[seg[0]])
            if e < 0 or out[CK.E_CENSORED]:
                assert ref.censored
            else:
                assert (int(out[CK.E_TSTAR]), bool(out[CK.E_ESTAR])) == (ref.t_star, ref.e_star)
                assert ["tip", "side-x", "side-y"][int(out[CK.E_KIND])] == ref.kind
                checked += 1
            a += cap + 1
        assert checked > 200


def test_cone_exit_records():
    recs = [cone_exit(Q1, 2, seed=1, replica=r) for r in range(300)]
    assert all(r.kind == "tip" for r in recs if r.e_star)
    assert all(r.x0 == 1 for r in recs if r.e_star)
    assert any(r.e_star for r in recs) or True
    with pytest.raises(ValueError):
        cone_exit(Q1, -1)


def test_cone_exit_generic_stack():
    buf = BurgerStack(np.arange(-6, 0), np.array([0, 0, 1, 1, 0, 1], np.uint8), "seeded-buffer")
    rec = cone_exit(Q1, 1, stack=buf, seed=3, step_cap=200)
    assert rec.kind in ("tip", "side-x", "side-y", "inside")


def test_same_event_small():
    for p in (1 / 3, math.sqrt(2) - 1):
        r = same_event_check(ModelParams(p), trials=3000, seed=2)
        assert r["violations"] == 0
        assert sum(map(sum, r["joint_events"])) > 0


def test_n0_cross_check_small():
    r = n0_cross_check(Q1, trials=20000, cap=2000, seed=4)
    assert r["agree"] and r["cone"]["hits"] > 0


def test_clopper_pearson_bounds():
    lo, hi = clopper_pearson(np.array([0, 5, 10]), 10)
    assert lo[0] == 0 and hi[2] == 1 and lo[1] < 0.5 < hi[1]


def test_exit_experiment_small():
    r = estimate_exit_exponents(Q1, n_grid=range(2, 8), m_grid=range(2, 8), trials_n=20000, trials_m=20000,
                                cap_n=2000, budget=10**8, seed=1, replicas=4)
    assert {"J", "T", "moments"} <= set(r.fits)
    assert r.symbols <= 10**8
    assert r.fits["J"]["slope"] < 0 and r.fits["T"]["slope"] < 0
    lines = r.csv_text(["seed=1"]).splitlines()
    assert lines[0] == "# seed=1" and lines[1] == "item,n,m,trials,hits,p_hat,ci_lo,ci_hi"
    d = r.diagnostics
    assert d["p_E_given_c_lower"] <= Q1.p + 0.02 and d["p_E_given_c_upper"] >= Q1.p - 0.02


def test_exit_experiment_budget():
    with pytest.raises(BudgetError):
        estimate_exit_exponents(Q1, n_grid=range(2, 5), m_grid=range(2, 5), trials_n=10**5, trials_m=10**5,
                                budget=1000, seed=1, replicas=2)


# ---------------------------------------------------------------- block walk

def test_block_walk_straight_line():
    v = np.column_stack([10.0 + np.arange(8), np.zeros(8)])
    bw = block_walk(v, 0.1)
    assert bw.times[1] == 2
    assert list(bw.times) == [0, 2, 4, 6]


def test_block_walk_degenerate():
    with pytest.raises(DegenerateBlockError):
        block_walk(np.zeros((5, 2)), 0.1)
    with pytest.raises(ValueError):
        block_walk(np.ones((5, 2)), 0.0)


def test_block_walk_properties():
    sym = _symbols(Q1.p, 200_000, seed=3)
    w = burger_counts(Word(sym), BurgerStack.empty("coin", seed=1))
    u = w.trajectory + np.array([300, 300])
    v = lambda_transform(u, Q1.p)
    eps = 0.05
    bw = block_walk(v, eps)
    step = np.linalg.norm(lambda_matrix(Q1.p), 2)
    y = bw.points
    d = np.hypot(*(y[1:] - y[:-1]).T)
    r = eps * np.hypot(*y[:-1].T)
    assert len(bw) > 10
    assert np.all(d > r) and np.all(d <= r + step + 1e-9)
    for k in range(len(bw) - 1):
        a, b = bw.times[k], bw.times[k + 1]
        inner = np.hypot(*(v[a + 1:b] - v[a]).T)
        assert np.all(inner <= r[k])


# ---------------------------------------------------------------- drift

def test_drift_harmonic_contains_zero():
    f = harmonic_function(1.0, 1.0, 0.0, 0.0, math.pi, "r sin")
    u = lattice_point(Q1, 50.0, Q1.theta0 / 2)
    r = martingale_drift_test(f, u, 0.1, Q1, replicas=2000, seed=3, burn=200, chunks=2)
    # r sin(theta) is linear, so the control variate cancels it exactly
    assert abs(r.estimate) < 1e-9
    assert abs(r.raw) < 3 * r.raw_stderr


def test_drift_seedings_agree():
    f = make_test_function("g3u", 0.05, Q1)
    u = lattice_point(Q1, 60.0, Q1.theta0 / 2)
    a = martingale_drift_test(f, u, 0.05, Q1, replicas=2000, seed=1, seeding="burn-in", burn=500, chunks=2)
    b = martingale_drift_test(f, u, 0.05, Q1, replicas=2000, seed=2, seeding="alternating", chunks=2)
    assert abs(a.estimate - b.estimate) < 3 * math.hypot(a.stderr, b.stderr)
    assert a.seeding == "burn-in" and b.seeding == "alternating"


def test_drift_bad_input():
    f = make_test_function("g3u", 0.05, Q1)
    with pytest.raises(ValueError):
        martingale_drift_test(f, (5, 5), 0.05, Q1, seeding="other")
    with pytest.raises(DegenerateBlockError):
        martingale_drift_test(f, (0, 0), 0.05, Q1, replicas=10)


def test_drift_reproducible_across_workers():
    f = make_test_function("g3u", 0.05, Q1)
    u = lattice_point(Q1, 40.0, Q1.theta0 / 2)
    a = martingale_drift_test(f, u, 0.05, Q1, replicas=200, seed=5, burn=100, chunks=4, workers=1)
    b = martingale_drift_test(f, u, 0.05, Q1, replicas=200, seed=5, burn=100, chunks=4, workers=2)
    assert a.estimate == b.estimate and a.raw == b.raw


# ---------------------------------------------------------------- covariance and diagnostics

def test_covariance_small():
    r = covariance_check(Q1, steps=10**4, trials=200, seed=1, burn=10**4)
    s, se = r.sigma, r.sigma_stderr
    # the total burger count is a simple random walk: Var(U^x + U^y) = n exactly
    tot = s[0, 0] + s[1, 1] + 2 * s[0, 1]
    assert abs(tot - 1.0) < 4 * math.sqrt(2 / 199)
    assert abs(s[0, 0] - 1 / 3) < 0.1 and abs(s[0, 1] - 1 / 6) < 0.1
    assert set(r.relative_errors()) >= {"var_x", "var_y", "cov", "diag_x", "diag_y", "offdiag_over_diag"}
    assert r.ladder[-1]["n"] == 10**4


def test_covariance_p0_independent():
    r = covariance_check(ModelParams(0.0), steps=10**4, trials=200, seed=2, burn=10**4)
    assert abs(r.sigma[0, 1]) < 4 * r.sigma_stderr[0, 1]


def test_covariance_bad_steps():
    with pytest.raises(ValueError):
        covariance_check(Q1, steps=1000)


def test_f_count_examples():
    assert f_count_reference("cF") == 0
    assert f_count_reference("F") == 1


def test_f_profile_matches_reference():
    sym = _symbols(Q1.p, 5000, seed=9)
    marks = np.array([1, 10, 100, 1000, 5000], np.int64)
    prof = CK.unmatched_f_profile(sym, marks)
    assert list(prof) == [f_symbol_count(Word(sym[:m])) for m in marks]


def test_f_count_diagnostic_runs():
    r = f_count_diagnostic(Q1, n_grid=[2 ** k for k in range(8, 14)], trials=20, seed=0)
    assert len(r["mean_f_over_sqrt_n"]) == 6
    assert r["mean_f_over_sqrt_n"][-1] < 1.0


def test_time_bound_diagnostic_runs():
    r = time_bound_diagnostic(Q1, m_grid=(4, 8, 16), trials=200, seed=0)
    assert len(r["freq_far_before_m2"]) == 3
    assert all(0 <= x <= 1 for x in r["freq_near_after_m2"])
