import math

import numpy as np
import pytest

from fkburger.estimator import (DegenerateWindowError, HeavyLaw, InsufficientSamplesError,
                                deterministic_return_fit, envelope_fit, heavy_sample, ks_against_law,
                                left_tail_and_summax_checks, linear_fit, pareto_sample, poisson_power_fit,
                                return_time_experiment, summax_ratio, tail_fit)


def test_pareto_hill():
    f = tail_fit(pareto_sample(1.5, 10**6, seed=1), "hill")
    assert f.method == "hill" and f.window == (1000,)
    assert abs(f.exponent - 1.5) < 0.05
    assert 0 < f.stderr < 0.1


def test_pareto_loglog():
    f = tail_fit(pareto_sample(1.5, 10**6, seed=2), "loglog", window=(10, 1000))
    assert abs(f.exponent - 1.5) < 0.05
    assert f.window == (10.0, 1000.0)
    assert f.r2 > 0.99


def test_constant_samples_rejected():
    with pytest.raises(DegenerateWindowError):
        tail_fit(np.ones(5000), "loglog")
    with pytest.raises(DegenerateWindowError):
        tail_fit(np.ones(5000), "hill")


def test_too_few_samples():
    with pytest.raises(InsufficientSamplesError):
        tail_fit(np.arange(1.0, 500.0), "hill")
    with pytest.raises(InsufficientSamplesError):
        tail_fit(np.arange(1.0, 5000.0), "hill", censored=np.ones(4999, bool))


def test_censored_mixture_warning():
    x = pareto_sample(1.5, 10**5, seed=3)
    cens = np.zeros(len(x), bool)
    cens[: 30_000] = True
    x = np.where(cens, 50.0, x)
    f = tail_fit(x, "loglog", window=(2, 1000), censored=cens)
    assert f.censored_fraction == pytest.approx(0.3)
    assert f.window[1] <= 49
    assert any("censored" in w and "bias" in w for w in f.warnings)
    h = tail_fit(x, "hill", censored=cens)
    assert h.censored_fraction == pytest.approx(0.3) and h.warnings


def test_unknown_method():
    with pytest.raises(ValueError):
        tail_fit(pareto_sample(1.5, 2000, seed=0), "moment")


@pytest.mark.parametrize("alpha", [0.75, 1.0, 4 / 3, 1.5])
def test_hill_and_loglog_agree(alpha):
    x = pareto_sample(alpha, 10**6, seed=11)
    h = tail_fit(x, "hill")
    g = tail_fit(x, "loglog", window=(10, 1000))
    assert abs(h.exponent - g.exponent) < 2 * math.hypot(h.stderr, g.stderr)


def test_fits_deterministic():
    x = pareto_sample(1.5, 10**5, seed=4)
    assert pareto_sample(1.5, 10**5, seed=4).tolist() == x.tolist()
    a, b = tail_fit(x, "hill", seed=2), tail_fit(x, "hill", seed=2)
    assert a.to_json() == b.to_json()


def test_stderr_shrinks_by_sqrt2_when_doubling():
    # doubling N should shrink the bootstrap stderr by sqrt(2)
    se = [tail_fit(pareto_sample(1.5, n, seed=5), "hill", k=1000).stderr for n in (2 * 10**5, 4 * 10**5)]
    s1 = [tail_fit(pareto_sample(1.5, n, seed=6), "loglog", window=(5, 100)).stderr for n in (2 * 10**5, 4 * 10**5)]
    assert abs(s1[0] / s1[1] / math.sqrt(2) - 1) < 0.2
    # Hill with fixed k measures the same order statistics, so its stderr stays put
    assert abs(se[0] / se[1] - 1) < 0.3


def test_tailfit_json():
    f = tail_fit(pareto_sample(1.5, 5000, seed=0), "hill")
    d = f.as_dict()
    assert d["slope"] == -d["exponent"] and d["r2"] is None


# ---------------------------------------------------------------- fitting helpers

def test_linear_fit_exact():
    x = np.arange(10.0)
    b, a, se, r2 = linear_fit(x, 3 - 2 * x)
    assert b == pytest.approx(-2) and a == pytest.approx(3) and r2 == pytest.approx(1)
    with pytest.raises(DegenerateWindowError):
        linear_fit(np.ones(4), np.arange(4.0))


def test_poisson_power_fit_recovers_slope():
    rng = np.random.default_rng(0)
    n = np.arange(2, 50)
    expo = 10**7
    counts = rng.poisson(expo * 0.3 * n ** -2.5)
    b, a, se = poisson_power_fit(n, counts, expo)
    assert abs(b + 2.5) < 4 * se + 1e-3


# ---------------------------------------------------------------- heavy law

def test_heavy_law_mean_zero_exact():
    for a in (1.1, 4 / 3, 1.5, 1.9):
        law = HeavyLaw(a)
        assert abs(law.mean()) < 1e-12
        assert law.mass(np.arange(-1, 2000)).sum() + law.survival(1999) == pytest.approx(1, abs=1e-12)


def test_heavy_law_errors():
    with pytest.raises(ValueError):
        HeavyLaw(0.75)
    with pytest.raises(ValueError):
        HeavyLaw(2.5)
    HeavyLaw(0.75, mean_zero=False)


def test_heavy_law_survival_power():
    law = HeavyLaw(1.5)
    k = 2.0 ** np.arange(4, 30)
    c = law.survival(k) * k ** 1.5
    assert abs(c[-1] / c[-2] - 1) < 1e-6
    assert np.all(np.abs(c / c[-1] - 1) < 0.1)


def test_heavy_sample_tail_flat():
    law = HeavyLaw(1.5)
    x = heavy_sample(law, 10**7, seed=1)
    assert x.min() >= -1
    s = np.sort(x)
    k = np.unique(np.logspace(1, 3, 9).astype(int))
    surv = 1 - np.searchsorted(s, k, side="right") / len(s)
    flat = surv * k ** 1.5
    assert flat.max() / flat.min() < 1.1 * 1.1
    assert np.all(np.abs(flat / (law.survival(k) * k ** 1.5) - 1) < 0.1)
    assert abs(x.mean()) < 4 * x.std() / math.sqrt(len(x))


def test_heavy_sample_small_values():
    law = HeavyLaw(4 / 3)
    assert ks_against_law(heavy_sample(law, 10**6, seed=2), law) > 1e-3


# ---------------------------------------------------------------- appendix suite

@pytest.mark.parametrize("alpha", [4 / 3, 1.5])
def test_return_time_exponent(alpha):
    f = return_time_experiment(alpha, 2 * 10**5, 10**5, seed=1)
    assert abs(f.exponent - 1 / alpha) < 0.1


def test_return_time_start_zero():
    a = return_time_experiment(1.5, 10**5, 10**4, seed=2, start=0)
    assert abs(a.exponent - 2 / 3) < 0.15


def test_return_time_bad_alpha():
    with pytest.raises(ValueError):
        return_time_experiment(0.9, 100, 100, 0)


def test_deterministic_return_rejected():
    with pytest.raises(DegenerateWindowError):
        deterministic_return_fit()


def test_envelope_fit_exponential_vs_power():
    rng = np.random.default_rng(1)
    lam = np.linspace(0.5, 5, 10)
    e = envelope_fit(rng.exponential(1.0, 10**5), lam)
    assert e["envelope"] and e["slope"] == pytest.approx(-1, abs=0.05)
    p = envelope_fit(rng.pareto(1.5, 10**5) + 1, np.linspace(2, 50, 10))
    assert not p["envelope"]


def test_envelope_flags_sparse_points():
    e = envelope_fit(np.arange(100.0), [10, 20, 98, 200])
    assert e["flagged"] == [False, False, True, True] and e["envelope"] is False


def test_left_tail_and_summax_small():
    r = left_tail_and_summax_checks(trials=5000, seed=0)
    assert r["left_tail"]["slope"] < 0 and r["sum_max"]["slope"] < 0
    assert not r["left_tail_control"]["envelope"] and not r["sum_max_control"]["envelope"]


def test_summax_without_inflation_is_heavy():
    # eps = 0: sum / max stays O(1) only in law, its tail is polynomial
    r = summax_ratio(0.75, 0.0, 10**3, 5000, seed=0)
    assert np.all(r >= 1)
    assert np.quantile(r, 0.999) > 2 * np.quantile(r, 0.5)
