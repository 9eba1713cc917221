import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from fkburger.params import (ModelParams, ParameterError, p0_from_q, p_from_q, q_from_p, resolve_params,
                             theta0_from_p)


def test_q1_values():
    prm = ModelParams.from_q(1.0)
    assert prm.p == pytest.approx(1 / 3, abs=1e-15)
    assert prm.theta0 == pytest.approx(2 * math.pi / 3, abs=1e-14)
    assert prm.p0 == pytest.approx(0.75, abs=1e-14)
    assert prm.kappa_prime == pytest.approx(6.0, abs=1e-13)


def test_q2_values():
    prm = ModelParams.from_q(2.0)
    assert prm.p0 == pytest.approx(2 / 3, abs=1e-13)
    assert prm.kappa_prime == pytest.approx(16 / 3, abs=1e-12)


def test_q0_values():
    prm = ModelParams.from_q(0.0)
    assert prm.p == 0.0
    assert prm.theta0 == pytest.approx(math.pi / 2)
    assert prm.p0 == pytest.approx(1.0)


def test_symbol_law_sums_to_one():
    pr = ModelParams(0.2).probabilities()
    assert sum(pr) == pytest.approx(1.0, abs=1e-15)
    assert pr[4] == pytest.approx(0.1)


@pytest.mark.parametrize("bad", [-0.1, 0.5, 0.7, float("nan")])
def test_bad_p_rejected(bad):
    with pytest.raises(ParameterError):
        ModelParams(bad)


@pytest.mark.parametrize("bad", [-1.0, 4.0, 9.0])
def test_bad_q_rejected(bad):
    with pytest.raises(ParameterError):
        p_from_q(bad)


def test_resolve_needs_exactly_one():
    with pytest.raises(ParameterError):
        resolve_params()
    with pytest.raises(ParameterError):
        resolve_params(p=0.1, q=1.0)
    assert resolve_params(q=1.0).p == pytest.approx(1 / 3)


@given(st.floats(0.0, 0.4999, allow_nan=False))
def test_closed_form_matches_angle(p):
    q = q_from_p(p)
    assert p0_from_q(q) == pytest.approx(math.pi / (2 * theta0_from_p(p)), abs=1e-12)
    assert p_from_q(q) == pytest.approx(p, abs=1e-12)


@given(st.floats(0.0, 0.4999, allow_nan=False))
def test_derived_ranges(p):
    prm = ModelParams(p)
    assert math.pi / 2 - 1e-12 <= prm.theta0 < math.pi
    assert 0.5 < prm.p0 <= 1.0 + 1e-12
