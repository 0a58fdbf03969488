import math

import numpy as np
import pytest

from twosource.model import FieldExpr
from twosource.oscillatory import (
    SweepSeries,
    conjugation_residual,
    lemma_l_bruteforce,
    lemma_l_integral,
    lemma_limit_report,
    pv_delta_eval,
    pv_delta_limit,
    pv_minus_i_pi_delta,
    rate_fit,
)

W = FieldExpr.gaussian(1, 1.0, [0.1], 4.0, [0.7])


@pytest.mark.parametrize("eps", [0.2, 0.05, 0.01])
def test_model_integral_matches_bruteforce(eps):
    r = lemma_l_integral(W, 0.5, eps, 1.0, 1.0)
    assert abs(r.value - lemma_l_bruteforce(W, 0.5, eps, 1.0, 1.0)) < 1e-8
    assert r.error < 1e-10


def test_model_integral_zero_field():
    assert lemma_l_integral(FieldExpr.zero(1), 0.5, 0.1, 1.0, 1.0).value == 0


def test_conjugation_symmetry():
    w = W.scale(0.3 + 0.4j)
    assert conjugation_residual(w, 0.5, 0.05, 1.0, 1.3) < 1e-12


def test_pv_delta_even_gaussian():
    g = FieldExpr.gaussian(1, 1.0, [0.0], 2.0)
    # p.v. part vanishes by symmetry, delta part gives -i pi g(0)
    assert abs(pv_delta_limit(g) - (-1j * math.pi)) < 1e-6


def test_pv_delta_odd_function():
    f = lambda x: x * np.exp(-x * x)
    assert abs(pv_delta_limit(f, L=12.0) - math.sqrt(math.pi)) < 1e-6


def test_pv_delta_routes_agree():
    g = FieldExpr.gaussian(1, 1.0, [0.3], 2.0, [0.4])
    assert abs(pv_delta_limit(g) - pv_minus_i_pi_delta(g)) < 1e-6
    with pytest.raises(ValueError):
        pv_delta_eval(g, 0.0)


@pytest.mark.parametrize("p", [0.5, 1.0, 1.5, 2.0])
def test_rate_fit_recovers_planted_rates(p):
    eps = np.geomspace(0.4, 0.025, 5)
    L = 1 + 0.5j
    ser = SweepSeries(eps, L + (0.3 - 0.2j) * eps**p, np.zeros(5))
    assert abs(rate_fit(ser).rate - p) < 0.05
    assert abs(rate_fit(ser).limit - L) < 1e-6
    assert abs(rate_fit(ser, L).rate - p) < 0.05


def test_sweep_series_validation():
    with pytest.raises(ValueError):
        SweepSeries([0.1, 0.2], [1, 2], [0, 0])
    with pytest.raises(ValueError):
        SweepSeries([0.2, 0.1], [1, 2], [0, -1])
    with pytest.raises(ValueError):
        rate_fit(SweepSeries([0.2, 0.1], [1, 2], [0, 0]))


def test_limit_report_has_both_hypotheses():
    rep = lemma_limit_report(W)
    assert set(rep.fits) == {"zero", "minus_i_pi_w0"}
    assert rep.preferred in rep.fits
    assert abs(rep.w0 - W(np.zeros((1, 1)))[0]) < 1e-15
