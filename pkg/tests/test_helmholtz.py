import math

import numpy as np
import pytest
from scipy.integrate import quad

from twosource.helmholtz import (
    OutgoingSolution,
    SpectralSolution,
    richardson,
    solve_full,
    solve_outgoing,
    solve_rescaled,
    solve_shifted,
    sommerfeld_residual,
)
from twosource.model import FieldExpr, scenario_from_dict, scenario_to_dict
from twosource.quadrature import QuadratureError

UNIT = FieldExpr.gaussian(3, 1.0, [0, 0, 0], 1.0)


def test_outgoing_value_at_origin_matches_1d_oracle():
    # w(0) = -int_0^inf exp(-i r) r exp(-r^2/2) dr
    re = quad(lambda r: -math.cos(r) * r * math.exp(-r * r / 2), 0, 40, epsabs=1e-14)[0]
    im = quad(lambda r: math.sin(r) * r * math.exp(-r * r / 2), 0, 40, epsabs=1e-14)[0]
    w0 = solve_outgoing(UNIT).evaluate(np.zeros((1, 3)))[0]
    assert abs(w0 - complex(re, im)) < 1e-10
    assert abs(w0 - (-0.27522154 + 0.76017345j)) < 1e-8


def test_outgoing_evaluators_agree():
    rng = np.random.default_rng(3)
    pts = rng.normal(size=(6, 3))
    S = UNIT + FieldExpr.gaussian(3, 0.5, [0.6, 0, 0], 2.0)
    sol = solve_outgoing(S, check_points=pts)
    a = sol.evaluate_absorption(pts)
    b = sol.evaluate_kernel(pts)
    assert np.max(np.abs(a - b) / np.abs(b)) < 1e-4


def test_zero_source():
    sol = solve_outgoing(FieldExpr.zero(3))
    assert np.all(sol.evaluate(np.ones((2, 3))) == 0)


def test_far_field_decay():
    sol = solve_outgoing(UNIT)
    e = np.array([[1.0, 0, 0]])
    vals = [abs(sol.evaluate(r * e)[0]) * r for r in (20, 40, 80)]
    assert max(vals) / min(vals) < 1.05
    assert vals[0] == pytest.approx(abs(sol.far_constant()), rel=1e-10)


def test_defining_equation_residual(scenario, rng):
    xi = rng.normal(size=(32, 3))
    for eps in scenario.epsilons:
        for sol in (solve_rescaled(scenario, eps, 0), solve_rescaled(scenario, eps, 1), solve_shifted(scenario, eps), solve_full(scenario, eps)):
            pts = xi / eps if sol.descriptor == "full" else xi
            r = sol.symbol(pts) * sol.fourier_value(pts) - sol.numerator(pts)
            assert np.max(np.abs(r)) < 1e-12 * max(1.0, np.max(np.abs(sol.numerator(pts))))


def test_rescaled_solution_fourier_source(scenario, rng):
    eps = 0.1
    xi = rng.normal(size=(16, 3))
    sol = solve_rescaled(scenario, eps, 0)
    expected = scenario.S0.fourier()(xi) + np.exp(-1j * xi @ scenario.q1 / eps) * scenario.S1.fourier()(xi)
    assert np.max(np.abs(sol.numerator(xi) - expected)) < 1e-13


def test_positive_imaginary_k2_rejected():
    with pytest.raises(ValueError):
        SpectralSolution(UNIT, 1.0 + 0.1j)


def test_green_and_spectral_evaluation_agree():
    sol = SpectralSolution(UNIT, 1.0 - 0.3j)
    x = np.array([[0.3, 0.1, 0.0], [1.5, 0.0, 0.5]])
    g = sol.evaluate(x, "green").values
    s = sol.evaluate(x, "spectral").values
    assert np.max(np.abs(g - s)) < 1e-7


def test_pairing_negligible_overlap(scenario):
    v = FieldExpr.gaussian(3, 1.0, [0, 0, 0], 1.0, [8.0, 0, 0])
    r = solve_shifted(scenario, 0.2).pairing(v)
    assert abs(r.value) < 1e-8


def test_pairing_matches_monte_carlo_at_eta_one(scenario):
    s = scenario_from_dict(scenario_to_dict(scenario) | {"epsilons": [1.0]})
    sol = solve_shifted(s, 1.0)
    assert sol.eta == pytest.approx(1.0)
    v = FieldExpr.gaussian(3, 1.0, [1.5, 0, 0], 1.0)
    exact = sol.pairing(v)
    mc = sol.pairing_oracle(v, n_samples=200_000, seed=1)
    assert abs(exact.value - mc.value) < 3 * mc.stderr + 1e-12


def test_pairing_oscillation_budget(scenario):
    with pytest.raises(QuadratureError):
        solve_shifted(scenario, 0.025).pairing(UNIT, freq_cap=10.0)


def test_pairing_sweep_decreases(scenario):
    v = FieldExpr.gaussian(3, 1.0, [0, 0, 0], 1.0)
    mags = [abs(solve_shifted(scenario, e).pairing(v).value) for e in (0.2, 0.1, 0.05, 0.025)]
    assert all(b < a for a, b in zip(mags, mags[1:]))


def test_sommerfeld_closed_form():
    w = lambda x: np.exp(-1j * np.linalg.norm(x, axis=1)) / np.linalg.norm(x, axis=1)
    res = [sommerfeld_residual(w, r) for r in (10.0, 20.0, 40.0)]
    # d_r w + i w = -w / r and d_r w - i w = -(2i + 1/r) w
    for r in res:
        R = r.radius
        assert r.plus == pytest.approx(4 * math.pi / R**3, rel=1e-5)
        assert r.minus == pytest.approx(4 * math.pi * (4 + 1 / R**2) / R, rel=1e-5)
    assert res[0].plus > res[1].plus > res[2].plus


def test_sommerfeld_outgoing_decreasing():
    sol = OutgoingSolution(UNIT)
    plus = [sommerfeld_residual(sol.evaluate, r).plus for r in (10.0, 20.0, 40.0)]
    assert plus[0] > plus[1] > plus[2]


def test_sommerfeld_zero_field():
    r = sommerfeld_residual(lambda x: np.zeros(len(x), dtype=complex), 10.0)
    assert r.plus == 0 and r.minus == 0


def test_richardson_removes_linear_and_quadratic_terms():
    h = np.array([0.1, 0.05, 0.025])
    vals = 2.0 + 3 * h - 5 * h**2
    assert abs(richardson(vals, 2.0, (1, 2)) - 2.0) < 1e-13
