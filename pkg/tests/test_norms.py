import math

import pytest
from scipy.integrate import quad

from twosource.helmholtz import solve_outgoing, solve_rescaled
from twosource.model import FieldExpr
from twosource.norms import (
    BallIndicator,
    NormError,
    RadialSumField,
    RingDecomposition,
    ZeroField,
    b_norm,
    bstar_norm,
    ring_integral,
    as_field,
    trace_functional,
    weighted_l2,
    xlambda_norm,
)
from twosource.wigner import make_observable

UNIT = FieldExpr.gaussian(3, 1.0, [0, 0, 0], 1.0)


def _ring_oracle(j):
    lo, hi = (0.0, 1.0) if j == -1 else (2.0**j, 2.0 ** (j + 1))
    return quad(lambda r: 4 * math.pi * r * r * math.exp(-r * r), lo, hi, epsabs=1e-15)[0]


def test_ring_decomposition_bounds():
    assert RingDecomposition.bounds(-1) == (0.0, 1.0)
    assert RingDecomposition.bounds(3) == (8.0, 16.0)


def test_unit_gaussian_b_norm_matches_scipy():
    oracle = sum(math.sqrt(2.0 ** (j + 1) * _ring_oracle(j)) for j in range(-1, 8))
    assert b_norm(UNIT).value == pytest.approx(oracle, abs=1e-9)
    assert b_norm(UNIT).value == pytest.approx(4.981419958560151, abs=1e-9)


def test_ring_integral_against_scipy():
    f = as_field(UNIT)
    for j in (-1, 0, 1, 2):
        assert ring_integral(f, j) == pytest.approx(_ring_oracle(j), rel=1e-10)


def test_ball_closed_forms():
    ball = BallIndicator(1.0)
    assert bstar_norm(ball).value == pytest.approx(math.sqrt(2 * 4 * math.pi / 3), rel=1e-10)
    assert b_norm(ball).value == pytest.approx(2.046653, abs=1e-6)
    # int_{-1}^{1} sqrt(pi (1 - x^2)) dx = pi^{3/2} / 2
    assert trace_functional(ball) == pytest.approx(math.pi**1.5 / 2, rel=1e-9)


def test_gaussian_trace_and_weighted_norm():
    # int sqrt(int int exp(-|x|^2) dy dz) dx1 = sqrt(pi) sqrt(2 pi)
    assert trace_functional(UNIT) == pytest.approx(math.pi * math.sqrt(2), rel=1e-9)
    assert weighted_l2(UNIT, 0.0) == pytest.approx(math.pi**0.75, rel=1e-10)
    oracle = math.sqrt(quad(lambda r: 4 * math.pi * r * r * math.exp(-r * r) / (1 + r * r), 0, 40)[0])
    assert weighted_l2(UNIT, -1.0) == pytest.approx(oracle, rel=1e-8)


def test_zero_field():
    z = ZeroField()
    assert b_norm(z).value == 0 and bstar_norm(z).value == 0


def test_homogeneity_and_triangle(rng):
    for _ in range(3):
        f = FieldExpr.gaussian(3, 1.0, rng.normal(size=3), rng.uniform(0.5, 2), rng.normal(size=3))
        g = FieldExpr.gaussian(3, 1.0, rng.normal(size=3), rng.uniform(0.5, 2))
        c = complex(rng.normal(), rng.normal())
        for norm in (b_norm, bstar_norm):
            assert norm(f.scale(c)).value == pytest.approx(abs(c) * norm(f).value, rel=1e-8)
            assert norm(f + g).value <= norm(f).value + norm(g).value + 1e-9


def test_b_norm_of_outgoing_field_is_infinite(scenario):
    w = solve_rescaled(scenario, 0.4, 0).radial_field()
    with pytest.raises(NormError, match="J_max"):
        b_norm(w)


def test_bstar_of_solution_sup_is_interior(scenario):
    w = solve_rescaled(scenario, 0.4, 0)
    r = bstar_norm(w.radial_field())
    assert r.sup_interior
    assert r.value == pytest.approx(2.5686, abs=1e-3)


def test_bstar_refinement_oracle(scenario):
    sol = solve_rescaled(scenario, 0.1, 0)
    coarse = bstar_norm(sol.radial_field()).value
    fine = bstar_norm(RadialSumField([(c, p) for c, ps in sol.profiles() for p in ps], 3, n=96)).value
    assert abs(coarse - fine) < 0.02 * fine


def test_weighted_l2_divergence():
    # the undamped outgoing field decays like 1/|x|, so exponents >= -1/2 diverge
    w = solve_outgoing(UNIT).limit.radial_field()
    with pytest.raises(NormError):
        weighted_l2(w, -0.4)
    assert math.isfinite(weighted_l2(w, -0.6))


def test_xlambda_monotone_in_lambda():
    a = make_observable(FieldExpr.gaussian(3, 1.0, [0.5, 0, 0], 2.0), FieldExpr.gaussian(3, 1.0, [0, 0, 0], 1.0))
    vals = [xlambda_norm(a, lam) for lam in (0.5, 1.0, 2.0)]
    assert vals[0] <= vals[1] <= vals[2]
    with pytest.raises(NormError):
        xlambda_norm(a, 0.0)
