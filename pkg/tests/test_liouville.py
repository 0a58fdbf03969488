import math

import numpy as np
import pytest

from twosource.harness import reference_observables
from twosource.liouville import (
    FORWARD,
    DeltaSphereSource,
    RayMeasure,
    additivity_residual,
    default_constant,
    flux_ratio,
    liouville_weak_residual,
    mu_pairing,
    mu_pairing_adaptive,
    q_pairing,
    radiation_residual,
    ray_integral,
    ray_integral_adaptive,
    reported_constant,
    resolvent_decay_check,
    squared_observable,
    transport_equation_residual,
    transport_resolvent,
)
from twosource.model import FieldExpr, field_from_list
from twosource.wigner import make_observable


def _obs(key):
    spec = reference_observables()[key]
    return make_observable(field_from_list(spec["phi"], 3), field_from_list(spec["psi"], 3), key)


def test_constants():
    assert default_constant(3) == pytest.approx(8 * math.pi**4)
    assert reported_constant() == pytest.approx(1 / (16 * math.pi**2))


def test_ray_integral_closed_form_vs_adaptive(rng):
    phi = FieldExpr.gaussian(3, 1.0 - 0.5j, [0.4, -0.2, 0.1], 3.0, [0.5, 0, 0])
    for _ in range(5):
        x0 = rng.normal(size=(1, 3))
        om = rng.normal(size=(1, 3))
        for damping in (0.0, 0.3):
            a = ray_integral(phi, x0, om, damping)[0]
            b = ray_integral_adaptive(phi, x0, om, damping)[0]
            assert abs(a - b) < 1e-10


def test_ray_integral_far_behind_does_not_overflow():
    phi = FieldExpr.gaussian(3, 1.0, [0, 0, 0], 16.0)
    v = ray_integral(phi, np.array([[50.0, 0, 0]]), np.array([[1.0, 0, 0]]))
    assert np.all(np.isfinite(v)) and abs(v[0]) < 1e-300


def test_mu_closed_form_vs_adaptive(scenario):
    mu = RayMeasure.from_scenario(scenario)
    a = _obs("near0")
    assert abs(mu_pairing(mu, a) - mu_pairing_adaptive(mu, a)) < 1e-10
    assert abs(mu_pairing(mu, a) - 0.5531622065356105) < 1e-10


def test_q_pairing_closed_form(scenario):
    # phi = 1 near the sources, psi = 1 on the sphere: sum_j (C/2) int |S_hat|^2
    Q = DeltaSphereSource.from_scenario(scenario)
    phi = FieldExpr.gaussian(3, 1.0, [0, 0, 0], 1e-12)
    psi = FieldExpr.gaussian(3, 1.0, [0, 0, 0], 1e-12)
    sh2 = (2 * math.pi) ** -3 * math.exp(-1.0)  # |S_hat|^2 on |xi| = 1 for a unit Gaussian
    expected = default_constant(3) * 0.5 * 2 * 4 * math.pi * sh2
    assert abs(q_pairing(Q, make_observable(phi, psi)) - expected) < 1e-9 * expected


def test_limit_side_identities(scenario):
    for key in ("near0", "straddle"):
        a = _obs(key)
        rep = radiation_residual(scenario, a)
        assert rep.residual < 1e-6
        assert rep.matches["plus_backward"]
        assert liouville_weak_residual(scenario, a).residual < 1e-6
        assert liouville_weak_residual(scenario, a, FORWARD).residual < 1e-6
        assert additivity_residual(scenario, a) < 1e-8


def test_ray_measure_is_nonnegative(scenario):
    a = squared_observable([0.4, 0.3, 0], 1.0, [0, 0.5, 0], 1.0)
    v = mu_pairing(RayMeasure.from_scenario(scenario), a)
    assert v.real > 0 and abs(v.imag) < 1e-12 * v.real


def test_flux_ratio_stabilizes(scenario):
    r = [flux_ratio(scenario, R) for R in (16.0, 64.0)]
    assert abs(r[1] - r[0]) < 0.01 * r[1]


def test_transport_resolvent_solves_equation(rng):
    R = _obs("near0")
    x = rng.normal(size=(6, 3))
    xi = rng.normal(size=(6, 3))
    for alpha in (1.0, 0.05):
        assert np.max(np.abs(transport_equation_residual(R, alpha, x, xi))) < 1e-7
        a = transport_resolvent(R, alpha, x, xi)
        b = transport_resolvent(R, alpha, x, xi, method="adaptive")
        assert np.max(np.abs(a - b)) < 1e-9


def test_transport_resolvent_rejects_zero_frequency():
    with pytest.raises(ValueError):
        transport_resolvent(_obs("near0"), 1.0, np.zeros((1, 3)), np.zeros((1, 3)))


def test_resolvent_decay():
    rep = resolvent_decay_check(_obs("near0"), 1.0)
    assert rep.decays_in_x and math.isfinite(rep.constant)
