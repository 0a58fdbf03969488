import numpy as np
import pytest

from twosource.harness import reference_observables
from twosource.model import FieldExpr, field_from_list
from twosource.wigner import (
    axisymmetric_pairing,
    common_axis,
    conj_symbol,
    cross_term,
    full_field,
    gaussian_pairing,
    gaussian_pairing_fourier,
    hybrid_pairing,
    make_observable,
    scenario_pairing,
    source_limit,
    source_limit_split,
    source_term_pairing,
    source_term_pairing_fourier,
    spectral_pairing,
    transport_identity_residual,
    weyl_duality_check,
    wigner_pairing,
    wigner_pairing_d1_oracle,
)

U1 = FieldExpr.gaussian(1, 0.5 + 0.2j, [0.3], 2.0, [1.5])
V1 = FieldExpr.gaussian(1, 0.7, [-0.2], 1.0)
A1 = make_observable(FieldExpr.gaussian(1, 1.0, [0.1], 1.0), FieldExpr.gaussian(1, 1.0, [0.8], 3.0))


def _obs(key):
    spec = reference_observables()[key]
    return make_observable(field_from_list(spec["phi"], 3), field_from_list(spec["psi"], 3), key)


def test_pairing_routes_agree_d1():
    for eps in (1.0, 0.5, 0.2):
        exact = gaussian_pairing(U1, V1, A1, eps)
        assert abs(exact - gaussian_pairing_fourier(U1, V1, A1, eps)) < 1e-12
        assert abs(exact - wigner_pairing_d1_oracle(U1, V1, A1, eps)) < 1e-9


def test_hermitian_symmetry_and_sesquilinearity(rng):
    u2 = FieldExpr.gaussian(1, 1.0, [0.0], 1.0, [-0.4])
    P = lambda u, v: gaussian_pairing(u, v, A1, 0.3)
    assert abs(P(U1, V1) - np.conj(gaussian_pairing(V1, U1, conj_symbol(A1), 0.3))) < 1e-14
    c = 0.3 - 1.2j
    assert abs(P(U1.scale(c) + u2, V1) - c * P(U1, V1) - P(u2, V1)) < 1e-14
    assert abs(P(V1, U1.scale(c)) - np.conj(c) * P(V1, U1)) < 1e-14


def test_weyl_duality_needs_reflected_symbol():
    r = weyl_duality_check(U1, V1, A1, 0.5)
    assert r.reflected < 1e-7
    assert r.literal > 1e-3


def test_zero_observable():
    a = make_observable(FieldExpr.zero(1), FieldExpr.gaussian(1))
    r = wigner_pairing(U1, V1, a, 0.5)
    assert r.value == 0 and r.method == "zero"


def test_observable_flags():
    assert _obs("off").off_sphere
    assert not _obs("near0").off_sphere


def test_source_term_routes_agree(scenario):
    a = _obs("src")
    gh = source_term_pairing(scenario, 0.2, 0, a)
    fo = source_term_pairing_fourier(scenario, 0.2, 0, a)
    assert abs(gh.value - fo.value) < 1e-4


def test_source_limit_split_sums(scenario):
    a = _obs("src")
    pv, delta = source_limit_split(scenario, 0, a)
    assert abs(pv + delta - source_limit(scenario, 0, a)) < 1e-12
    assert abs(source_limit(scenario, 0, a) - (1.5043966752761528 - 3.3835714947245203j)) < 1e-9


def test_common_axis(scenario):
    u = full_field(scenario, 0.4)
    assert np.allclose(np.abs(common_axis(_obs("near0"), u)), [1, 0, 0])
    assert common_axis(_obs("off"), u) is None


def test_axisymmetric_route_matches_hybrid_monte_carlo(scenario):
    a = _obs("near0")
    eps = 0.4
    u = full_field(scenario, eps)
    det = axisymmetric_pairing(u, u, eps, [(a.phi, None)], a.kernel, a.phi, [1.0, 0, 0], panel=3.0)
    mc = hybrid_pairing(u, u, eps, [(lambda X: a.phi(X), None)], a.kernel, 20000, 3, phi_for_sampling=a.phi)
    assert abs(det.value - mc.value) < 3 * (mc.error + det.error)
    assert scenario_pairing(scenario, eps, a).method == det.method


def test_spectral_route_for_off_sphere(scenario):
    a = _obs("off")
    u = full_field(scenario, 0.4)
    r = wigner_pairing(u, u, a, 0.4)
    assert r.method == spectral_pairing(u.solution, u.solution, a, 0.4, u.scale, u.scale).method
    assert abs(r.value) < 1e-6 and abs(r.value) > r.error
    with pytest.raises(ValueError):
        spectral_pairing(u.solution, u.solution, _obs("near0"), 0.4)


def test_cross_term_small_at_small_eps(scenario):
    a = _obs("mid")
    big = abs(cross_term(scenario, 0.4, a).value)
    small = abs(cross_term(scenario, 0.1, a).value)
    assert small < 0.01 * big


def test_transport_identity_at_coarse_eps(scenario):
    r = transport_identity_residual(scenario, 0.4, _obs("near0"), n_samples=8000)
    assert r.ok
