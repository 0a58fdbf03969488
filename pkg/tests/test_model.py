import math

import numpy as np
import pytest

from twosource.model import (
    FieldExpr,
    ScenarioError,
    field_from_list,
    field_to_list,
    load_scenario,
    save_scenario,
    scale_concentrate,
    scenario_from_dict,
    scenario_to_dict,
    validate,
)


def test_unit_gaussian_integral():
    g = FieldExpr.gaussian(3, 1.0, [0, 0, 0], 1.0)
    assert abs(g.integral() - (2 * math.pi) ** 1.5) < 1e-12


def test_fourier_matches_direct_quadrature_d1():
    f = FieldExpr.gaussian(1, 0.3 - 0.8j, [0.4], 2.0, [1.1])
    x = np.linspace(-20, 20, 4001)
    xi = np.linspace(-4, 4, 9)
    direct = np.exp(-1j * np.outer(xi, x)) @ f(x[:, None]) * (x[1] - x[0]) / (2 * math.pi)
    assert np.max(np.abs(direct - f.fourier()(xi[:, None]))) < 1e-12


@pytest.mark.parametrize("d", [1, 2, 3])
def test_fourier_involution(d, rng):
    f = FieldExpr.gaussian(d, 1 + 2j, rng.normal(size=d), 1.7, rng.normal(size=d))
    x = rng.normal(size=(10, d))
    assert np.max(np.abs(f.fourier().inverse_fourier()(x) - f(x))) < 1e-13


def test_scale_concentrate_transform(rng):
    f = FieldExpr.gaussian(3, 1.0, [0.2, 0, 0], 1.3, [0, 0.5, 0])
    eps, q = 0.1, np.array([2.0, 0, 0])
    g = scale_concentrate(f, eps, q)
    xi = rng.normal(size=(8, 3)) * 5
    expected = np.exp(-1j * xi @ q) * f.fourier()(eps * xi)
    assert np.max(np.abs(g.fourier()(xi) - expected)) < 1e-12


def test_zero_field_is_zero():
    z = FieldExpr.zero(3)
    assert z.is_zero
    assert np.all(z(np.ones((3, 3))) == 0)


def test_reference_scenario_values(scenario):
    assert scenario.epsilons == (0.4, 0.2, 0.1, 0.05, 0.025)
    assert scenario.gamma == 1.0 and scenario.N == 2.1
    assert np.allclose(scenario.q1, [2, 0, 0])
    assert scenario.alpha(0.1) == pytest.approx(0.1)
    assert scenario.eta(0.1) == pytest.approx(0.01)
    assert validate(scenario).ok


def test_weight_threshold_violation(scenario):
    bad = scenario_from_dict(scenario_to_dict(scenario) | {"N": 1.5})
    rep = validate(bad)
    assert not rep.ok and rep.threshold == pytest.approx(2.0)


def test_missing_key_raises(scenario):
    cfg = scenario_to_dict(scenario)
    del cfg["q1"]
    with pytest.raises(ScenarioError):
        scenario_from_dict(cfg)


def test_config_roundtrip(tmp_path, scenario):
    p = tmp_path / "s.json"
    save_scenario(scenario, p)
    back = load_scenario(p)
    assert scenario_to_dict(back) == scenario_to_dict(scenario)
    f = FieldExpr.gaussian(3, 0.5 - 0.25j, [1, 2, 3], 0.7, [0.1, 0, -0.2])
    g = field_from_list(field_to_list(f), 3)
    x = np.random.default_rng(0).normal(size=(5, 3))
    assert np.array_equal(f(x), g(x))
