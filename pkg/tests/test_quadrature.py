import math

import numpy as np
import pytest

from twosource.quadrature import (
    GaussianMixtureSampler,
    adaptive_1d,
    gl_panels,
    mc_integrate,
    sphere_area,
    sphere_rule,
)


@pytest.mark.parametrize("kind", ["product", "fibonacci"])
def test_sphere_area(kind):
    r = sphere_rule(3, 20, kind)
    assert abs(r.integrate(np.ones(len(r.nodes))) - 4 * math.pi) < 1e-10


def test_product_rule_integrates_polynomials():
    r = sphere_rule(3, 20, "product")
    z = r.nodes[:, 2]
    assert abs(r.integrate(z**2) - 4 * math.pi / 3) < 1e-12
    assert abs(r.integrate(z**4) - 4 * math.pi / 5) < 1e-12


def test_sphere_area_formula():
    assert sphere_area(3) == pytest.approx(4 * math.pi)
    assert sphere_area(2) == pytest.approx(2 * math.pi)


def test_gl_panels_exact_for_polynomials():
    x, w = gl_panels(np.linspace(0, 3, 4), 5)
    assert abs(np.sum(w * x**9) - 3**10 / 10) < 1e-9


def test_adaptive_1d_oracle():
    r = adaptive_1d(lambda t: np.exp(-t * t), -8.0, 8.0, tol=1e-13)
    assert abs(r.value - math.sqrt(math.pi)) < 1e-12


def test_mc_is_reproducible_and_unbiased():
    sam = GaussianMixtureSampler(np.zeros((1, 3)), 1.0)
    f = lambda x: np.exp(-0.5 * np.sum(x * x, axis=1))
    a = mc_integrate(f, sam, 20000, 5)
    b = mc_integrate(f, sam, 20000, 5)
    assert a.value == b.value
    assert abs(a.value - (2 * math.pi) ** 1.5) < 4 * a.stderr + 1e-12
