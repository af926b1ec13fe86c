import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flockhydro.errors import DomainError, IntegrandError, NonconfiningPotential
from flockhydro.quadrature import (
    ModelParams,
    SelfPropulsion,
    TabulatedRadial,
    ZeroPotential,
    build_polar_grid,
    integrate_weighted,
    scaled_integral,
    sphere_area,
    weight_e,
    weighted_mean,
)


def test_weight_examples():
    p = ModelParams(1.0, 2)
    assert weight_e(1.0, 1.0, p) == 1.0
    assert weight_e(0.0, 0.0, p) == pytest.approx(math.exp(-0.5), rel=1e-15)


def test_weight_matches_direct_phi():
    p = ModelParams(0.3, 2, SelfPropulsion(2.0, 1.0))
    v = np.array([0.6, math.sqrt(1.2**2 - 0.36)])
    phi = 0.5 * np.sum((v - [1.0, 0.0]) ** 2) + 1.2**4 / 4 - 2 * 1.2**2 / 2
    assert weight_e(0.5, 1.2, p) == pytest.approx(math.exp(-phi / 0.3), rel=1e-13)


@pytest.mark.parametrize("c, r", [(1.5, 1.0), (-1.01, 0.0), (0.0, -0.1), (np.nan, 1.0)])
def test_weight_domain(c, r):
    with pytest.raises(DomainError):
        weight_e(c, r, ModelParams(1.0, 2))


@settings(max_examples=60, deadline=None)
@given(st.floats(0.05, 5.0), st.floats(-1.0, 1.0), st.floats(0.0, 6.0), st.floats(0.1, 3.0))
def test_weight_is_exp_of_minus_phi(sigma, c, r, alpha):
    p = ModelParams(sigma, 3, SelfPropulsion(alpha, 1.0))
    s = math.sqrt(max(0.0, 1 - c * c))
    v = np.array([r * c, r * s, 0.0])
    phi = 0.5 * np.sum((v - [1.0, 0.0, 0.0]) ** 2) + float(p.V(r))
    assert weight_e(c, r, p) == pytest.approx(math.exp(-phi / sigma), rel=1e-11, abs=1e-300)


def test_sphere_areas():
    assert sphere_area(0) == 2.0
    assert sphere_area(1) == pytest.approx(2 * math.pi)
    assert sphere_area(2) == pytest.approx(4 * math.pi)


def test_gaussian_truncation_radius():
    g = build_polar_grid(ModelParams(1.0, 2), 64, 64, 1e-18)
    assert g.r_max == pytest.approx(1.2 * (1 + math.sqrt(2 * 18 * math.log(10))), rel=1e-9)


@pytest.mark.parametrize("params", [ModelParams(1.0, 2), ModelParams(0.4, 3, SelfPropulsion(1.0, 2.0))])
def test_small_rule_measures_domain(params):
    g = build_polar_grid(params, 4, 4)
    d = params.dim
    exact = sphere_area(d - 2) * g.r_max**d / d * (2.0 if d == 3 else math.pi)
    # sin(theta) is not a polynomial, so d = 3 is exact only to the rule's accuracy
    assert g.measure() == pytest.approx(exact, rel=1e-12 if d == 2 else 2e-5)
    assert np.all((g.theta_nodes > 0) & (g.theta_nodes < math.pi))
    assert np.all((g.r_nodes > 0) & (g.r_nodes < g.r_max))


def test_quartic_confinement_is_finite():
    g = build_polar_grid(ModelParams(1.0, 3, SelfPropulsion(1.0, 1.0)), 64, 64)
    assert math.isfinite(g.r_max) and g.r_max < build_polar_grid(ModelParams(1.0, 3), 8, 8).r_max


@pytest.mark.parametrize("n", [4, 9, 16])
def test_radial_rule_exact_to_degree(n):
    g = build_polar_grid(ModelParams(1.0, 2), n, n)
    for k in range(2 * n):
        exact = g.r_max ** (k + 1) / (k + 1)
        assert np.sum(g.r_weights * g.r_nodes**k) == pytest.approx(exact, rel=1e-12)


def test_nonconfining_potentials():
    with pytest.raises(NonconfiningPotential):
        build_polar_grid(ModelParams(1.0, 2, SelfPropulsion(1.0, 1.0).scaled(-1.0)))
    r = np.linspace(0.0, 3.0, 31)
    short_table = TabulatedRadial(r, 0.1 * r**2)
    with pytest.raises(NonconfiningPotential):
        build_polar_grid(ModelParams(1.0, 2, short_table))


def test_tabulated_potential():
    r = np.linspace(0.0, 20.0, 401)
    sp = SelfPropulsion(1.0, 1.0)
    tab = TabulatedRadial(r, sp.value(r))
    x = np.array([0.37, 1.0, 2.21])
    assert np.allclose(tab.value(x), sp.value(x), atol=1e-5)
    assert np.allclose(tab.derivative(x), sp.derivative(x), atol=1e-3)
    with pytest.raises(DomainError):
        tab.value(21.0)
    with pytest.raises(DomainError):
        TabulatedRadial(r + 1.0, r)
    with pytest.raises(DomainError):
        TabulatedRadial(r[::-1], r)
    p = ModelParams(0.5, 2, tab)
    q = ModelParams(0.5, 2, sp)
    c1 = lambda pp: weighted_mean(lambda c, rr: rr * c, build_polar_grid(pp, 64, 64))
    assert c1(p) == pytest.approx(c1(q), rel=1e-5)


def test_model_params_validation():
    for bad in (dict(sigma=0.0), dict(sigma=1.0, dim=4), dict(sigma=1.0, eta=-1.0)):
        with pytest.raises(DomainError):
            ModelParams(**bad)
    with pytest.raises(DomainError):
        SelfPropulsion(0.0, 1.0)


def test_gaussian_moments_and_monte_carlo():
    p = ModelParams(1.0, 2)
    g = build_polar_grid(p, 64, 64)
    Z = sphere_area(0) * integrate_weighted(1.0, g)
    assert Z == pytest.approx(2 * math.pi, rel=1e-12)
    r2 = weighted_mean(lambda c, r: r * r, g)
    assert r2 == pytest.approx(3.0, rel=1e-12)
    rng = np.random.default_rng(11)
    v = rng.standard_normal((10_000_000, 2))
    v[:, 0] += 1.0
    mc = np.mean(np.sum(v * v, axis=1))
    assert abs(mc - r2) / r2 < 1e-3


def test_integrand_error_names_node():
    g = build_polar_grid(ModelParams(1.0, 2), 8, 8)
    vals = np.ones((8, 8))
    vals[3, 5] = np.nan
    with pytest.raises(IntegrandError) as info:
        scaled_integral(vals, g)
    assert info.value.node == (3, 5)
    with pytest.raises(IntegrandError), np.errstate(divide="ignore"):
        integrate_weighted(lambda c, r: 1.0 / (r - r), g)


def test_spectral_convergence():
    p = ModelParams(0.5, 3, SelfPropulsion(1.0, 1.0))
    f = lambda c, r: r**3 * c**2 + np.cos(r)
    vals = [weighted_mean(f, build_polar_grid(p, n, n)) for n in (32, 64, 128)]
    assert abs(vals[2] - vals[1]) < 1e-10 * abs(vals[2])


@settings(max_examples=25, deadline=None)
@given(st.floats(-3.0, 3.0), st.floats(-3.0, 3.0))
def test_integral_is_linear(a, b):
    g = build_polar_grid(ModelParams(0.7, 2, SelfPropulsion(1.0, 1.0)), 16, 16)
    f = lambda c, r: r * c
    h = lambda c, r: r * r
    lhs = integrate_weighted(lambda c, r: a * f(c, r) + b * h(c, r), g)
    rhs = a * integrate_weighted(f, g) + b * integrate_weighted(h, g)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-12)


def test_integral_is_monotone():
    g = build_polar_grid(ModelParams(1.0, 3), 16, 16)
    assert integrate_weighted(lambda c, r: r * r, g) >= integrate_weighted(lambda c, r: r * r * c * c, g)


def test_params_mismatch():
    g = build_polar_grid(ModelParams(1.0, 2), 8, 8)
    with pytest.raises(DomainError):
        integrate_weighted(1.0, g, ModelParams(2.0, 2))

