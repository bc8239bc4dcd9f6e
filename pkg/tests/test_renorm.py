import numpy as np
import pytest
from scipy.integrate import quad

from renormindex.geometry import build_geometry
from renormindex.heat import spectral_heat_kernel
from renormindex.operators import build_dirac, spectrum
from renormindex.renorm import (
    b_heat_kernel, b_heat_trace, eta_integral, graded_trace, pole_structure, regularized_integral,
    renormalized_supertrace, supercommutator, truncated_integral,
)


@pytest.fixture(scope="module")
def unit_cyl():
    # boundary circle of length 1, so the theta integral is the identity
    return build_geometry({"kind": "b_cylinder", "boundary_length": 1.0})


def ones(x, th):
    return np.ones(np.broadcast(x, th).shape)


def test_constant_has_simple_pole(unit_cyl):
    data = regularized_integral(ones, unit_cyl)
    assert data.pole_order == 1
    assert data.poles[0] == pytest.approx(1.0, abs=1e-8)
    assert data.finite_part == pytest.approx(0.0, abs=1e-8)
    assert data.degeneracy == 1


@pytest.mark.parametrize("m", [1, 2, 3])
def test_power_finite_parts(unit_cyl, m):
    data = regularized_integral(lambda x, th: x**m + 0 * th, unit_cyl)
    assert data.pole_order == 0
    assert data.finite_part == pytest.approx(1.0 / m, abs=1e-8)
    assert data.laurent(0.0) == pytest.approx(data.finite_part)


def test_log_gives_double_pole(unit_cyl):
    # int_0^1 x^{z-1} log x dx = -1/z^2
    data = regularized_integral(lambda x, th: np.log(x) + 0 * th, unit_cyl)
    assert data.pole_order == 2
    assert data.poles[0] == pytest.approx(-1.0, abs=1e-8)
    assert data.finite_part == pytest.approx(0.0, abs=1e-8)


def test_finite_part_against_oracle(cylinder):
    L = cylinder.params["boundary_length"]
    f = lambda x, th: np.exp(-x) * (1 + 0.3 * np.cos(th))
    fp = regularized_integral(f, cylinder).finite_part
    # finite part of int_0^1 x^{z-1} e^{-x} dx at z = 0 is int_0^1 (e^{-x} - 1)/x dx
    oracle = L * quad(lambda x: np.expm1(-x) / x, 0, 1, epsabs=1e-14)[0]
    assert fp == pytest.approx(oracle, abs=1e-8)


def test_support_away_from_boundary_is_ordinary(unit_cyl):
    bump = lambda x, th: np.where(x > 0.5, (x - 0.5) ** 3 * (1 - x) ** 2, 0.0) + 0 * th
    data = regularized_integral(bump, unit_cyl)
    plain = quad(lambda x: (x - 0.5) ** 3 * (1 - x) ** 2 / x, 0.5, 1)[0]
    assert data.pole_order == 0
    assert data.finite_part == pytest.approx(plain, abs=1e-8)


def test_finite_part_linear(cylinder):
    f = lambda x, th: np.exp(-x) + 0 * th
    g = lambda x, th: x * np.cos(th) ** 2
    a = regularized_integral(f, cylinder).finite_part
    b = regularized_integral(g, cylinder).finite_part
    ab = regularized_integral(lambda x, th: f(x, th) - 2.5 * g(x, th), cylinder).finite_part
    assert ab == pytest.approx(a - 2.5 * b, abs=1e-8)


def test_grid_input(unit_cyl):
    X, TH = np.meshgrid(*unit_cyl.axes, indexing="ij")
    data = regularized_integral(X + 1.0, unit_cyl)
    # spline-limited accuracy on sampled data
    assert data.finite_part == pytest.approx(1.0, abs=1e-5)
    assert data.pole_order == 1


def test_closed_model_is_ordinary_integral(sphere):
    data = regularized_integral(lambda th, ph: np.cos(th) ** 2, sphere)
    assert data.pole_order == 0
    assert data.finite_part == pytest.approx(4 * np.pi / 3, abs=1e-8)


def test_constant_pole_only_at_zero(unit_cyl):
    poles = pole_structure(ones, unit_cyl, window=(-0.5, 0.5))
    assert len(poles) == 1
    assert poles[0].location == pytest.approx(0.0, abs=1e-6)
    assert poles[0].order == 1


@pytest.mark.parametrize("m", [1, 2, 3])
def test_pole_at_minus_m(unit_cyl, m):
    poles = pole_structure(lambda x, th: x**m + 0 * th, unit_cyl, window=(-m - 0.5, 0.5))
    assert [round(p.location, 6) for p in poles] == [-m]


def test_no_pole_for_second_order_vanishing(unit_cyl):
    poles = pole_structure(lambda x, th: x**2 * np.exp(x) + 0 * th, unit_cyl, window=(-2.5, 0.5))
    assert all(p.location <= -2 + 1e-3 for p in poles)


def test_pole_structure_needs_boundary(torus):
    with pytest.raises(ValueError):
        pole_structure(ones, torus)


def test_log_divergence_matches_residue(unit_cyl):
    f = lambda x, th: (1 + x) + 0 * th
    c1 = regularized_integral(f, unit_cyl).poles[-1]
    # the regular part contributes O(eps) to the difference
    a, b = truncated_integral(f, unit_cyl, 1e-6), truncated_integral(f, unit_cyl, 1e-9)
    assert (b - a) / np.log(1e3) == pytest.approx(c1, rel=1e-6)


def test_b_heat_trace_vanishes(cylinder):
    assert np.abs(b_heat_trace(cylinder, [0.1, 0.5, 1.0])).max() < 1e-8


def test_b_heat_kernel_product_formula(cylinder):
    L = cylinder.params["boundary_length"]
    t = 0.3
    k = np.arange(-200, 201)
    expected = (4 * np.pi * t) ** -0.5 * np.exp(-t * (2 * np.pi * k / L) ** 2).sum() / L
    assert np.allclose(b_heat_kernel(cylinder, t).values, expected)
    with pytest.raises(ValueError):
        b_heat_kernel(cylinder, 0.0)


@pytest.mark.parametrize("d", [0, 3])
def test_closed_renormalized_supertrace(torus, d):
    k = spectral_heat_kernel(spectrum(build_dirac(torus, d)), [0.1, 0.5, 1.0])
    assert np.allclose(renormalized_supertrace(k), d, atol=1e-8)


def test_mckean_singer_constancy(sphere):
    sp = spectrum(build_dirac(sphere, 2))
    vals = renormalized_supertrace(spectral_heat_kernel(sp, np.linspace(0.1, 2.0, 12)))
    assert np.ptp(vals) <= 1e-8
    assert vals[0] == pytest.approx(sp.heat_supertrace(0.1), abs=1e-8)


def test_supercommutator_trace_vanishes(rng):
    g = np.r_[np.ones(4), -np.ones(4)]

    def homogeneous(odd):
        M = rng.normal(size=(8, 8)) + 1j * rng.normal(size=(8, 8))
        mask = (g[:, None] * g[None, :] < 0) if odd else (g[:, None] * g[None, :] > 0)
        return M * mask

    for pa in (0, 1):
        for pb in (0, 1):
            c = supercommutator(homogeneous(pa), homogeneous(pb), g)
            assert abs(graded_trace(c, g)) < 1e-10
    with pytest.raises(ValueError):
        supercommutator(rng.normal(size=(8, 8)), homogeneous(0), g)


@pytest.mark.parametrize("d", [-3, 0, 2])
def test_eta_vanishes_on_torus(torus, d):
    eta = eta_integral(build_dirac(torus, d))
    assert abs(eta.value) <= 1e-10
    assert eta.integrand_max <= 1e-10
    assert eta.gapped


def test_eta_vanishes_on_sphere(sphere):
    sp = spectrum(build_dirac(sphere, 0))
    eta = eta_integral(sp)
    assert abs(eta.value) <= 1e-10
    assert sp.heat_supertrace(50.0) == pytest.approx(sp.index, abs=1e-10)
