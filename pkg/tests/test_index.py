import json

import numpy as np
import pytest

from renormindex.geometry import build_geometry
from renormindex.index import (
    IndexReport, gauge_invariance_check, geometric_integral, psc_obstruction_check, spectral_index,
    verify_index_theorem,
)
from renormindex.operators import SpectralGapError, build_dirac, default_kernel_threshold, spectrum


@pytest.mark.parametrize("d", [0, 3, -2])
def test_spectral_index_torus(torus, d):
    assert spectral_index(spectrum(build_dirac(torus, d))) == d


def test_ambiguous_gap_is_reported():
    with pytest.raises(SpectralGapError) as info:
        default_kernel_threshold(np.array([5e-7, 2e-6, 1.0]))
    assert len(info.value.candidates) == 2


@pytest.mark.parametrize("d", range(-3, 4))
def test_index_theorem_torus(torus, d):
    rep = verify_index_theorem(torus, d)
    assert rep.passed, rep.residuals
    assert rep.spectral_index == d
    assert rep.geometric == pytest.approx(d, abs=1e-12)
    assert np.allclose(rep.supertraces, d, atol=1e-8)
    assert rep.eta == pytest.approx(0.0, abs=1e-10)


@pytest.mark.parametrize("d", [0, 2, -1])
def test_index_theorem_sphere(sphere, d):
    rep = verify_index_theorem(sphere, d)
    assert rep.passed, rep.residuals
    assert rep.spectral_index == d
    assert rep.geometric == pytest.approx(d, abs=1e-10)


def test_mckean_singer_window(torus):
    rep = verify_index_theorem(torus, 1, np.linspace(0.1, 2.0, 9))
    assert rep.residuals["mckean_singer_drift"] <= 1e-8


def test_report_json_roundtrip(torus):
    rep = verify_index_theorem(torus, 1)
    data = json.loads(rep.to_json())
    assert data["passed"] is True
    assert data["spectral_index"] == 1
    assert set(data["residuals"]) >= {"geometric_vs_spectral", "mckean_singer_drift", "eta"}
    assert data["geometry"]["kind"] == "flat_torus"
    # identical inputs, identical bytes
    assert verify_index_theorem(torus, 1).to_json() == rep.to_json()


def test_failing_tolerance_keeps_residuals(sphere):
    rep = verify_index_theorem(sphere, 1, tolerances={"geometric": 1e-300})
    assert isinstance(rep, IndexReport)
    assert not rep.passed
    assert rep.residuals["geometric_vs_spectral"] is not None


def test_bad_inputs(torus):
    with pytest.raises(ValueError):
        verify_index_theorem(torus, 0, [0.0])
    with pytest.raises(ValueError):
        verify_index_theorem(torus, 0, tolerances={"eta": -1.0})


def test_subpipeline_failure_has_context():
    cube = build_geometry({"kind": "flat_torus", "periods": [1.0, 1.0, 1.0]})
    with pytest.raises(RuntimeError, match="d=1"):
        verify_index_theorem(cube, 1)


def test_b_cylinder_is_diagnostic(cylinder):
    rep = verify_index_theorem(cylinder, 0)
    assert rep.branch == "diagnostic"
    assert rep.checks == {}
    assert not rep.passed
    assert all(np.isfinite(rep.supertraces))
    with pytest.raises(ValueError):
        verify_index_theorem(cylinder, 1)


def test_psc_sphere(sphere):
    rep = psc_obstruction_check(sphere)
    assert rep.passed, rep.checks
    assert rep.min_abs_eigenvalue >= np.sqrt(2) / 2
    assert rep.min_abs_eigenvalue == pytest.approx(1.0, abs=2 * rep.grid_spacing**2)
    assert rep.spectral_index == 0
    assert rep.geometric_a_hat == 0.0


def test_psc_rejects_flat(torus):
    with pytest.raises(ValueError):
        psc_obstruction_check(torus)


def test_sphere_a_hat_integral_vanishes(sphere):
    assert geometric_integral(sphere) == 0.0


@pytest.mark.parametrize("d,winding", [(2, (1, 0)), (-3, (2, -1))])
def test_gauge_invariance(torus, d, winding):
    out = gauge_invariance_check(torus, d, winding)
    assert out["passed"]
    assert out["index"] == (d, d)


def test_grid_refinement_stability():
    for d in (0, 2):
        inds = []
        for n in (16, 32):
            g = build_geometry({"kind": "round_sphere", "resolution": (n, n)})
            inds.append(spectral_index(spectrum(build_dirac(g, d))))
        assert inds == [d, d]
