import numpy as np
import pytest

from renormindex.clifford import matrix_representation, CliffordElement
from renormindex.geometry import build_geometry
from renormindex.operators import (
    SpectralGapError, build_dirac, connection_laplacian, curvature_split, default_kernel_threshold,
    lichnerowicz_residual, spectrum,
)


@pytest.fixture(scope="module")
def sphere_spec(sphere):
    return spectrum(build_dirac(sphere, 0))


def test_flat_untwisted_spectrum_matches_fourier(torus):
    K = 6
    sp = spectrum(build_dirac(torus, 0, fourier_cutoff=K))
    k = np.arange(-K, K + 1)
    oracle = np.sort(np.repeat((k[:, None] ** 2 + k[None, :] ** 2).ravel(), 2))
    assert np.allclose(np.sort(sp.eigenvalues**2), oracle, atol=1e-12)
    # one constant spinor per chirality
    assert (sp.kernel_plus, sp.kernel_minus) == (1, 1)
    assert sp.index == 0


def test_sphere_spectrum_gap(sphere_spec):
    lam = np.abs(sphere_spec.eigenvalues)
    assert sphere_spec.kernel_dimension == 0
    assert lam.min() > 1 - 2 * (np.pi / 32) ** 2
    assert lam.min() == pytest.approx(1.0, abs=1e-3)


def test_sphere_low_eigenvalues_converge_to_integers():
    errs = []
    for N in (16, 32):
        sp = spectrum(build_dirac(build_geometry({"kind": "round_sphere", "resolution": N}), 0))
        lam = np.sort(np.abs(sp.eigenvalues))
        # |lambda| = k with multiplicity 4k (both signs, 2k each)
        expected = np.concatenate([np.full(4 * k, k) for k in (1, 2, 3)])
        errs.append(np.abs(lam[: expected.size] - expected).max())
    assert errs[1] < 0.01
    assert errs[0] / errs[1] > 3.0


@pytest.mark.parametrize("d", [1, 2, 3, -2])
def test_torus_zero_modes(torus, d):
    sp = spectrum(build_dirac(torus, d))
    assert sp.index == d
    assert sp.kernel_dimension == abs(d)
    if d == 1:
        assert (sp.kernel_plus, sp.kernel_minus) == (1, 0)


def test_torus_landau_levels(torus):
    d = 2
    sp = spectrum(build_dirac(torus, d))
    B = 2 * np.pi * d / torus.area()
    nonzero = np.unique(np.round(sp.eigenvalues[np.abs(sp.eigenvalues) > 1e-8] ** 2, 8))
    assert np.allclose(nonzero[:4], 2 * B * np.arange(1, 5))


@pytest.mark.parametrize("geom_name, d", [("torus", 0), ("torus", 3), ("sphere", 0), ("sphere", 2)])
def test_assembly_invariants(request, geom_name, d):
    asm = build_dirac(request.getfixturevalue(geom_name), d)
    assert asm.hermiticity_defect() <= 1e-10
    assert asm.grading_defect() <= 1e-10
    for b in asm.blocks:
        assert np.array_equal(b.chirality**2, np.ones(b.size))


def test_build_errors(cylinder, torus):
    with pytest.raises(ValueError):
        build_dirac(cylinder, 0)
    with pytest.raises(ValueError):
        build_dirac(torus, 9)
    with pytest.raises(ValueError):
        build_dirac(build_geometry({"kind": "flat_torus", "periods": (1.0, 1.0, 1.0)}), 0)


def test_connection_laplacian_flat(torus):
    K = 3
    asm = build_dirac(torus, 0, fourier_cutoff=K)
    lap = connection_laplacian(asm)
    k = np.array([[k1, k2] for k1 in range(-K, K + 1) for k2 in range(-K, K + 1)])
    oracle = np.repeat((k**2).sum(axis=1), 2)
    assert np.allclose(lap, np.diag(oracle))


@pytest.mark.parametrize("geom_name, d", [("torus", 2), ("sphere", 0), ("sphere", 1)])
def test_connection_laplacian_positive(request, geom_name, d):
    asm = build_dirac(request.getfixturevalue(geom_name), d)
    for b in asm.blocks:
        assert np.linalg.eigvalsh(0.5 * (b.laplacian + b.laplacian.conj().T)).min() >= -1e-8


def test_sphere_laplacian_commutes_with_grading(sphere):
    asm = build_dirac(sphere, 0)
    for b in asm.blocks:
        G = np.diag(b.chirality)
        assert np.abs(G @ b.laplacian - b.laplacian @ G).max() < 1e-12


def test_curvature_split_flat(torus):
    s = curvature_split(build_dirac(torus, 0))
    assert all(el == CliffordElement(2) for el in s.spinor.values())
    assert not s.twist.terms


def test_curvature_split_twisted_torus(torus):
    d = 3
    s = curvature_split(build_dirac(torus, d))
    assert all(el == CliffordElement(2) for el in s.spinor.values())
    flux = (1j / (2 * np.pi)) * complex(s.twist[(0, 1)]) * torus.area()
    assert flux == pytest.approx(d, abs=1e-12)
    assert s.commutator_residual <= 1e-12
    assert s.connection_residual <= 1e-12


@pytest.mark.parametrize("d", [0, 2])
def test_curvature_split_sphere(sphere, d):
    s = curvature_split(build_dirac(sphere, d))
    # R^W(e1, e2) = 1/4 (R_2112 e1 e2 + R_1212 e2 e1) = -1/2 e1 e2 for R_1212 = 1
    assert s.spinor[(0, 1)].isclose(CliffordElement.monomial(2, (0, 1), -0.5))
    assert bool(s.twist.terms) == bool(d)
    assert s.connection_residual < 1e-8
    assert s.commutator_residual <= 1e-12


def test_lichnerowicz_torus(torus):
    assert lichnerowicz_residual(build_dirac(torus, 0)) <= 1e-10
    assert lichnerowicz_residual(build_dirac(torus, 2)) <= 1e-8


def test_lichnerowicz_sphere_second_order():
    res = [lichnerowicz_residual(build_dirac(build_geometry({"kind": "round_sphere", "resolution": N}), 0)) for N in (16, 32, 64)]
    ratios = np.array(res[:-1]) / np.array(res[1:])
    assert np.all(np.abs(np.log2(ratios) - 2.0) < 0.2), res


def test_spectral_pairing(sphere_spec):
    for b, lam, vec in zip(sphere_spec.blocks, sphere_spec.block_values, sphere_spec.block_vectors):
        nz = np.abs(lam) > sphere_spec.kernel_threshold
        pos = np.sort(lam[nz & (lam > 0)])
        neg = np.sort(-lam[nz & (lam < 0)])
        assert np.allclose(pos, neg, atol=1e-8)
        # Gamma v_lambda is an eigenvector for -lambda
        G = b.chirality
        for j in np.flatnonzero(nz)[:4]:
            w = G * vec[:, j]
            assert np.linalg.norm(b.D @ w + lam[j] * w) < 1e-8


def test_sphere_lichnerowicz_positivity(sphere_spec):
    h = np.pi / 32
    assert (sphere_spec.eigenvalues**2).min() >= 2.0 / 4 - h**2


def test_spectrum_residuals_and_cap(torus):
    asm = build_dirac(torus, 0, fourier_cutoff=4)
    sp = spectrum(asm)
    D = asm.D
    V = sp.eigenvectors
    lam = np.concatenate(sp.block_values)
    assert np.abs(D @ V - V * lam).max() < 1e-8
    with pytest.raises(ValueError):
        spectrum(build_dirac(torus, 2), size_cap=1)


def test_ambiguous_gap_reports_candidates():
    with pytest.raises(SpectralGapError) as exc:
        default_kernel_threshold(np.array([1e-7, 5e-7, 1.0, 2.0]), ratio=1e7)
    assert len(exc.value.candidates) == 2
