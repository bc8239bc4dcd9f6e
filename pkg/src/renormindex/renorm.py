"""Finite-part integrals, renormalized traces and the eta integral.

On the b-cylinder ``[0, 1]_x x S^1`` with density ``dx/x dtheta`` the
weighted integral ``G(z) = int rho^z f dmu`` of a function smooth in ``x``
is meromorphic with at most simple poles on ``z = 0, -1, -2, ...`` (double
poles appear when ``f`` has ``log x`` terms).  The finite part at ``z = 0``
is extracted from samples of ``G`` at real ``z`` to the right of all poles
by least squares on the known pole lattice; pole detection uses a free
AAA rational fit, so it does not assume the lattice.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.integrate
import scipy.interpolate

from .geometry import ModelGeometry
from .operators import DiracAssembly, SpectralData, spectrum

__all__ = [
    "LaurentData",
    "PoleInfo",
    "EtaResult",
    "regularized_integral",
    "pole_structure",
    "renormalized_supertrace",
    "b_heat_kernel",
    "b_heat_trace",
    "truncated_integral",
    "eta_integral",
    "supercommutator",
    "graded_trace",
    "DEGENERACY_INDEX",
]

log = logging.getLogger(__name__)

Z_SAMPLES = np.linspace(0.25, 3.0, 24)
# number of weighted directions per model (the b-cylinder has one boundary face)
DEGENERACY_INDEX = {"flat_torus": 0, "round_sphere": 0, "b_cylinder": 1}


@dataclass
class LaurentData:
    pole_order: int
    poles: list  # [c_{-p}, ..., c_{-1}]
    finite_part: float
    z: np.ndarray = field(default_factory=lambda: np.zeros(0))
    samples: np.ndarray = field(default_factory=lambda: np.zeros(0))
    residual: float = 0.0
    degeneracy: int = 0

    def laurent(self, z):
        """Principal part plus finite part (the regular remainder is not kept)."""
        z = np.asarray(z, dtype=float)
        p = self.pole_order
        return self.finite_part + sum(c * z ** -(p - k) for k, c in enumerate(self.poles))


def _radial_profile(f, geom: ModelGeometry) -> Callable:
    """``x -> int f(x, theta) dtheta`` for a callable on the b-cylinder."""
    theta = geom.axes[1]
    dth = geom.spacing[1]

    def prof(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        vals = f(x[:, None], theta[None, :])
        return np.broadcast_to(np.asarray(vals, dtype=float), (len(x), len(theta))).sum(axis=1) * dth

    return prof


def _grid_G(values, geom):
    """``G(z)`` for grid data: spline in ``s = log x`` plus a power-series tail below the grid."""
    vals = np.asarray(values, dtype=float).reshape(geom.resolution)
    prof = vals.sum(axis=1) * geom.spacing[1]
    x = geom.axes[0]
    s = np.log(x)
    spline = scipy.interpolate.CubicSpline(s, prof)
    # tail: fit prof ~ sum a_j x^j on the smallest x samples
    k = min(4, len(x) - 1)
    a = np.polynomial.polynomial.polyfit(x[: k + 2], prof[: k + 2], k)
    x0 = x[0]

    def G(z):
        body = scipy.integrate.quad(lambda u: np.exp(z * u) * spline(u), s[0], 0.0, limit=200, epsabs=1e-14, epsrel=1e-12)[0]
        tail = sum(aj * x0 ** (z + j) / (z + j) for j, aj in enumerate(a))
        return body + tail

    return G


def _callable_G(prof):
    def G(z):
        # substitute x = e^u: int_0^1 x^{z-1} f dx = int_{-inf}^0 e^{z u} f(e^u) du;
        # below u = -60/z the weight is under e^-60 (and x stays a normal float)
        lower = -max(60.0 / z, 60.0)
        return scipy.integrate.quad(lambda u: np.exp(z * u) * prof(np.exp(u))[0], lower, 0.0, limit=400, epsabs=1e-14, epsrel=1e-13)[0]

    return G


def _sample_G(f, geom, z):
    if callable(f):
        G = _callable_G(_radial_profile(f, geom))
    else:
        G = _grid_G(f, geom)
    return np.array([G(zz) for zz in z])


def regularized_integral(f, geom: ModelGeometry, *, z=None, max_pole_order: int = 2, lattice: int = 8, poly_degree: int = 2, tol: float = 1e-8) -> LaurentData:
    """Laurent data at ``z = 0`` of ``G(z) = int rho^z f dmu``.

    ``f`` is a callable ``f(x, theta)`` or an array on the geometry grid.
    Closed models return the ordinary integral with no pole.
    """
    if not geom.has_boundary:
        vals = f(*np.meshgrid(*geom.axes, indexing="ij")) if callable(f) else np.asarray(f)
        return LaurentData(pole_order=0, poles=[], finite_part=complex(geom.integrate(vals)).real, degeneracy=0)
    z = Z_SAMPLES if z is None else np.asarray(z, dtype=float)
    Gz = _sample_G(f, geom, z)
    cols = [1.0 / (z + j) for j in range(lattice)]
    if max_pole_order >= 2:
        cols.append(1.0 / z**2)
    cols += [z**k for k in range(poly_degree + 1)]
    A = np.stack(cols, axis=1)
    scale = np.abs(A).max(axis=0)
    coef, *_ = np.linalg.lstsq(A / scale, Gz, rcond=None)
    coef = coef / scale
    resid = float(np.abs(A @ coef - Gz).max())
    if resid > tol * max(1.0, float(np.abs(Gz).max())):
        raise ValueError(f"regularized integral fit residual {resid:.2e} exceeds tolerance")
    simple = coef[:lattice]
    double = coef[lattice] if max_pole_order >= 2 else 0.0
    poly = coef[lattice + (1 if max_pole_order >= 2 else 0):]
    fp = float(sum(simple[j] / j for j in range(1, lattice)) + poly[0])
    thr = 1e-8 * max(1.0, float(np.abs(Gz).max()))
    c1 = float(simple[0]) if abs(simple[0]) > thr else 0.0
    c2 = float(double) if abs(double) > thr else 0.0
    if c2:
        order, poles = 2, [c2, c1]
    elif c1:
        order, poles = 1, [c1]
    else:
        order, poles = 0, []
    return LaurentData(
        pole_order=order, poles=poles, finite_part=fp, z=z, samples=Gz, residual=resid,
        degeneracy=DEGENERACY_INDEX[geom.kind],
    )


@dataclass
class PoleInfo:
    location: float
    order: int
    residue: complex


def pole_structure(f, geom: ModelGeometry, window=(-2.5, 0.5), *, z=None, tol: float = 1e-9, min_residue: float = 1e-6) -> list:
    """Poles of ``G(z)`` in ``window`` from an AAA rational fit of the samples.

    Nearly coincident poles are merged and reported with their multiplicity.
    """
    if geom.kind != "b_cylinder":
        raise ValueError("pole structure is defined for the b-cylinder")
    z = Z_SAMPLES if z is None else np.asarray(z, dtype=float)
    Gz = _sample_G(f, geom, z)
    scale = max(1.0, float(np.abs(Gz).max()))
    if np.abs(Gz).max() < 1e-14:
        return []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        r = scipy.interpolate.AAA(z, Gz)
    fit_err = float(np.abs(r(z) - Gz).max())
    if fit_err > tol * scale:
        raise ValueError(f"rational fit residual {fit_err:.2e} too large; pole detection unreliable")
    poles, res = r.poles(), r.residues()
    keep = (np.abs(poles.imag) < 1e-3) & (poles.real > window[0]) & (poles.real < window[1])
    poles, res = poles[keep].real, res[keep]
    order = np.argsort(poles)
    poles, res = poles[order], res[order]
    out = []
    i = 0
    while i < len(poles):
        j = i
        while j + 1 < len(poles) and abs(poles[j + 1] - poles[i]) < 1e-4:
            j += 1
        group = slice(i, j + 1)
        weight = np.abs(res[group]).max()
        if weight > min_residue * scale:
            out.append(PoleInfo(location=float(poles[group].mean()), order=j - i + 1, residue=complex(res[group].sum())))
        i = j + 1
    return out


def truncated_integral(f, geom: ModelGeometry, eps: float) -> float:
    """``int_{x > eps} f dmu`` on the b-cylinder (diverges like ``c_{-1} log(1/eps)``)."""
    prof = _radial_profile(f, geom)
    return scipy.integrate.quad(lambda u: prof(np.exp(u))[0], np.log(eps), 0.0, limit=200, epsabs=1e-13)[0]


# --- traces ----------------------------------------------------------------------

def b_heat_kernel(geom: ModelGeometry, t, terms: int = 200):
    """Diagonal scalar heat kernel of the complete b-metric (a half-infinite flat cylinder in ``log x``).

    Product of the line kernel ``(4 pi t)^{-1/2}`` and the circle kernel
    ``L^{-1} sum_k exp(-t (2 pi k / L)^2)``; it is constant on the grid.
    """
    from .heat import HeatKernelGrid

    if geom.kind != "b_cylinder":
        raise ValueError("b heat kernel needs the b-cylinder")
    times = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(times <= 0):
        raise ValueError("t must be positive")
    L = geom.params["boundary_length"]
    k = np.arange(-terms, terms + 1)
    diag = np.array([(4 * np.pi * tt) ** -0.5 * np.exp(-tt * (2 * np.pi * k / L) ** 2).sum() / L for tt in times])
    npts = int(np.prod(geom.resolution))
    values = np.repeat(diag[:, None], npts, axis=1)
    return HeatKernelGrid(times=times, points=geom.points(), values=values, diagonal=True, spectral=None, weights=None, grading=None, geometry=geom)


def renormalized_supertrace(kernel, grading=None, geom: ModelGeometry | None = None) -> np.ndarray:
    """Finite part at ``z = 0`` of ``int rho^z tr_s k(x, x) dmu``, one value per kernel time.

    Without grading (``grading=False`` or no grading data) the plain trace is
    renormalized.
    """
    geom = geom or kernel.geometry
    if not geom.has_boundary:
        g = kernel.grading if grading is None else grading
        if g is False or g is None:
            return np.asarray(kernel.trace(), dtype=float)
        return (kernel.values * kernel.weights * np.asarray(g)).sum(axis=-1).real
    out = []
    for vals in kernel.values:
        v = np.asarray(vals, dtype=float)
        if grading is not None and grading is not False:
            v = v * np.asarray(grading)
        out.append(regularized_integral(v.reshape(geom.resolution), geom).finite_part)
    return np.array(out)


def b_heat_trace(geom: ModelGeometry, t) -> np.ndarray:
    return renormalized_supertrace(b_heat_kernel(geom, t), grading=False, geom=geom)


def graded_trace(M: np.ndarray, grading: np.ndarray) -> complex:
    return complex(np.sum(np.diag(M) * grading))


def supercommutator(A: np.ndarray, B: np.ndarray, grading: np.ndarray) -> np.ndarray:
    """``[A, B]_s`` for homogeneous ``A``, ``B`` (parity read off from the grading)."""

    def parity(M):
        even = np.abs(M - grading[:, None] * M * grading[None, :]).max()
        odd = np.abs(M + grading[:, None] * M * grading[None, :]).max()
        if even < 1e-12:
            return 0
        if odd < 1e-12:
            return 1
        raise ValueError("supercommutator needs homogeneous operators")

    sign = (-1) ** (parity(A) * parity(B))
    return A @ B - sign * (B @ A)


# --- eta ---------------------------------------------------------------------------

@dataclass
class EtaResult:
    value: float
    error: float
    integrand_max: float
    tail_bound: float
    gap: float
    times: np.ndarray = field(repr=False, default=None)
    integrand: np.ndarray = field(repr=False, default=None)

    @property
    def gapped(self) -> bool:
        return self.gap > 0


def eta_integral(assembly, T_max: float = 10.0, nodes: int = 64) -> EtaResult:
    """``1/2 int_0^T Tr_s([D, D exp(-tD^2)]_s) dt`` with a spectral tail bound.

    The supercommutator of two odd operators is ``2 D^2 exp(-tD^2)``; its
    supertrace is evaluated per block in the eigenbasis.
    """
    spec = assembly if isinstance(assembly, SpectralData) else spectrum(assembly)
    if spec.assembly is not None and spec.assembly.geometry.has_boundary:
        raise ValueError("b-models use the renormalized diagnostic, not the closed eta integral")
    rows = []
    for b, lam, vec in zip(spec.blocks, spec.block_values, spec.block_vectors):
        chir = np.einsum("ik,i,ik->k", vec.conj(), b.chirality, vec).real
        rows.append((b.multiplicity, lam**2, chir))

    def integrand(t):
        return sum(m * float(np.sum(l2 * np.exp(-t * l2) * c)) for m, l2, c in rows)

    def rule(k):
        x, w = np.polynomial.legendre.leggauss(k)
        ts = 0.5 * T_max * (x + 1)
        vals = np.array([integrand(t) for t in ts])
        return float(0.5 * T_max * (w @ vals)), ts, vals

    full, ts, vals = rule(nodes)
    coarse, *_ = rule(nodes // 2)
    nonzero = np.concatenate([l2[l2 > spec.kernel_threshold**2] for _, l2, _ in rows]) if rows else np.zeros(0)
    gap = float(np.sqrt(nonzero.min())) if nonzero.size else 0.0
    tail = sum(m * float(np.sum(np.abs(c[l2 > spec.kernel_threshold**2]) * np.exp(-T_max * l2[l2 > spec.kernel_threshold**2]))) for m, l2, c in rows)
    if gap == 0.0:
        log.warning("no spectral gap: eta tail is not controlled")
    return EtaResult(
        value=0.5 * full, error=0.5 * abs(full - coarse) + 0.5 * tail, integrand_max=float(np.abs(vals).max()),
        tail_bound=0.5 * tail, gap=gap, times=ts, integrand=vals,
    )
