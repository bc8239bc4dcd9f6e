"""Heat kernels: Gaussian ansatz, parametrix recursion, exact spectral kernels.

The parametrix is computed along geodesics from a centre ``x0`` for
isotropic models (flat tori, round sphere) and along the line for the
circle, where a potential ``V`` may break the isotropy:

    Phi_0 = J^{-1/2},
    Phi_i(p) = -J(p)^{-1/2} int_0^1 J(sp)^{1/2} (H Phi_{i-1})(sp) s^{i-1} ds

with ``H = Delta + V`` acting on radial profiles.  Parallel transport is
the identity for scalar operators and for the untwisted flat spin bundle,
which are the cases handled here.  Profiles are Chebyshev series on
``[-R, R]``; the s-integral uses Gauss-Legendre quadrature.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from numpy.polynomial import chebyshev as C

from .geometry import ModelGeometry, normal_coordinates
from .operators import DiracAssembly, SpectralData

__all__ = [
    "gaussian_q",
    "LaplaceTypeOperator",
    "HeatExpansion",
    "TraceFit",
    "HeatKernelGrid",
    "ParametrixKernel",
    "parametrix_coefficients",
    "parametrix_kernel",
    "spectral_heat_kernel",
    "heat_trace_expansion",
    "schwartz_decay_check",
    "duhamel_terms",
    "semigroup_defect",
    "heat_equation_residual",
    "initial_condition_defect",
    "DecayReport",
]

log = logging.getLogger(__name__)

GL_NODES = 32


def gaussian_q(geom: ModelGeometry, x, y, t: float) -> np.ndarray:
    """``(4 pi t)^{-n/2} exp(-d(x, y)^2 / 4t)`` with the model's geodesic distance."""
    if t <= 0:
        raise ValueError("t must be positive")
    d = geom.distance(x, y)
    return (4 * np.pi * t) ** (-geom.dimension / 2) * np.exp(-(d**2) / (4 * t))


# --- scalar Laplace-type operators ------------------------------------------

@dataclass
class LaplaceTypeOperator:
    """``H = Delta_g + V`` on functions of a model geometry.

    ``potential`` is only supported on the circle (1-dimensional torus);
    the sphere and higher tori use the pure Laplacian, whose spectrum is
    known in closed form.
    """

    geometry: ModelGeometry
    potential: Callable | None = None
    fourier_cutoff: int = 256

    def __post_init__(self):
        g = self.geometry
        if g.kind == "b_cylinder":
            raise ValueError("no discrete spectrum on the b-cylinder; see renorm.b_heat_trace")
        if self.potential is not None and not (g.kind == "flat_torus" and g.dimension == 1):
            raise NotImplementedError("potentials are supported on the circle only")

    def spectrum(self) -> SpectralData:
        g = self.geometry
        K = int(self.fourier_cutoff)
        if g.kind == "round_sphere":
            r = g.params["radius"]
            ls = np.arange(K + 1)
            lam = np.repeat(ls * (ls + 1) / r**2, 2 * ls + 1).astype(float)
            return _laplace_data(lam, None, None)
        periods = g.params["periods"]
        if g.dimension == 1:
            L = periods[0]
            ks = np.arange(-K, K + 1)
            H = np.diag((2 * np.pi * ks / L) ** 2).astype(complex)
            if self.potential is not None:
                H += _potential_matrix(self.potential, L, ks)
            lam, vec = np.linalg.eigh(H)

            def basis(points, order=0):
                x = np.asarray(points, dtype=float).reshape(-1)
                kk = 2 * np.pi * ks / L
                return (1j * kk) ** order * np.exp(1j * np.outer(x, kk)) / np.sqrt(L)

            return _laplace_data(lam, vec, basis, H)
        grids = np.meshgrid(*[(2 * np.pi * np.arange(-K, K + 1) / L) ** 2 for L in periods], indexing="ij")
        lam = np.sort(sum(grids).ravel())
        return _laplace_data(lam, None, None)

    def radial_profile_operator(self, x0):
        """``(w, V)`` such that ``H f = -f'' - w(p) f' + V(p) f`` on profiles in the chart."""
        g = self.geometry
        n = g.dimension
        if g.kind == "round_sphere":
            r = g.params["radius"]
            w = lambda p: (n - 1) / (r * np.tan(p / r))
        elif n == 1:
            w = lambda p: np.zeros_like(p)
        else:
            w = lambda p: (n - 1) / p
        if self.potential is None:
            V = lambda p: np.zeros_like(p)
        else:
            x0 = float(np.atleast_1d(x0)[0])
            V = lambda p: np.asarray(self.potential(x0 + p), dtype=float)
        return w, V


def _potential_matrix(potential, L, ks):
    M = 8 * len(ks)
    x = np.arange(M) * L / M
    vhat = np.fft.fft(np.asarray(potential(x), dtype=complex)) / M
    diff = ks[:, None] - ks[None, :]
    return vhat[diff % M]


def _laplace_data(lam, vec, basis, H=None) -> SpectralData:
    return SpectralData(
        eigenvalues=np.asarray(lam, dtype=float),
        block_values=[np.asarray(lam, dtype=float)],
        block_vectors=[vec],
        blocks=[],
        kernel_threshold=0.0,
        kernel_plus=0,
        kernel_minus=0,
        kind="laplace",
        basis=basis,
        operator=H,
    )


# --- parametrix ---------------------------------------------------------------

@dataclass
class TraceFit:
    coefficients: np.ndarray
    covariance: np.ndarray
    t_range: tuple
    condition: float
    drift: np.ndarray  # relative change of each coefficient when the t-range is halved
    residual: float

    @property
    def stable(self) -> bool:
        return bool(np.all(self.drift < 0.01))


@dataclass
class HeatExpansion:
    """Parametrix coefficients ``Phi_0..Phi_N`` on a chart line through ``x0``.

    ``phi[i]`` has shape ``(len(grid), r, r)``; ``series[i]`` is the
    scalar Chebyshev profile (the endomorphism part is ``profile * identity``).
    """

    order: int
    x0: np.ndarray
    dimension: int
    radius: float
    grid: np.ndarray
    phi: np.ndarray
    series: list = field(repr=False)
    rank: int = 1
    operator: object = field(default=None, repr=False)
    fitted: TraceFit | None = None

    def at(self, i: int, p) -> np.ndarray:
        """Scalar profile of ``Phi_i`` at chart coordinate ``p``."""
        return self.series[i](np.asarray(p, dtype=float))


def _cheb_fit(values_fn, R, deg):
    nodes = np.cos((np.arange(deg + 1) + 0.5) * np.pi / (deg + 1))  # first kind, no node at 0 for odd deg
    p = R * nodes
    f = C.Chebyshev.fit(p, values_fn(p), deg, domain=[-R, R])
    # chop round-off so constants stay exact constants
    tol = 1e-14 * max(1.0, float(np.abs(f.coef).max()))
    f.coef[np.abs(f.coef) < tol] = 0.0
    return f.trim()


def parametrix_coefficients(operator, x0, N: int, radius: float | None = None, degree: int = 63) -> HeatExpansion:
    """Solve the transport recursion for ``Phi_0..Phi_N`` around ``x0``.

    ``operator`` is a :class:`LaplaceTypeOperator` or an untwisted flat-torus
    :class:`DiracAssembly` (whose square is the flat Laplacian on spinors).
    """
    if N < 0 or N > 4:
        raise ValueError("parametrix order N must be in 0..4")
    rank = 1
    if isinstance(operator, DiracAssembly):
        geom = operator.geometry
        if geom.kind != "flat_torus" or operator.twist_degree != 0:
            raise NotImplementedError("spinor parametrix is implemented for the untwisted flat torus")
        rank = 2
        operator = LaplaceTypeOperator(geom)
    geom = operator.geometry
    chart = normal_coordinates(geom, np.atleast_1d(x0), radius if radius is not None else 0.8 * geom.injectivity_radius())
    R = chart.radius
    if degree % 2 == 0:
        degree += 1  # keeps p = 0 off the collocation nodes
    w, V = operator.radial_profile_operator(x0)
    J = chart.radial_jacobian
    s, ws = np.polynomial.legendre.leggauss(GL_NODES)
    s, ws = 0.5 * (s + 1), 0.5 * ws

    def apply_H(f):
        d1, d2 = f.deriv(1), f.deriv(2)
        return _cheb_fit(lambda p: -d2(p) - w(p) * d1(p) + V(p) * f(p), R, degree)

    series = [_cheb_fit(lambda p: J(p) ** -0.5, R, degree)]
    for i in range(1, N + 1):
        Hf = apply_H(series[-1])

        def phi_i(p, Hf=Hf, i=i):
            sp = np.outer(p, s)
            integrand = J(sp) ** 0.5 * Hf(sp) * s ** (i - 1)
            return -J(p) ** -0.5 * (integrand @ ws)

        series.append(_cheb_fit(phi_i, R, degree))
    grid = np.linspace(-R, R, 201)
    phi = np.stack([f(grid)[:, None, None] * np.eye(rank) for f in series])
    return HeatExpansion(
        order=N, x0=np.atleast_1d(np.asarray(x0, dtype=float)), dimension=geom.dimension, radius=R,
        grid=grid, phi=phi, series=series, rank=rank, operator=operator,
    )


def _smooth_step(u):
    """C-infinity step: 0 for u <= 0, 1 for u >= 1."""
    u = np.clip(u, 0.0, 1.0)
    a = np.where(u > 0, np.exp(-1.0 / np.where(u > 0, u, 1.0)), 0.0)
    b = np.where(u < 1, np.exp(-1.0 / np.where(u < 1, 1 - u, 1.0)), 0.0)
    return a / (a + b)


@dataclass
class ParametrixKernel:
    """``G_N(t, p) = chi(p) q(t, p) sum_i t^i Phi_i(p)`` on the chart line."""

    expansion: HeatExpansion
    cutoff: float

    def chi(self, p):
        p = np.abs(np.asarray(p, dtype=float))
        return _smooth_step((self.cutoff - p) / (0.5 * self.cutoff))

    def _check(self, p):
        if np.any(np.abs(p) > self.expansion.radius + 1e-12):
            raise ValueError("evaluation outside the chart")

    def __call__(self, t: float, p) -> np.ndarray:
        if t <= 0:
            raise ValueError("t must be positive")
        p = np.asarray(p, dtype=float)
        self._check(p)
        n = self.expansion.dimension
        q = (4 * np.pi * t) ** (-n / 2) * np.exp(-(p**2) / (4 * t))
        series = sum(t**i * f(p) for i, f in enumerate(self.expansion.series))
        return self.chi(p) * q * series

    def remainder(self, t: float, p) -> np.ndarray:
        """``(d_t + H) G_N`` evaluated with exact derivatives of ``q`` and of the profiles."""
        p = np.asarray(p, dtype=float)
        self._check(p)
        exp = self.expansion
        n = exp.dimension
        w, V = exp.operator.radial_profile_operator(exp.x0)
        ser = [f for f in exp.series]
        Phi = sum(t**i * f(p) for i, f in enumerate(ser))
        dPhi = sum(t**i * f.deriv(1)(p) for i, f in enumerate(ser))
        d2Phi = sum(t**i * f.deriv(2)(p) for i, f in enumerate(ser))
        Phi_t = sum(i * t ** (i - 1) * f(p) for i, f in enumerate(ser) if i)
        h = 1e-4
        chi = self.chi(p)
        chi1 = (self.chi(p + h) - self.chi(p - h)) / (2 * h)
        chi2 = (self.chi(p + h) - 2 * chi + self.chi(p - h)) / h**2
        # everything divided by q
        l1 = -p / (2 * t)
        l2 = p**2 / (4 * t**2) - 1 / (2 * t)
        lt = -n / (2 * t) + p**2 / (4 * t**2)
        f0 = chi * Phi
        f1 = chi1 * Phi + chi * l1 * Phi + chi * dPhi
        f2 = chi2 * Phi + chi * l2 * Phi + chi * d2Phi + 2 * chi1 * l1 * Phi + 2 * chi1 * dPhi + 2 * chi * l1 * dPhi
        ft = chi * (lt * Phi + Phi_t)
        q = (4 * np.pi * t) ** (-n / 2) * np.exp(-(p**2) / (4 * t))
        return q * (ft - f2 - w(p) * f1 + V(p) * f0)


def parametrix_kernel(expansion: HeatExpansion, cutoff: float | None = None) -> ParametrixKernel:
    cutoff = expansion.radius if cutoff is None else float(cutoff)
    if cutoff <= 0 or cutoff > expansion.radius:
        raise ValueError("cutoff radius must lie inside the chart")
    return ParametrixKernel(expansion, cutoff)


# --- exact spectral kernels ----------------------------------------------------

@dataclass
class HeatKernelGrid:
    """Heat kernel samples.

    ``values`` has shape ``(nt, npts, npts)`` for full kernels on ``points``
    or ``(nt, nbasis)`` for diagonal data of a Dirac discretization, where
    each entry is ``|psi|^2`` of a basis vector at its own location.
    ``weights`` integrate such diagonal data, ``grading`` is +-1 per entry.
    ``fiber`` holds the endomorphism-valued diagonal ``(nt, r, r)`` on
    homogeneous models.
    """

    times: np.ndarray
    points: np.ndarray | None
    values: np.ndarray
    diagonal: bool
    spectral: SpectralData = field(repr=False)
    derivatives: dict = field(default_factory=dict, repr=False)
    weights: np.ndarray | None = None
    grading: np.ndarray | None = None
    fiber: np.ndarray | None = None
    geometry: ModelGeometry | None = field(default=None, repr=False)

    def trace(self) -> np.ndarray:
        if self.diagonal:
            return (self.values * self.weights).sum(axis=-1)
        return np.array([np.trace(v).real for v in self.values])

    def supertrace(self) -> np.ndarray:
        if not self.diagonal or self.grading is None:
            raise ValueError("supertrace needs graded diagonal data")
        return (self.values * self.weights * self.grading).sum(axis=-1)


def spectral_heat_kernel(spectral: SpectralData, t, points=None, derivatives: int = 0) -> HeatKernelGrid:
    """``k_t = sum exp(-t mu) v v*`` from an eigendecomposition.

    Laplace data with a basis gives the full kernel on ``points`` (and
    ``d^l/dx^l`` in the first argument for ``l <= derivatives``); Dirac data
    gives diagonal values per basis vector.
    """
    times = np.atleast_1d(np.asarray(t, dtype=float))
    if np.any(times <= 0):
        raise ValueError("t must be positive")
    if spectral.kind == "laplace":
        if spectral.basis is None:
            raise ValueError("this spectrum has no basis functions; only traces are available")
        pts = np.asarray(points, dtype=float).reshape(-1)
        vec = spectral.block_vectors[0]
        lam = spectral.block_values[0]
        phi = spectral.basis(pts, 0) @ vec
        vals = np.stack([(phi * np.exp(-tt * lam)) @ phi.conj().T for tt in times])
        ders = {}
        for l in range(1, derivatives + 1):
            dphi = spectral.basis(pts, l) @ vec
            ders[l] = np.stack([(dphi * np.exp(-tt * lam)) @ phi.conj().T for tt in times])
        return HeatKernelGrid(times=times, points=pts, values=vals, diagonal=False, spectral=spectral, derivatives=ders)

    asm = spectral.assembly
    geom = asm.geometry
    vals, wts, grad, pos = [], [], [], []
    fiber = np.zeros((len(times), 2, 2), dtype=complex) if geom.kind == "flat_torus" else None
    for b, lam, vec in zip(spectral.blocks, spectral.block_values, spectral.block_vectors):
        e = np.exp(-np.outer(times, lam**2))  # (nt, k)
        dens = np.einsum("tk,ik->ti", e, np.abs(vec) ** 2)
        if geom.kind == "round_sphere":
            vals.append(dens * b.density)
            wts.append(1.0 / b.density)
            pos.append(b.node)
        else:
            area = geom.area()
            for _ in range(b.multiplicity):
                vals.append(dens / area)
                wts.append(np.full(b.size, area))
            fiber += b.multiplicity / area * _fiber_block(b, vec, e)
        grad.extend([b.chirality] * (1 if geom.kind == "round_sphere" else b.multiplicity))
    return HeatKernelGrid(
        times=times,
        points=np.concatenate(pos) if pos else None,
        values=np.concatenate(vals, axis=-1),
        diagonal=True,
        spectral=spectral,
        weights=np.concatenate(wts),
        grading=np.concatenate(grad),
        fiber=fiber,
        geometry=geom,
    )


def _fiber_block(b, vec, e):
    """Spinor 2x2 diagonal kernel of one homogeneous block (before the area factor)."""
    spin = (b.chirality < 0).astype(int)  # + component is spinor index 0
    out = np.zeros((e.shape[0], 2, 2), dtype=complex)
    for s1 in range(2):
        for s2 in range(2):
            i1 = np.where(spin == s1)[0]
            i2 = np.where(spin == s2)[0]
            for a in i1:
                for c in i2[b.site[i2] == b.site[a]]:
                    out[:, s1, s2] += e @ (vec[a] * vec[c].conj())
    return out


def semigroup_defect(spectral: SpectralData, t: float, s: float) -> float:
    """``|K_t K_s - K_{t+s}|`` in the eigen-coefficient basis (Laplace data with vectors)."""
    vec, lam = spectral.block_vectors[0], spectral.block_values[0]
    K = lambda tt: (vec * np.exp(-tt * lam)) @ vec.conj().T
    return float(np.abs(K(t) @ K(s) - K(t + s)).max())


def heat_equation_residual(spectral: SpectralData, t: float) -> float:
    """Operator-norm residual of ``(d_t + H) K_t`` with ``d_t`` taken from the spectral form."""
    vec, lam = spectral.block_vectors[0], spectral.block_values[0]
    H = spectral.operator
    Kt = (vec * np.exp(-t * lam)) @ vec.conj().T
    dK = -(vec * (lam * np.exp(-t * lam))) @ vec.conj().T
    return float(np.linalg.norm(dK + H @ Kt, 2))


def initial_condition_defect(spectral: SpectralData, t: float, f: Callable, points) -> float:
    """``max |int k_t(x, y) f(y) dy - f(x)|`` on a uniform periodic grid."""
    pts = np.asarray(points, dtype=float)
    k = spectral_heat_kernel(spectral, t, pts).values[0]
    dx = pts[1] - pts[0]
    return float(np.abs(k @ f(pts) * dx - f(pts)).max())


# --- small-t fits ---------------------------------------------------------------

def heat_trace_expansion(spectral: SpectralData, n: int, K: int, t_range=(1e-3, 1e-1), samples: int = 40, max_condition: float = 1e12) -> TraceFit:
    """Least-squares fit of ``(4 pi t)^{n/2} Tr exp(-tH) = sum_{i<=K} a_i t^i``."""

    def fit(lo, hi):
        ts = np.geomspace(lo, hi, samples)
        y = np.array([spectral.heat_trace(t) for t in ts]) * (4 * np.pi * ts) ** (n / 2)
        A = np.vander(ts, K + 1, increasing=True)
        scale = np.abs(A).max(axis=0)
        As = A / scale
        cond = float(np.linalg.cond(As))
        if cond > max_condition:
            raise ValueError(f"ill-conditioned trace fit (condition number {cond:.2e})")
        coef, res, *_ = np.linalg.lstsq(As, y, rcond=None)
        resid = y - As @ coef
        dof = max(samples - K - 1, 1)
        sigma2 = float(resid @ resid) / dof
        cov = sigma2 * np.linalg.inv(As.T @ As) / np.outer(scale, scale)
        return coef / scale, cov, cond, float(np.abs(resid).max())

    lo, hi = t_range
    a, cov, cond, resid = fit(lo, hi)
    a_half, *_ = fit(lo, np.sqrt(lo * hi))
    drift = np.abs(a - a_half) / np.maximum(np.abs(a), 1e-12 * max(1.0, abs(a[0])))
    return TraceFit(coefficients=a, covariance=cov, t_range=(lo, hi), condition=cond, drift=drift, residual=resid)


# --- decay checks ----------------------------------------------------------------

@dataclass
class DecayReport:
    seminorms: dict  # (k, l) -> sup over pairs
    finite: bool
    exponents: np.ndarray  # fitted alpha in |log k| ~ alpha d^2 / 4t, per time
    diagonal_value: np.ndarray


def schwartz_decay_check(kernel: HeatKernelGrid, k: int = 4, l: int = 4, geometry: ModelGeometry | None = None, floor: float = 1e-10) -> DecayReport:
    """Seminorms ``sup (1 + d)^a |d^b k_t|`` for ``a <= k``, ``b <= l`` and the Gaussian rate."""
    geom = geometry or kernel.geometry
    if kernel.diagonal or geom is None:
        raise ValueError("decay check needs a full kernel on a geometry")
    pts = kernel.points
    dist = geom.distance(pts[:, None, None], pts[None, :, None])
    semis = {}
    for b in range(l + 1):
        data = kernel.values if b == 0 else kernel.derivatives.get(b)
        if data is None:
            raise ValueError(f"kernel lacks derivative order {b}")
        for a in range(k + 1):
            semis[(a, b)] = float(np.max((1 + dist) ** a * np.abs(data)))
    finite = all(np.isfinite(v) for v in semis.values())
    alphas, diag = [], []
    for t, vals in zip(kernel.times, kernel.values):
        v = np.abs(vals)
        diag.append(float(np.mean(np.diag(v))))
        mask = (v > floor * v.max()) & (dist > 0)
        x = dist[mask] ** 2 / (4 * t)
        y = np.log(v[mask])
        slope, _ = np.polyfit(x, y, 1)
        alphas.append(-slope)
    return DecayReport(seminorms=semis, finite=finite, exponents=np.array(alphas), diagonal_value=np.array(diag))


def duhamel_terms(operator: LaplaceTypeOperator, t: float, order: int = 6, steps: int = 200, cutoff: int = 24):
    """Norms of the iterated Duhamel terms around the free circle kernel.

    ``T_0 = exp(-t H_0)``, ``T_k(t) = -int_0^t exp(-(t-s) H_0) V T_{k-1}(s) ds``;
    returns ``(norms, error)`` where ``error`` compares the partial sum with
    ``exp(-t H)``.
    """
    g = operator.geometry
    if operator.potential is None or g.dimension != 1:
        raise ValueError("Duhamel terms are set up for a circle with a potential")
    L = g.params["periods"][0]
    ks = np.arange(-cutoff, cutoff + 1)
    h0 = (2 * np.pi * ks / L) ** 2
    Vm = _potential_matrix(operator.potential, L, ks)
    ts = np.linspace(0.0, t, steps + 1)
    dt = ts[1] - ts[0]
    T = [np.exp(-ts[:, None] * h0)[:, :, None] * np.eye(len(ks))[None]]
    for _ in range(order):
        VT = np.einsum("ij,mjk->mik", Vm, T[-1])
        nxt = np.zeros_like(VT)
        for m in range(1, steps + 1):
            w = np.full(m + 1, dt)
            w[[0, -1]] *= 0.5
            decay = np.exp(-(ts[m] - ts[: m + 1])[:, None] * h0[None, :])
            nxt[m] = -np.einsum("j,ji,jik->ik", w, decay, VT[: m + 1])
        T.append(nxt)
    norms = np.array([np.linalg.norm(Tk[-1], 2) for Tk in T])
    H = np.diag(h0) + Vm
    lam, vec = np.linalg.eigh(H)
    exact = (vec * np.exp(-t * lam)) @ vec.conj().T
    error = float(np.linalg.norm(sum(Tk[-1] for Tk in T) - exact, 2))
    return norms, error
