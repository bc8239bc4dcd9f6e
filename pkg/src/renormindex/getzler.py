"""Rescaled heat kernels, the harmonic-oscillator limit and Mehler's formula.

The diagonal kernel on a homogeneous model is read off in the Clifford
basis, multiplied by ``t^n`` at time ``t^2`` and Taylor-fitted in ``t``;
the coefficient of ``t^m`` must have Clifford degree at most ``m``.

The limit operator is realized numerically on tensor Hermite functions.
For a numeric curvature parameter the Hermitian form
``-sum_i (d_i + (i/4) R_ij x_j)^2`` is used (a constant magnetic field of
strength ``|R_12| / 2`` in two dimensions); the nilpotent version is only
handled symbolically, through Mehler's closed form.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from math import factorial

import numpy as np
import scipy.linalg
import scipy.sparse as sp

from .charclass import (
    CurvatureMatrix,
    FormPolynomial,
    _matmul_forms,
    _power_series_apply,
    _scale_forms,
    _trace_forms,
    series_log_x_over_sinh,
)
from .clifford import CliffordElement, from_matrix, quantize, supertrace
from .geometry import ModelGeometry, curvature as geometry_curvature
from .operators import DiracAssembly, SpectralData, spectrum

__all__ = [
    "RescaledFamily",
    "FiltrationReport",
    "ModelOperatorSpec",
    "ModelOperator",
    "MehlerValue",
    "scale_kernel",
    "taylor_filtration_check",
    "rescaled_limit",
    "model_operator",
    "mehler_heat_value",
    "oscillator_diagonal",
    "oscillator_diagonal_closed_form",
    "index_density",
]

DEFAULT_SCALES = np.linspace(0.2, 0.6, 17)


# --- rescaled family -------------------------------------------------------------

@dataclass
class RescaledFamily:
    """Diagonal values ``l_t = t^n k_{t^2}(x, x)`` in the Clifford basis.

    ``coefficients[m]`` is the fitted coefficient of ``t^m``; the Taylor
    coefficients are ``u_j = coefficients[n - j]``.
    """

    scales: np.ndarray
    values: list  # CliffordElement per scale
    matrices: np.ndarray  # (nscales, 2^{n/2}, 2^{n/2})
    coefficients: list  # CliffordElement per power of t
    dimension: int
    normalized: bool = True
    area: float = 1.0

    @property
    def taylor(self) -> list:
        n = self.dimension
        return [self.coefficients[n - j] for j in range(n + 1)]

    def supertraces(self) -> np.ndarray:
        return np.array([complex(supertrace(v, orthonormal_frame=True)) for v in self.values])


def _spectral(obj) -> SpectralData:
    return obj if isinstance(obj, SpectralData) else spectrum(obj)


def scale_kernel(assembly, scales=None, *, normalize: bool = True, degree: int | None = None) -> RescaledFamily:
    """Sample ``t^n k_{t^2}`` on a homogeneous torus model and Taylor-fit it in ``t``.

    ``normalize=False`` drops the ``t^n`` factor (used as a negative control).
    """
    from .heat import spectral_heat_kernel

    spec = _spectral(assembly)
    geom = spec.assembly.geometry
    if geom.kind != "flat_torus":
        raise ValueError("the rescaled family is computed on homogeneous (torus) models")
    n = geom.dimension
    scales = np.asarray(DEFAULT_SCALES if scales is None else scales, dtype=float)
    if np.any(scales <= 0) or np.any(scales > 1):
        raise ValueError("scales must lie in (0, 1]")
    if degree is None:
        degree = min(len(scales) - 1, 2 * n + 2)
    if len(scales) < max(n + 2, degree + 1):
        raise ValueError(f"need at least {max(n + 2, degree + 1)} scale samples for a degree-{degree} fit")
    kern = spectral_heat_kernel(spec, scales**2)
    mats = kern.fiber * (scales**n if normalize else np.ones_like(scales))[:, None, None]
    values = [from_matrix(m, n) for m in mats]
    A = np.vander(scales, degree + 1, increasing=True)
    flat = mats.reshape(len(scales), -1)
    coef, *_ = np.linalg.lstsq(A, flat, rcond=None)
    coefficients = [from_matrix(c.reshape(mats.shape[1:]), n) for c in coef]
    return RescaledFamily(
        scales=scales, values=values, matrices=mats, coefficients=coefficients,
        dimension=n, normalized=normalize, area=geom.area(),
    )


@dataclass
class FiltrationReport:
    violations: list  # norm of the part of coefficient m above degree m
    reference: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(v <= self.tolerance * self.reference for v in self.violations)


def taylor_filtration_check(family: RescaledFamily, tol: float = 1e-6) -> FiltrationReport:
    """The coefficient of ``t^m`` may only carry Clifford degrees ``<= m`` (``m <= n``)."""
    n = family.dimension
    coeffs = family.coefficients[: n + 1]
    ref = max(c.norm() for c in family.coefficients) or 1.0
    violations = []
    for m, c in enumerate(coeffs):
        above = sum((c.grade_part(k) for k in range(m + 1, n + 1)), CliffordElement(n))
        violations.append(float(above.norm()))
    return FiltrationReport(violations=violations, reference=float(ref), tolerance=tol)


def rescaled_limit(family: RescaledFamily, degree: int = 4):
    """Fitted ``t -> 0`` limit of ``t^{-n} tr_s(l_t)`` and its drift between the two halves of the scales."""
    n = family.dimension
    y = family.supertraces().real / family.scales**n

    def fit(sl):
        s = family.scales[sl]
        deg = min(degree, len(s) - 1)
        return float(np.polyval(np.polyfit(s, y[sl], deg), 0.0))

    half = len(family.scales) // 2
    full = fit(slice(None))
    drift = abs(fit(slice(None, half + 1)) - fit(slice(half, None)))
    return full, drift


# --- model operator -----------------------------------------------------------------

@dataclass
class ModelOperatorSpec:
    """Constant-coefficient data of the limit operator at a point.

    ``curvature`` is either a numeric antisymmetric matrix or a
    :class:`CurvatureMatrix` of nilpotent 2-forms; ``twist`` is a numeric
    skew-Hermitian matrix, a scalar, or a 2-form :class:`FormPolynomial`.
    """

    dimension: int
    curvature: object
    twist: object = None
    center: tuple = ()

    def __post_init__(self):
        R = self.curvature
        if isinstance(R, CurvatureMatrix):
            if R.size != self.dimension:
                raise ValueError("curvature matrix size does not match the dimension")
        else:
            R = np.asarray(R, dtype=float)
            if R.shape != (self.dimension, self.dimension):
                raise ValueError("curvature matrix has the wrong shape")
            if np.abs(R + R.T).max() > 1e-12:
                raise ValueError("curvature matrix must be antisymmetric")
            self.curvature = R
        F = self.twist
        if F is not None and not isinstance(F, FormPolynomial):
            F = np.atleast_2d(np.asarray(F, dtype=complex))
            if np.abs(F + F.conj().T).max() > 1e-12:
                raise ValueError("twist curvature must be skew-Hermitian")
            self.twist = F

    @property
    def numeric(self) -> bool:
        return not isinstance(self.curvature, CurvatureMatrix)


def _hermite_at_zero(m: int) -> np.ndarray:
    """Normalized Hermite functions ``h_k(0)`` for frequency 1."""
    out = np.zeros(m)
    out[0] = np.pi**-0.25
    for k in range(2, m, 2):
        out[k] = -np.sqrt((k - 1) / k) * out[k - 2]
    return out


@dataclass
class ModelOperator:
    """Matrix of the limit operator on Hermite functions of total degree ``<= nmax``."""

    spec: ModelOperatorSpec
    omega: float
    nmax: int
    states: np.ndarray  # (nbasis, n) occupation numbers
    matrix: np.ndarray  # scalar part on the Hermite basis
    twist: np.ndarray  # constant endomorphism on the twist space
    rotation: np.ndarray | None = field(default=None, repr=False)

    @property
    def full(self) -> np.ndarray:
        return np.kron(self.matrix, np.eye(len(self.twist))) + np.kron(np.eye(len(self.matrix)), self.twist)

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvalsh(self.matrix)

    def shell_leakage(self) -> float:
        """Norm of matrix elements between different total degrees (0 when truncation is exact)."""
        tot = self.states.sum(axis=1)
        mask = tot[:, None] != tot[None, :]
        return float(np.abs(self.matrix[mask]).max()) if mask.any() else 0.0

    def heat_value_at_origin(self, t: float) -> np.ndarray:
        """``exp(-t H)(0, 0)`` on the twist space, from the Hermite eigen-sum."""
        lam, vec = np.linalg.eigh(self.matrix)
        h0 = _hermite_at_zero(self.nmax + 1) * self.omega**0.25
        psi0 = vec.T @ np.prod(h0[self.states], axis=1)
        scalar = float(np.sum(np.exp(-t * lam) * np.abs(psi0) ** 2))
        return scalar * scipy.linalg.expm(-t * self.twist)


def model_operator(spec: ModelOperatorSpec, nmax: int = 64, omega: float | None = None) -> ModelOperator:
    """Realize ``-sum_i (d_i + (i/4) sum_j R_ij x_j)^2 + F`` on a truncated Hermite basis."""
    if not spec.numeric:
        raise ValueError("the Hermite realization needs a numeric curvature matrix")
    n = spec.dimension
    R = spec.curvature
    if omega is None:
        rad = float(np.abs(np.linalg.eigvals(R)).max()) if n else 0.0
        omega = rad / 4 if rad > 0 else 1.0
    M = nmax + 3
    b = sp.diags(np.sqrt(np.arange(1, M)), 1, format="csr")
    X1 = (b + b.T) / np.sqrt(2 * omega)
    P1 = np.sqrt(omega / 2) * (b - b.T)  # d/dx
    I1 = sp.identity(M, format="csr")

    def on_axis(op, i):
        out = None
        for k in range(n):
            m = op if k == i else I1
            out = m if out is None else sp.kron(out, m, format="csr")
        return out

    grids = np.array(np.meshgrid(*[np.arange(M)] * n, indexing="ij")).reshape(n, -1).T
    keep = np.where(grids.sum(axis=1) <= nmax)[0]
    X = [on_axis(X1, i) for i in range(n)]
    H = sp.csr_matrix((len(keep), len(keep)), dtype=complex)
    for i in range(n):
        A_i = (on_axis(P1, i) + 0.25j * sum(R[i, j] * X[j] for j in range(n)))[:, keep]
        # A_i is anti-Hermitian, so -(A_i)^2 = A_i^* A_i; intermediate levels stay below M
        H = H + A_i.conj().T @ A_i
    H = H.toarray()
    rot = None
    if n == 2:
        rot = (X[0] @ on_axis(P1, 1) - X[1] @ on_axis(P1, 0))[keep][:, keep].toarray()
    F = spec.twist
    if F is None:
        tw = np.zeros((1, 1), dtype=complex)
    elif isinstance(F, FormPolynomial):
        raise ValueError("numeric realization needs a numeric twist")
    else:
        tw = F
    return ModelOperator(spec=spec, omega=float(omega), nmax=nmax, states=grids[keep], matrix=H, twist=tw, rotation=rot)


# --- Mehler ------------------------------------------------------------------------

@dataclass
class MehlerValue:
    """``prefactor * form`` with ``prefactor = (4 pi t)^{-n/2}`` kept separate so ``form`` stays exact."""

    prefactor: float
    form: FormPolynomial
    t: object

    def clifford(self) -> CliffordElement:
        return quantize(self.form if self.form.mode == "scalar" else self.form.trace()) * self.prefactor

    def supertrace(self) -> complex:
        return complex(supertrace(self.clifford(), orthonormal_frame=True))


def _nilpotent_exp(x: FormPolynomial, one: FormPolynomial, exact: bool) -> FormPolynomial:
    n = x.n
    coeffs = [Fraction(1, factorial(k)) if exact else 1.0 / factorial(k) for k in range(n + 1)]
    return _power_series_apply(coeffs, x, one)


def mehler_heat_value(spec: ModelOperatorSpec, t) -> MehlerValue | np.ndarray:
    """Heat kernel of the limit operator at the origin.

    Nilpotent curvature: ``det^{1/2}((tR/2)/sinh(tR/2)) = exp(1/2 sum_k c_k tr (tR/2)^{2k})``
    with ``c_k`` the coefficients of ``log(x / sinh x)``, times ``exp(-tF)``.
    Numeric curvature: the same closed form evaluated with matrix functions.
    """
    if t <= 0:
        raise ValueError("t must be positive")
    n = spec.dimension
    if spec.numeric:
        return _numeric_mehler(spec.curvature, spec.twist, t)
    R = spec.curvature
    exact = isinstance(t, (int, Fraction))
    half_t = Fraction(t) / 2 if exact else t / 2
    X = _scale_forms(R.entries, half_t)
    logc = series_log_x_over_sinh(n)
    acc = FormPolynomial(n)
    power = X
    for k in range(1, n // 2 + 1):
        power = _matmul_forms(power, X, n) if k == 1 else _matmul_forms(_matmul_forms(power, X, n), X, n)
        c = logc[2 * k]
        if c:
            acc = acc + _trace_forms(power, n).scale(c * Fraction(1, 2) if exact else float(c) / 2)
    det_half = _nilpotent_exp(acc, FormPolynomial.constant(n, 1), exact)
    F = spec.twist
    if F is None:
        twist = FormPolynomial.constant(n, 1)
    else:
        if not isinstance(F, FormPolynomial):
            raise ValueError("nilpotent curvature needs a 2-form twist")
        mexact = exact and F.mode == "scalar"
        one = FormPolynomial.constant(n, 1) if F.mode == "scalar" else FormPolynomial.constant(n, np.eye(F.rank, dtype=complex))
        twist = _nilpotent_exp(F.scale(-t), one, mexact)
    form = det_half * twist
    prefactor = (4 * np.pi * float(t)) ** (-n / 2)
    return MehlerValue(prefactor=prefactor, form=form, t=t)


def _numeric_mehler(R, F, t):
    n = R.shape[0]
    mu = np.linalg.eigvals(t * np.asarray(R, dtype=complex) / 2)
    vals = np.where(np.abs(mu) < 1e-12, 1.0, mu / np.sinh(np.where(np.abs(mu) < 1e-12, 1.0, mu)))
    det_half = np.sqrt(np.prod(vals))
    tw = np.eye(1) if F is None else scipy.linalg.expm(-t * np.atleast_2d(F))
    return (4 * np.pi * t) ** (-n / 2) * det_half * tw


def oscillator_diagonal(a: float, t: float, modes: int = 64, tol: float = 1e-12, max_modes: int = 4096) -> float:
    """``exp(-t(-d^2 + a^2 x^2))(0, 0)`` from a Hermite eigen-sum, doubling ``modes`` until the tail is below ``tol``."""
    if t <= 0 or a <= 0:
        raise ValueError("a and t must be positive")
    while True:
        b = np.diag(np.sqrt(np.arange(1, modes + 2)), 1)
        X = (b + b.T) / np.sqrt(2 * a)
        P = np.sqrt(a / 2) * (b - b.T)
        H = (-(P @ P) + a**2 * X @ X)[:modes, :modes]
        lam, vec = np.linalg.eigh(H)
        psi0 = vec.T @ (_hermite_at_zero(modes + 2)[:modes] * a**0.25)
        terms = np.exp(-t * lam) * psi0**2
        tail = np.exp(-t * a * (2 * modes + 1)) * a**0.5
        if tail < tol or modes >= max_modes:
            return float(terms.sum())
        modes *= 2


def oscillator_diagonal_closed_form(a: float, t: float) -> float:
    return float(np.sqrt(a / (2 * np.pi * np.sinh(2 * a * t))))


# --- index density -------------------------------------------------------------------

def index_density(geom: ModelGeometry, assembly: DiracAssembly | None = None, x=None) -> float:
    """Supertrace of the Mehler value at ``t = 1`` from the pointwise curvature at ``x``."""
    n = geom.dimension
    curv = geometry_curvature(geom, "analytic")
    if x is None:
        idx = tuple(s // 3 for s in geom.resolution)
    else:
        pts = geom.points()
        idx = np.unravel_index(int(np.argmin(np.linalg.norm(pts - np.asarray(x), axis=1))), geom.resolution)
    riem = np.asarray(curv.riemann[idx], dtype=float)
    R = CurvatureMatrix.from_components(np.where(np.abs(riem) < 1e-13, 0.0, riem), n)
    F = assembly.twist_curvature if assembly is not None and assembly.twist_curvature.terms else None
    val = mehler_heat_value(ModelOperatorSpec(n, R, F), 1)
    return float(val.supertrace().real)
