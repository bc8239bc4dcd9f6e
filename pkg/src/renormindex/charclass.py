"""Exterior-algebra power series: the A-hat form and the Chern character.

Forms are polynomials in anticommuting generators ``dx^0 .. dx^{n-1}``.
Every series in a nilpotent 2-form terminates at degree ``n``, so the
computations here carry no truncation error; with ``Fraction`` inputs they
are exact.
"""

from __future__ import annotations

from fractions import Fraction
from functools import lru_cache
from math import factorial, pi
from typing import Mapping

import numpy as np

__all__ = [
    "FormPolynomial",
    "CurvatureMatrix",
    "wedge",
    "a_hat",
    "chern_character",
    "top_degree_integral",
    "series_x_over_sinh",
    "series_log_x_over_sinh",
]


def _merge_sign(a: tuple, b: tuple):
    """Sign and sorted union of ``dx^a ^ dx^b``, or ``(0, None)`` if they overlap."""
    if set(a) & set(b):
        return 0, None
    inversions = sum(1 for i in a for j in b if i > j)
    return (-1) ** inversions, tuple(sorted(a + b))


def _is_zero(c) -> bool:
    if isinstance(c, np.ndarray):
        return not np.any(c)
    return c == 0


class FormPolynomial:
    """Graded-commutative polynomial ``sum_S c_S dx^S``.

    ``mode`` is ``"scalar"`` for number coefficients and ``"matrix"`` for
    square complex matrices of a fixed rank; the two never mix.
    """

    __slots__ = ("n", "terms", "mode", "rank")

    def __init__(self, n: int, terms: Mapping[tuple, object] | None = None, mode: str | None = None):
        self.n = n
        cleaned = {}
        for key, c in (terms or {}).items():
            key = tuple(key)
            if any(b <= a for a, b in zip(key, key[1:])):
                raise ValueError(f"exterior monomial {key} is not strictly increasing")
            if key and key[-1] >= n:
                raise ValueError(f"exterior monomial {key} exceeds n={n}")
            if isinstance(c, np.ndarray):
                c = np.asarray(c, dtype=complex)
            if not _is_zero(c):
                cleaned[key] = c
        kinds = {isinstance(c, np.ndarray) for c in cleaned.values()}
        if len(kinds) > 1:
            raise ValueError("scalar and matrix coefficients cannot be mixed")
        inferred = "matrix" if kinds == {True} else "scalar"
        if mode is not None and cleaned and mode != inferred:
            raise ValueError(f"coefficients are {inferred}, mode says {mode}")
        self.mode = mode or inferred
        self.rank = None
        if self.mode == "matrix":
            shapes = {c.shape for c in cleaned.values()}
            if len(shapes) > 1:
                raise ValueError("matrix coefficients of different shapes")
            if shapes:
                (shape,) = shapes
                if len(shape) != 2 or shape[0] != shape[1]:
                    raise ValueError("matrix coefficients must be square")
                self.rank = shape[0]
        self.terms = cleaned

    # constructors
    @classmethod
    def constant(cls, n: int, c=1) -> "FormPolynomial":
        return cls(n, {(): c})

    @classmethod
    def monomial(cls, n: int, subset, c=1) -> "FormPolynomial":
        return cls(n, {tuple(subset): c})

    @classmethod
    def one_form(cls, n: int, i: int) -> "FormPolynomial":
        return cls(n, {(i,): 1})

    def __getitem__(self, key):
        return self.terms.get(tuple(key), 0)

    def degree_part(self, k: int) -> "FormPolynomial":
        return FormPolynomial(self.n, {s: c for s, c in self.terms.items() if len(s) == k}, self.mode)

    def degrees(self) -> set:
        return {len(s) for s in self.terms}

    @property
    def top(self):
        return self[tuple(range(self.n))]

    def _compatible(self, other: "FormPolynomial"):
        if self.n != other.n:
            raise ValueError(f"dimension mismatch: {self.n} vs {other.n}")
        if self.terms and other.terms and self.mode != other.mode:
            raise ValueError(f"mode mismatch: {self.mode} vs {other.mode}")

    def __add__(self, other):
        if not isinstance(other, FormPolynomial):
            other = FormPolynomial.constant(self.n, other)
        self._compatible(other)
        out = dict(self.terms)
        for k, c in other.terms.items():
            out[k] = out[k] + c if k in out else c
        return FormPolynomial(self.n, out)

    __radd__ = __add__

    def __neg__(self):
        return FormPolynomial(self.n, {k: -c for k, c in self.terms.items()}, self.mode)

    def __sub__(self, other):
        return self + (-other)

    def scale(self, c) -> "FormPolynomial":
        return FormPolynomial(self.n, {k: v * c for k, v in self.terms.items()}, self.mode)

    def __mul__(self, other):
        if isinstance(other, FormPolynomial):
            return wedge(self, other)
        return self.scale(other)

    def __rmul__(self, other):
        return self.scale(other)

    def __eq__(self, other):
        if not isinstance(other, FormPolynomial):
            other = FormPolynomial.constant(self.n, other)
        if self.n != other.n or set(self.terms) != set(other.terms):
            return False
        for k, c in self.terms.items():
            d = other.terms[k]
            if isinstance(c, np.ndarray) or isinstance(d, np.ndarray):
                if not np.array_equal(c, d):
                    return False
            elif c != d:
                return False
        return True

    __hash__ = None

    def isclose(self, other: "FormPolynomial", atol: float = 1e-12) -> bool:
        keys = set(self.terms) | set(other.terms)
        return all(np.max(np.abs(np.asarray(self[k]) - np.asarray(other[k]))) <= atol for k in keys)

    def trace(self) -> "FormPolynomial":
        """Fibrewise matrix trace (matrix mode to scalar mode)."""
        if self.mode != "matrix":
            return self
        return FormPolynomial(self.n, {k: complex(np.trace(c)) for k, c in self.terms.items()}, "scalar")

    def __repr__(self):
        if not self.terms:
            return f"FormPolynomial(n={self.n}, 0)"
        parts = []
        for s in sorted(self.terms, key=lambda s: (len(s), s)):
            name = "^".join(f"dx{i + 1}" for i in s) or "1"
            parts.append(f"({self.terms[s]})*{name}")
        return f"FormPolynomial(n={self.n}, " + " + ".join(parts) + ")"


def wedge(a: FormPolynomial, b: FormPolynomial) -> FormPolynomial:
    """Exterior product; coefficients multiply (matrix product in matrix mode)."""
    a._compatible(b)
    out: dict = {}
    for sa, ca in a.terms.items():
        for sb, cb in b.terms.items():
            sign, s = _merge_sign(sa, sb)
            if sign == 0:
                continue
            term = ca @ cb if isinstance(ca, np.ndarray) else ca * cb
            term = term * sign
            out[s] = out[s] + term if s in out else term
    mode = a.mode if a.terms else b.mode
    return FormPolynomial(a.n, out, mode if out else None)


def _power_series_apply(coeffs, x: FormPolynomial, one: FormPolynomial) -> FormPolynomial:
    """``sum_k coeffs[k] x^k``; stops once powers of the nilpotent ``x`` vanish."""
    result = one.scale(coeffs[0]) if coeffs[0] != 0 else FormPolynomial(x.n)
    power = one
    for c in coeffs[1:]:
        power = wedge(power, x)
        if not power.terms:
            break
        if c != 0:
            result = result + power.scale(c)
    return result


# --- exact scalar power series ------------------------------------------

def _series_inverse(a: list) -> list:
    b = [Fraction(1) / a[0]]
    for k in range(1, len(a)):
        b.append(-sum(a[j] * b[k - j] for j in range(1, k + 1)) / a[0])
    return b


def _series_log1p(u: list) -> list:
    """log(1 + u(x)) for a series with u[0] = 0."""
    m = len(u)
    out = [Fraction(0)] * m
    power = [Fraction(1)] + [Fraction(0)] * (m - 1)
    for k in range(1, m):
        power = [sum(power[j] * u[i - j] for j in range(i + 1)) for i in range(m)]
        out = [o + Fraction((-1) ** (k + 1), k) * p for o, p in zip(out, power)]
    return out


@lru_cache(maxsize=None)
def series_x_over_sinh(order: int) -> tuple:
    """Taylor coefficients of ``x / sinh(x)`` up to ``x^order`` (exact)."""
    sinh_over_x = [Fraction(1, factorial(k + 1)) if k % 2 == 0 else Fraction(0) for k in range(order + 1)]
    return tuple(_series_inverse(sinh_over_x))


@lru_cache(maxsize=None)
def series_log_x_over_sinh(order: int) -> tuple:
    """Taylor coefficients of ``log(x / sinh(x))`` up to ``x^order`` (exact)."""
    f = list(series_x_over_sinh(order))
    u = [Fraction(0)] + f[1:]
    return tuple(_series_log1p(u))


# --- matrices of forms ---------------------------------------------------

class CurvatureMatrix:
    """Antisymmetric ``n x n`` matrix of scalar 2-forms."""

    def __init__(self, entries):
        entries = [list(row) for row in entries]
        size = len(entries)
        if any(len(row) != size for row in entries):
            raise ValueError("curvature matrix must be square")
        n = entries[0][0].n if size else 0
        for i in range(size):
            for j in range(size):
                e = entries[i][j]
                if not isinstance(e, FormPolynomial):
                    raise TypeError("entries must be FormPolynomial")
                if e.mode != "scalar":
                    raise ValueError("curvature entries must have scalar coefficients")
                if e.terms and e.degrees() != {2}:
                    raise ValueError("curvature entries must be homogeneous 2-forms")
                if not (e + entries[j][i]) == FormPolynomial(n):
                    raise ValueError("curvature matrix is not antisymmetric")
        self.entries = entries
        self.size = size
        self.n = n

    @classmethod
    def from_components(cls, riemann, n: int | None = None) -> "CurvatureMatrix":
        """Build ``R_ij = 1/2 sum_kl R_ijkl dx^k ^ dx^l`` from a 4-index array."""
        riemann = np.asarray(riemann, dtype=object)
        size = riemann.shape[0]
        n = size if n is None else n
        entries = []
        for i in range(size):
            row = []
            for j in range(size):
                terms = {}
                for k in range(n):
                    for l in range(k + 1, n):
                        c = riemann[i, j, k, l]
                        if c != 0:
                            terms[(k, l)] = c
                row.append(FormPolynomial(n, terms, "scalar"))
            entries.append(row)
        return cls(entries)

    def scale(self, c) -> "CurvatureMatrix":
        return CurvatureMatrix([[e.scale(c) for e in row] for row in self.entries])


def _matmul_forms(a, b, n):
    size = len(a)
    out = []
    for i in range(size):
        row = []
        for j in range(size):
            acc = FormPolynomial(n)
            for k in range(size):
                if a[i][k].terms and b[k][j].terms:
                    acc = acc + wedge(a[i][k], b[k][j])
            row.append(acc)
        out.append(row)
    return out


def _identity_forms(size, n, c=1):
    return [[FormPolynomial.constant(n, c) if i == j else FormPolynomial(n) for j in range(size)] for i in range(size)]


def _add_forms(a, b):
    return [[x + y for x, y in zip(ra, rb)] for ra, rb in zip(a, b)]


def _scale_forms(a, c):
    return [[x.scale(c) for x in row] for row in a]


def _is_zero_matrix(a):
    return all(not x.terms for row in a for x in row)


def _matrix_series(coeffs, x, n):
    size = len(x)
    result = _scale_forms(_identity_forms(size, n), coeffs[0])
    power = _identity_forms(size, n)
    for c in coeffs[1:]:
        power = _matmul_forms(power, x, n)
        if _is_zero_matrix(power):
            break
        if c != 0:
            result = _add_forms(result, _scale_forms(power, c))
    return result


def _trace_forms(a, n):
    acc = FormPolynomial(n)
    for i in range(len(a)):
        acc = acc + a[i][i]
    return acc


def a_hat(R: CurvatureMatrix) -> FormPolynomial:
    """Unnormalized A-hat form ``det((R/2) / sinh(R/2))^(1/2)``.

    The matrix function is a Taylor series in ``R/2``; the determinant is
    ``exp(tr log M)`` with the logarithm as a series in ``M - 1``, and the
    square root is a binomial series.  All of them terminate because the
    entries of ``R`` are nilpotent.  The ``(i / 2 pi)`` normalization is
    applied by :func:`top_degree_integral`.
    """
    if not isinstance(R, CurvatureMatrix):
        R = CurvatureMatrix(R)
    n = R.n
    if n % 2:
        raise ValueError("A-hat requires even n")
    half = R.scale(Fraction(1, 2)).entries
    m = _matrix_series(series_x_over_sinh(n), half, n)
    shifted = _add_forms(m, _scale_forms(_identity_forms(R.size, n), -1))
    log_coeffs = [Fraction(0)] + [Fraction((-1) ** (k + 1), k) for k in range(1, n + 1)]
    log_m = _matrix_series(log_coeffs, shifted, n)
    trace_log = _trace_forms(log_m, n)
    one = FormPolynomial.constant(n, 1)
    exp_coeffs = [Fraction(1, factorial(k)) for k in range(n + 1)]
    det = _power_series_apply(exp_coeffs, trace_log, one)
    # (1 + u)^(1/2)
    u = det - one
    binom = [Fraction(1)]
    for k in range(1, n + 1):
        binom.append(binom[-1] * (Fraction(1, 2) - (k - 1)) / k)
    return _power_series_apply(binom, u, one)


def chern_character(F: FormPolynomial) -> FormPolynomial:
    """``tr exp(F)`` for an even twisting curvature form (scalar or matrix)."""
    if any(d % 2 for d in F.degrees()):
        raise ValueError("Chern character needs an even form")
    if F.terms and min(F.degrees()) < 2:
        raise ValueError("twisting curvature must have no degree-0 part")
    n = F.n
    if F.mode == "matrix" and F.rank is not None:
        one = FormPolynomial.constant(n, np.eye(F.rank, dtype=complex))
        coeffs = [1.0 / factorial(k) for k in range(n + 1)]
    else:
        one = FormPolynomial.constant(n, 1)
        coeffs = [Fraction(1, factorial(k)) for k in range(n + 1)]
    return _power_series_apply(coeffs, F, one).trace()


def top_degree_integral(omega: FormPolynomial, geom, *, chern_weil: bool = False):
    """Integrate the top coefficient of ``omega`` over a model geometry.

    The top coefficient is taken as constant in the model's orthonormal
    coframe, so the integral is coefficient times (renormalized) volume.
    With ``chern_weil=True`` the characteristic-class normalization
    ``(i / 2 pi)^(n/2)`` is applied to the top degree; on the Chern
    character this is ``(i/2pi)^k`` on each degree-2k factor, and on A-hat
    (degrees divisible by 4) it coincides with ``(-i/2pi)^k``.
    """
    if omega.n != geom.dimension:
        raise ValueError(f"form dimension {omega.n} does not match geometry dimension {geom.dimension}")
    if omega.mode == "matrix":
        omega = omega.trace()
    c = omega.top
    if _is_zero(c):
        return 0
    value = c * geom.renormalized_volume()
    if chern_weil:
        value = value * (1j / (2 * pi)) ** (omega.n // 2)
    return value
