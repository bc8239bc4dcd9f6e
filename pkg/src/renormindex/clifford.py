"""Complexified Clifford algebra on ``n`` generators.

Elements are stored in the monomial basis ``e_S = e_{s1} ... e_{sk}`` with
``S`` a strictly increasing tuple of zero-based generator indices.  The
product is fixed by ``e_i e_j + e_j e_i = -2 g_ij``.

Coefficients are ordinary Python numbers.  Integer, ``Fraction`` and
Gaussian-integer ``complex`` inputs stay exact under the product, which is
what the supertrace audit relies on.
"""

from __future__ import annotations

from functools import lru_cache
from itertools import combinations
from typing import Iterable, Mapping

import numpy as np

__all__ = [
    "CliffordElement",
    "MetricForm",
    "clifford_mul",
    "supertrace",
    "quantize",
    "filtration_degree",
    "matrix_representation",
    "chirality_matrix",
    "from_matrix",
    "basis_monomials",
]


class MetricForm:
    """Symmetric positive-definite bilinear form on the generators."""

    def __init__(self, g, atol: float = 1e-12):
        g = np.asarray(g)
        if g.ndim != 2 or g.shape[0] != g.shape[1]:
            raise ValueError("metric must be a square matrix")
        gf = np.asarray(g, dtype=float)
        if not np.allclose(gf, gf.T, atol=atol):
            raise ValueError("metric is not symmetric")
        if np.linalg.eigvalsh(gf).min() <= 0:
            raise ValueError("metric is not positive definite")
        self.g = g
        self.inverse = np.linalg.inv(gf)
        # exact entries are kept so that integer metrics give exact products
        self._entries = tuple(tuple(_exact(x) for x in row) for row in g.tolist())

    @classmethod
    def identity(cls, n: int) -> "MetricForm":
        return cls(np.eye(n, dtype=int))

    @property
    def dim(self) -> int:
        return self.g.shape[0]

    @property
    def is_identity(self) -> bool:
        n = self.dim
        return all(self._entries[i][j] == (1 if i == j else 0) for i in range(n) for j in range(n))

    def __call__(self, i: int, j: int):
        return self._entries[i][j]

    def __hash__(self):
        return hash(self._entries)

    def __eq__(self, other):
        return isinstance(other, MetricForm) and self._entries == other._entries


def _exact(x):
    if isinstance(x, float) and x.is_integer():
        return int(x)
    return x


def _clean(c):
    if isinstance(c, complex) and c.imag == 0:
        r = c.real
        return int(r) if r.is_integer() else r
    return c


class CliffordElement:
    """Element of ``Cl_n`` as a sparse map ``subset -> coefficient``."""

    __slots__ = ("n", "coeffs")

    def __init__(self, n: int, coeffs: Mapping[tuple, object] | None = None):
        if n <= 0:
            raise ValueError("dimension must be positive")
        self.n = n
        out = {}
        for key, c in (coeffs or {}).items():
            key = tuple(key)
            if any(b <= a for a, b in zip(key, key[1:])):
                raise ValueError(f"monomial {key} is not strictly increasing")
            if key and not (0 <= key[0] and key[-1] < n):
                raise ValueError(f"monomial {key} out of range for n={n}")
            if c != 0:
                out[key] = _clean(c)
        self.coeffs = out

    @classmethod
    def scalar(cls, n: int, c=1) -> "CliffordElement":
        return cls(n, {(): c})

    @classmethod
    def generator(cls, n: int, i: int) -> "CliffordElement":
        return cls(n, {(i,): 1})

    @classmethod
    def monomial(cls, n: int, subset: Iterable[int], c=1) -> "CliffordElement":
        return cls(n, {tuple(subset): c})

    def __getitem__(self, key):
        return self.coeffs.get(tuple(key), 0)

    def _check(self, other: "CliffordElement"):
        if self.n != other.n:
            raise ValueError(f"dimension mismatch: {self.n} vs {other.n}")

    def __add__(self, other):
        if not isinstance(other, CliffordElement):
            other = CliffordElement.scalar(self.n, other)
        self._check(other)
        out = dict(self.coeffs)
        for k, c in other.coeffs.items():
            out[k] = out.get(k, 0) + c
        return CliffordElement(self.n, out)

    __radd__ = __add__

    def __neg__(self):
        return CliffordElement(self.n, {k: -c for k, c in self.coeffs.items()})

    def __sub__(self, other):
        return self + (-other)

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        if isinstance(other, CliffordElement):
            return clifford_mul(self, other)
        return CliffordElement(self.n, {k: c * other for k, c in self.coeffs.items()})

    def __rmul__(self, other):
        return CliffordElement(self.n, {k: other * c for k, c in self.coeffs.items()})

    def __eq__(self, other):
        if isinstance(other, CliffordElement):
            return self.n == other.n and self.coeffs == other.coeffs
        return self == CliffordElement.scalar(self.n, other)

    def __hash__(self):
        return hash((self.n, frozenset(self.coeffs.items())))

    def isclose(self, other: "CliffordElement", atol: float = 1e-12) -> bool:
        self._check(other)
        keys = set(self.coeffs) | set(other.coeffs)
        return all(abs(complex(self[k]) - complex(other[k])) <= atol for k in keys)

    def grade_part(self, k: int) -> "CliffordElement":
        return CliffordElement(self.n, {s: c for s, c in self.coeffs.items() if len(s) == k})

    def norm(self) -> float:
        return float(np.sqrt(sum(abs(complex(c)) ** 2 for c in self.coeffs.values())))

    @property
    def parity(self) -> int | None:
        """0 or 1 for homogeneous parity, ``None`` when mixed."""
        ps = {len(s) % 2 for s in self.coeffs}
        if not ps:
            return 0
        return ps.pop() if len(ps) == 1 else None

    def __repr__(self):
        if not self.coeffs:
            return f"CliffordElement(n={self.n}, 0)"
        terms = []
        for s in sorted(self.coeffs, key=lambda s: (len(s), s)):
            name = "e" + "".join(str(i + 1) for i in s) if s else "1"
            terms.append(f"({self.coeffs[s]})*{name}")
        return f"CliffordElement(n={self.n}, " + " + ".join(terms) + ")"


@lru_cache(maxsize=None)
def _mul_generator(subset: tuple, k: int, metric: MetricForm) -> tuple:
    """Normal form of ``e_subset * e_k`` as a tuple of (subset, coeff)."""
    if not subset:
        return (((k,), 1),)
    last = subset[-1]
    head = subset[:-1]
    if last < k:
        return ((subset + (k,), 1),)
    if last == k:
        return ((head, -metric(k, k)),)
    # e_head e_last e_k = -e_head e_k e_last - 2 g(last, k) e_head
    out: dict = {}
    for s, c in _mul_generator(head, k, metric):
        # every index in s is < last, so appending keeps the order
        key = s + (last,)
        out[key] = out.get(key, 0) - c
    g = metric(last, k)
    if g != 0:
        out[head] = out.get(head, 0) - 2 * g
    return tuple((s, c) for s, c in out.items() if c != 0)


def _mul_monomials(a: tuple, b: tuple, metric: MetricForm) -> dict:
    acc = {a: 1}
    for k in b:
        nxt: dict = {}
        for s, c in acc.items():
            for s2, c2 in _mul_generator(s, k, metric):
                nxt[s2] = nxt.get(s2, 0) + c * c2
        acc = {s: c for s, c in nxt.items() if c != 0}
    return acc


def clifford_mul(a: CliffordElement, b: CliffordElement, g: MetricForm | None = None) -> CliffordElement:
    """Clifford product with ``e_i e_j + e_j e_i = -2 g(e_i, e_j)``."""
    a._check(b)
    if g is None:
        g = MetricForm.identity(a.n)
    if g.dim != a.n:
        raise ValueError(f"metric has size {g.dim}, elements have n={a.n}")
    out: dict = {}
    for sa, ca in a.coeffs.items():
        for sb, cb in b.coeffs.items():
            for s, c in _mul_monomials(sa, sb, g).items():
                out[s] = out.get(s, 0) + ca * cb * c
    return CliffordElement(a.n, out)


def _minus_two_i_power(m: int) -> complex:
    # (-2i)^m exactly: (-2)^m * i^m
    unit = (1, 1j, -1, -1j)[m % 4]
    return _clean(complex((-2) ** m) * unit)


def supertrace(a: CliffordElement, *, orthonormal_frame: bool):
    """Graded supertrace of a Clifford element in an oriented orthonormal frame.

    Only the top monomial ``e_1 ... e_n`` contributes, with weight
    ``(-2i)^(n/2)``.  The caller must assert that the generators form an
    orthonormal frame; there is no silent default.
    """
    if not orthonormal_frame:
        raise ValueError("supertrace is only defined for an oriented orthonormal frame")
    if a.n % 2:
        raise ValueError("supertrace requires even n")
    top = tuple(range(a.n))
    c = a[top]
    if c == 0:
        return 0
    return _clean(c * _minus_two_i_power(a.n // 2))


def filtration_degree(a: CliffordElement) -> int:
    return max((len(s) for s in a.coeffs), default=0)


def quantize(omega) -> CliffordElement:
    """Quantization map ``dx^S -> e_S`` for scalar-valued forms.

    In an orthonormal frame ``c(e^{s1} ^ ... ^ e^{sk}) = e_{s1} ... e_{sk}``
    for distinct indices, so exterior monomials map to the Clifford monomial
    with the same index set.
    """
    if getattr(omega, "mode", "scalar") != "scalar":
        raise ValueError("quantize supports scalar-coefficient forms only")
    n = omega.n
    out = {}
    for s, c in omega.terms.items():
        if s and s[-1] >= n:
            raise ValueError("form uses more generators than the Clifford algebra")
        out[s] = c
    return CliffordElement(n, out)


def basis_monomials(n: int, max_degree: int | None = None):
    top = n if max_degree is None else max_degree
    for k in range(top + 1):
        yield from combinations(range(n), k)


# --- spin representation -------------------------------------------------

_X = np.array([[0, 1], [1, 0]], dtype=complex)
_Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
_Z = np.array([[1, 0], [0, -1]], dtype=complex)
_I = np.eye(2, dtype=complex)


@lru_cache(maxsize=None)
def _gammas(n: int) -> tuple:
    """Jordan-Wigner Hermitian gammas with ``gamma_k^2 = 1``; rep(e_k) = i gamma_k."""
    m = n // 2
    out = []
    for j in range(m):
        for pauli in (_X, _Y):
            factors = [_Z] * j + [pauli] + [_I] * (m - j - 1)
            mat = factors[0]
            for f in factors[1:]:
                mat = np.kron(mat, f)
            out.append(1j * mat)
    for mat in out:
        mat.setflags(write=False)
    return tuple(out)


def _require_even(n: int):
    if n % 2:
        raise ValueError("spin representation requires even n")


def matrix_representation(a: CliffordElement) -> np.ndarray:
    """Image of ``a`` in the irreducible ``2^(n/2)``-dimensional spin module."""
    _require_even(a.n)
    gam = _gammas(a.n)
    dim = 2 ** (a.n // 2)
    out = np.zeros((dim, dim), dtype=complex)
    for s, c in a.coeffs.items():
        mat = np.eye(dim, dtype=complex)
        for i in s:
            mat = mat @ gam[i]
        out += complex(c) * mat
    return out


@lru_cache(maxsize=None)
def _chirality(n: int) -> np.ndarray:
    top = CliffordElement.monomial(n, range(n), 1j ** (n // 2))
    gamma = matrix_representation(top)
    gamma = np.round(gamma.real) + 0j
    gamma.setflags(write=False)
    return gamma


def chirality_matrix(n: int) -> np.ndarray:
    """Grading operator ``i^(n/2) rep(e_1...e_n)``.

    The phase is chosen so that ``tr(Gamma rep(e_1...e_n)) = (-2i)^(n/2)``;
    for ``n = 2`` this gives ``Gamma = i rep(e_1 e_2) = diag(1, -1)``.
    """
    _require_even(n)
    return _chirality(n)


def matrix_supertrace(mat: np.ndarray, n: int) -> complex:
    return complex(np.trace(chirality_matrix(n) @ mat))


def from_matrix(mat: np.ndarray, n: int, atol: float = 0.0) -> CliffordElement:
    """Invert ``matrix_representation`` using trace orthogonality of monomials."""
    _require_even(n)
    dim = 2 ** (n // 2)
    mat = np.asarray(mat)
    if mat.shape != (dim, dim):
        raise ValueError(f"expected a {dim}x{dim} matrix")
    out = {}
    for s in basis_monomials(n):
        basis = matrix_representation(CliffordElement.monomial(n, s))
        c = np.trace(basis.conj().T @ mat) / dim
        if abs(c) > atol:
            out[s] = complex(c)
    return CliffordElement(n, out)


def random_element(n: int, rng, max_degree: int | None = None, density: float = 0.5) -> CliffordElement:
    """Random element with small integer / Gaussian-integer coefficients (exact)."""
    out = {}
    for s in basis_monomials(n, max_degree):
        if rng.random() < density:
            out[s] = complex(int(rng.integers(-3, 4)), int(rng.integers(-3, 4)))
    return CliffordElement(n, out)
