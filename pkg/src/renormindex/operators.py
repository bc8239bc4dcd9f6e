"""Dirac operators, connection Laplacians and spectra on the model geometries.

Discretizations
---------------
Flat torus, no twist
    Plane waves ``exp(i p.x)``; every Fourier mode is an invariant 2x2
    block, so the discretization is exact up to the momentum cutoff.
Flat torus, twist degree ``d != 0``
    Constant field ``B = 2 pi d / Area`` in Landau gauge.  The twisted
    connection is ``nabla = d - i A`` with curvature ``F = -i B dx^1 ^ dx^2``.
    Magnetic translations commute with ``D``; the basis is Landau levels
    (``|d|`` guiding centres, identical blocks).  ``D`` pairs level ``k`` of
    the zero-mode chirality with level ``k-1`` of the other, so the levels
    ``0..K`` give exactly invariant 1x1 and 2x2 blocks.
Round 2-sphere
    Rotating frame ``e_1 = d_theta / r``, ``e_2 = d_phi / (r sin theta)``.
    Fourier in ``phi`` (half-integer modes for the spin structure, shifted
    by ``d/2`` for a monopole twist) and, after the unitary substitution
    ``u = U / sqrt(sin theta)``, a staggered second-order grid in ``theta``
    (the two chiral components alternate, half a step apart).  The staggering
    avoids doublers; at each pole the faster-vanishing component carries
    the Dirichlet point, which is what the regular solutions require.

Conventions: ``rep(e_1) = i sigma_x``, ``rep(e_2) = i sigma_y`` and the
grading is ``Gamma = i rep(e_1 e_2) = sigma_z``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse

from .charclass import FormPolynomial
from .clifford import CliffordElement, chirality_matrix, matrix_representation
from .geometry import ModelGeometry, curvature as geometry_curvature

__all__ = [
    "Block",
    "DiracAssembly",
    "SpectralData",
    "build_dirac",
    "connection_laplacian",
    "curvature_split",
    "lichnerowicz_residual",
    "spectrum",
    "default_kernel_threshold",
    "SpectralGapError",
]

log = logging.getLogger(__name__)

DEFAULT_SIZE_CAP = 16384

_REP_E = (matrix_representation(CliffordElement.generator(2, 0)), matrix_representation(CliffordElement.generator(2, 1)))
_REP_E12 = matrix_representation(CliffordElement.monomial(2, (0, 1)))
_GAMMA = chirality_matrix(2)


class SpectralGapError(ValueError):
    """Raised when no clear spectral gap separates the kernel."""

    def __init__(self, message, candidates=()):
        super().__init__(message)
        self.candidates = tuple(candidates)


@dataclass
class Block:
    """One invariant subspace of the discretized operator.

    ``chirality`` is +1/-1 per basis vector; ``multiplicity`` counts
    identical copies (Landau guiding centres).  ``test`` holds smooth test
    sections as columns (``None`` means the block is exact and the residual
    is measured in operator norm).
    """

    D: np.ndarray
    laplacian: np.ndarray
    twist_term: np.ndarray  # c(F^{W/S})
    scalar_term: np.ndarray  # kappa / 4
    chirality: np.ndarray
    multiplicity: int = 1
    label: tuple = ()
    test: np.ndarray | None = None
    # diagonal-kernel data: per basis vector, the polar angle it sits at and |psi|^2 per |coef|^2
    node: np.ndarray | None = None
    density: np.ndarray | None = None
    # uniform models: basis vectors with equal site share one spatial profile
    site: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.D.shape[0]


@dataclass
class DiracAssembly:
    geometry: ModelGeometry
    twist_degree: int
    blocks: list
    twist_curvature: FormPolynomial  # F^{W/S} in the orthonormal coframe
    field_strength: float
    gauge_shift: tuple = (0.0, 0.0)
    meta: dict = field(default_factory=dict)

    @property
    def size(self) -> int:
        return sum(b.size * b.multiplicity for b in self.blocks)

    def _expand(self, attr) -> np.ndarray:
        mats = []
        for b in self.blocks:
            mats.extend([getattr(b, attr)] * b.multiplicity)
        return scipy.linalg.block_diag(*mats)

    @property
    def D(self) -> np.ndarray:
        return self._expand("D")

    @property
    def grading(self) -> np.ndarray:
        return np.diag(np.concatenate([np.repeat(b.chirality[None], b.multiplicity, 0).ravel() for b in self.blocks])).astype(complex)

    def hermiticity_defect(self) -> float:
        num = max(np.abs(b.D - b.D.conj().T).max() for b in self.blocks)
        den = max(np.abs(b.D).max() for b in self.blocks) or 1.0
        return float(num / den)

    def grading_defect(self) -> float:
        """``max |Gamma D + D Gamma| / max |D|`` over blocks."""
        num = max(np.abs(b.chirality[:, None] * b.D + b.D * b.chirality[None, :]).max() for b in self.blocks)
        den = max(np.abs(b.D).max() for b in self.blocks) or 1.0
        return float(num / den)


# --- torus ----------------------------------------------------------------

def _ladder(size):
    return scipy.sparse.diags(np.sqrt(np.arange(1, size)), 1, format="csr").astype(complex)


def _torus_plane_waves(geom, K, shift):
    L = geom.params["periods"]
    blocks = []
    for k1 in range(-K, K + 1):
        for k2 in range(-K, K + 1):
            p = (2 * np.pi * k1 / L[0] - shift[0], 2 * np.pi * k2 / L[1] - shift[1])
            D = sum(_REP_E[j] * (1j * p[j]) for j in range(2))
            lap = (p[0] ** 2 + p[1] ** 2) * np.eye(2, dtype=complex)
            zero = np.zeros((2, 2), dtype=complex)
            blocks.append(
                Block(
                    D=D,
                    laplacian=lap,
                    twist_term=zero,
                    scalar_term=zero.copy(),
                    chirality=np.array([1.0, -1.0]),
                    label=(k1, k2),
                    site=np.zeros(2, dtype=int),
                )
            )
    return blocks


def _torus_landau(geom, d, K):
    area = geom.area()
    B = 2 * np.pi * d / area
    b = abs(B)
    size = K + 2
    a = _ladder(size)
    ad = a.conj().T
    # kinetic momenta pi_j = -i nabla_j with [pi_1, pi_2] = i B
    pi1 = np.sqrt(b / 2) * (a + ad)
    pi2 = (-1j if d > 0 else 1j) * np.sqrt(b / 2) * (a - ad)
    kron = scipy.sparse.kron
    D_full = (kron(_REP_E[0], 1j * pi1) + kron(_REP_E[1], 1j * pi2)).todok()
    lap_full = kron(np.eye(2), pi1 @ pi1 + pi2 @ pi2).todok()
    F12 = -1j * B
    cF_full = kron(F12 * _REP_E12, scipy.sparse.identity(size)).todok()
    # D only couples level k of the zero-mode chirality to level k-1 of the
    # other one, so levels split into exact 1x1 (k = 0) and 2x2 blocks.
    zero_side = 0 if d > 0 else 1
    blocks = []
    for k in range(K + 1):
        idx = [zero_side * size + k]
        if k:
            idx.append((1 - zero_side) * size + k - 1)
        idx = sorted(idx)
        take = lambda M: np.array([[M.get((i, j), 0.0) for j in idx] for i in idx], dtype=complex)
        chir = np.array([1.0 if i < size else -1.0 for i in idx])
        blocks.append(
            Block(
                D=take(D_full),
                laplacian=take(lap_full),
                twist_term=take(cF_full),
                scalar_term=np.zeros((len(idx), len(idx)), dtype=complex),
                chirality=chir,
                multiplicity=abs(d),
                label=("landau", k),
                site=np.array([i % size for i in idx]),
            )
        )
    return blocks, B


# --- sphere ---------------------------------------------------------------

def _sphere_layout(m, d, N):
    """Staggered positions for one Fourier block.

    At each pole one component vanishes faster than the other (the sign of
    ``m +- d/2`` decides which); that component gets the Dirichlet point on
    the pole.  Components alternate along ``k * hp``.
    """
    small0 = 1 if m + 0.5 * d > 0 else 0  # 0 = U (positive), 1 = V
    small_pi = 0 if m - 0.5 * d > 0 else 1
    K = 2 * N if small0 == small_pi else 2 * N + 1
    comp = (small0 + np.arange(K + 1)) % 2
    return K, comp


def _sphere_blocks(geom, d, test_power=4):
    r = geom.params["radius"]
    N = geom.resolution[0]
    Nphi = geom.resolution[1]
    offset = 0.5 * ((d + 1) % 2)  # m in Z + (d+1)/2
    mmax = Nphi // 2
    ms = np.arange(-mmax, mmax + 1) + offset
    ms = ms[np.abs(ms) < mmax]
    blocks = []
    for m in ms:
        K, comp = _sphere_layout(m, d, N)
        hp = np.pi / K
        h = 2 * hp
        pos = np.arange(K + 1) * hp
        s, c = np.sin(pos), np.cos(pos)
        mu = m + 0.5 * d * c
        iu = np.array([k for k in range(1, K) if comp[k] == 0])
        iv = np.array([k for k in range(1, K) if comp[k] == 1])
        where_u = {k: i for i, k in enumerate(iu)}
        where_v = {k: i for i, k in enumerate(iv)}

        # (D psi)_V = i (u' + cot/2 u - mu/s u) on the smooth variable u = U / sqrt(s)
        C = np.zeros((len(iv), len(iu)), dtype=complex)
        for a, k in enumerate(iv):
            pot = (0.5 * c[k] - mu[k]) / s[k]
            for kk, sgn in ((k - 1, -1.0), (k + 1, 1.0)):
                if kk in where_u:
                    C[a, where_u[kk]] += 1j * (sgn / h + 0.5 * pot)
        # unitary rescaling to U = sqrt(s) u makes the weighted adjoint a plain adjoint
        Chat = np.sqrt(s[iv])[:, None] * C / np.sqrt(s[iu])[None, :]
        nu, nv = len(iu), len(iv)
        D = np.zeros((nu + nv, nu + nv), dtype=complex)
        D[nu:, :nu] = Chat
        D[:nu, nu:] = Chat.conj().T

        def weighted_laplacian(idx, where, q):
            # -(1/s)(s f')' + q^2/s^2 f, conservative form; the flux vanishes at a pole
            M = np.zeros((len(idx), len(idx)))
            for a, k in enumerate(idx):
                for kk, sk in ((k + 2, s[k + 1]), (k - 2, s[k - 1])):
                    M[a, a] += sk / (h**2 * s[k])
                    if kk in where:
                        M[a, where[kk]] -= sk / (h**2 * s[k])
                M[a, a] += q[k] ** 2 / s[k] ** 2
            w = np.sqrt(s[idx])
            return w[:, None] * M / w[None, :]

        lap = scipy.linalg.block_diag(
            weighted_laplacian(iu, where_u, mu - 0.5 * c), weighted_laplacian(iv, where_v, mu + 0.5 * c)
        ).astype(complex)
        cF = np.diag(np.concatenate([np.full(nu, -0.5 * d), np.full(nv, 0.5 * d)])).astype(complex)
        k4 = 0.5 * np.eye(nu + nv, dtype=complex)

        test = None
        if abs(m) <= 2.5:
            cols = []
            for k in range(2):
                fu = np.sqrt(s[iu]) * s[iu] ** test_power * c[iu] ** k
                fv = np.sqrt(s[iv]) * s[iv] ** test_power * c[iv] ** k
                cols.append(np.concatenate([fu, np.zeros(nv)]))
                cols.append(np.concatenate([np.zeros(nu), fv]))
            test, _ = np.linalg.qr(np.array(cols).T)
        where = np.concatenate([pos[iu], pos[iv]])
        blocks.append(
            Block(
                D=D / r,
                laplacian=lap / r**2,
                twist_term=cF / r**2,
                scalar_term=k4 / r**2,
                chirality=np.concatenate([np.ones(nu), -np.ones(nv)]),
                label=(float(m),),
                test=test,
                node=where,
                density=1.0 / (2 * np.pi * h * np.sin(where) * r**2),
            )
        )
    return blocks


def build_dirac(geom: ModelGeometry, twist_degree: int = 0, *, fourier_cutoff: int = 16, landau_levels: int = 4000, gauge_shift=(0.0, 0.0)) -> DiracAssembly:
    """Assemble the twisted spin Dirac operator on a 2-dimensional model.

    ``gauge_shift`` adds a constant (flat) connection ``-i a`` to the torus
    twist; for ``a_j = 2 pi m_j / L_j`` it is an exact gauge transform.
    """
    d = int(twist_degree)
    if geom.dimension != 2 or geom.kind not in ("flat_torus", "round_sphere"):
        raise ValueError(f"Dirac assembly supports the 2-torus and 2-sphere, not {geom.kind} (n={geom.dimension})")
    if abs(d) > 8:
        raise ValueError("twist degree limited to |d| <= 8")
    n = 2
    if geom.kind == "flat_torus":
        if d == 0:
            blocks = _torus_plane_waves(geom, fourier_cutoff, gauge_shift)
            B = 0.0
        else:
            blocks, B = _torus_landau(geom, d, landau_levels)
        F = FormPolynomial(n, {(0, 1): -1j * B}) if B else FormPolynomial(n)
    else:
        blocks = _sphere_blocks(geom, d)
        r = geom.params["radius"]
        B = d / (2 * r**2)
        F = FormPolynomial(n, {(0, 1): -1j * B}) if d else FormPolynomial(n)
    asm = DiracAssembly(geometry=geom, twist_degree=d, blocks=blocks, twist_curvature=F, field_strength=B, gauge_shift=tuple(gauge_shift))
    if asm.hermiticity_defect() > 1e-10:
        raise RuntimeError("assembled Dirac operator is not self-adjoint")
    if asm.grading_defect() > 1e-10:
        raise RuntimeError("assembled Dirac operator is not odd")
    return asm


def connection_laplacian(assembly: DiracAssembly) -> np.ndarray:
    return assembly._expand("laplacian")


def twist_clifford_term(assembly: DiracAssembly) -> np.ndarray:
    return assembly._expand("twist_term")


# --- curvature splitting ---------------------------------------------------

@dataclass
class CurvatureSplit:
    spinor: dict  # (i, j) -> CliffordElement R^W(e_i, e_j)
    twist: FormPolynomial
    connection_residual: float  # |curvature of the explicit connection - (R^W + F)|
    commutator_residual: float  # max |[F(e_i, e_j), c(e^k)]|


def curvature_split(assembly: DiracAssembly, point=None) -> CurvatureSplit:
    """Split ``(nabla^W)^2`` into the spinor part ``R^W`` and the twist ``F``.

    ``R^W(e_i, e_j) = 1/4 sum_kl g(R(e_i, e_j) e_k, e_l) c(e^k) c(e^l)``
    is built from the frame Riemann tensor.  It is compared with the
    curvature of the explicit connection form used by the discretization,
    differentiated numerically.
    """
    geom = assembly.geometry
    n = 2
    curv = geometry_curvature(geom, "analytic")
    idx = (geom.resolution[0] // 3, 0) if point is None else tuple(point)
    R = curv.riemann[idx]
    RW = {}
    for i in range(n):
        for j in range(n):
            coeffs = {}
            el = CliffordElement(n)
            for k in range(n):
                for l in range(n):
                    # g(R(e_i, e_j) e_k, e_l) = R_{lkij}
                    c = 0.25 * R[l, k, i, j]
                    if c:
                        el = el + CliffordElement.generator(n, k) * CliffordElement.generator(n, l) * c
            RW[(i, j)] = el
    F = assembly.twist_curvature

    # curvature of the explicit connection, in matrix form on the spinor x line bundle
    total_expected = matrix_representation(RW[(0, 1)]) + complex(F[(0, 1)]) * np.eye(2)
    if geom.kind == "round_sphere":
        r = geom.params["radius"]
        th = geom.axes[0][idx[0]]
        d = assembly.twist_degree

        def omega_phi(t):
            # spin connection 1/2 cos(theta) e1 e2 plus twist -i A_phi, A = -(d/2) cos(theta) dphi
            return 0.5 * np.cos(t) * _REP_E12 + 1j * 0.5 * d * np.cos(t) * np.eye(2)

        eps = 1e-5
        dtheta_omega = (omega_phi(th + eps) - omega_phi(th - eps)) / (2 * eps)
        measured = dtheta_omega / (r**2 * np.sin(th))
    else:
        # flat frame, Landau gauge A = (0, B x): curvature -i B
        measured = -1j * assembly.field_strength * np.eye(2)
    connection_residual = float(np.abs(measured - total_expected).max())

    Fmat = complex(F[(0, 1)]) * np.eye(2)
    comm = max(np.abs(Fmat @ e - e @ Fmat).max() for e in _REP_E)
    return CurvatureSplit(spinor=RW, twist=F, connection_residual=connection_residual, commutator_residual=float(comm))


def lichnerowicz_residual(assembly: DiracAssembly) -> float:
    """Size of ``D^2 - Delta^W - c(F) - kappa/4`` on the discretization.

    Exact blocks are measured in operator norm; blocks carrying smooth test
    sections are measured as the largest singular value of the residual
    restricted to their span (the high-frequency part of two different
    second-order stencils does not converge in operator norm).
    """
    worst = 0.0
    for b in assembly.blocks:
        res = b.D @ b.D - b.laplacian - b.twist_term - b.scalar_term
        if b.test is None:
            if assembly.geometry.kind == "round_sphere":
                continue
            val = np.linalg.norm(res, 2)
        else:
            val = np.linalg.norm(res @ b.test, 2)
        worst = max(worst, float(val))
    return worst


# --- spectra ----------------------------------------------------------------

@dataclass
class SpectralData:
    """Eigen-decomposition, block by block.

    ``heat_exponents`` are the values ``mu`` entering ``exp(-t mu)``:
    ``lambda^2`` for a Dirac operator, the eigenvalue itself for a
    Laplace-type operator.
    """

    eigenvalues: np.ndarray
    block_values: list
    block_vectors: list
    blocks: list
    kernel_threshold: float
    kernel_plus: int
    kernel_minus: int
    kind: str = "dirac"
    assembly: DiracAssembly | None = None
    # laplace kind: basis(points, order) -> values of the order-th derivative of the basis functions
    basis: object = None
    operator: np.ndarray | None = None

    @property
    def heat_exponents(self) -> np.ndarray:
        return self.eigenvalues**2 if self.kind == "dirac" else self.eigenvalues

    @property
    def index(self) -> int:
        return self.kernel_plus - self.kernel_minus

    @property
    def kernel_dimension(self) -> int:
        return self.kernel_plus + self.kernel_minus

    @property
    def eigenvectors(self) -> np.ndarray:
        if not self.blocks:
            return self.block_vectors[0]
        vecs = []
        for b, v in zip(self.blocks, self.block_vectors):
            vecs.extend([v] * b.multiplicity)
        return scipy.linalg.block_diag(*vecs)

    def heat_trace(self, t: float) -> float:
        return float(np.exp(-t * self.heat_exponents).sum())

    def heat_supertrace(self, t: float) -> float:
        """``sum_b mult * tr(Gamma exp(-t D^2))`` computed in the eigenbasis."""
        total = 0.0
        for b, lam, vec in zip(self.blocks, self.block_values, self.block_vectors):
            weights = np.exp(-t * lam**2)
            chir = np.einsum("ik,i,ik->k", vec.conj(), b.chirality, vec).real
            total += b.multiplicity * float((weights * chir).sum())
        return total


def default_kernel_threshold(abs_values: np.ndarray, ratio: float = 10.0) -> float:
    """Geometric mean across the gap between numerically-zero and nonzero ``|lambda|``."""
    a = np.sort(np.abs(abs_values))
    scale = max(1.0, float(a[-1])) if a.size else 1.0
    small = a[a < 1e-6 * scale]
    large = a[a >= 1e-6 * scale]
    if large.size == 0:
        return 1e-6 * scale
    lo = max(float(small.max()) if small.size else 0.0, 1e-14 * scale)
    hi = float(large.min())
    if hi / lo < ratio:
        raise SpectralGapError(f"ambiguous spectral gap: {lo:.3e} vs {hi:.3e}", candidates=(lo, hi))
    return float(np.sqrt(lo * hi))


def spectrum(assembly: DiracAssembly, kernel_threshold: float | None = None, size_cap: int = DEFAULT_SIZE_CAP, residual_tol: float = 1e-8) -> SpectralData:
    """Dense Hermitian eigendecomposition of every block.

    ``size_cap`` bounds the largest block handed to the dense solver.
    """
    largest = max(b.size for b in assembly.blocks)
    if largest > size_cap:
        raise ValueError(f"block size {largest} exceeds cap {size_cap}")
    if assembly.hermiticity_defect() > 1e-10:
        raise ValueError("operator is not Hermitian within tolerance")
    values, vectors = [], []
    for b in assembly.blocks:
        lam, vec = np.linalg.eigh(b.D)
        resid = np.linalg.norm(b.D @ vec - vec * lam, axis=0)
        if resid.max() > residual_tol * max(1.0, np.abs(lam).max()):
            raise RuntimeError(f"eigenpair residual {resid.max():.2e} too large")
        values.append(lam)
        vectors.append(vec)
    all_values = np.sort(np.concatenate([np.repeat(v[None], b.multiplicity, 0).ravel() for v, b in zip(values, assembly.blocks)]))
    thr = default_kernel_threshold(all_values) if kernel_threshold is None else float(kernel_threshold)
    plus = minus = 0
    for b, lam, vec in zip(assembly.blocks, values, vectors):
        ker = vec[:, np.abs(lam) < thr]
        if ker.shape[1] == 0:
            continue
        dim = ker.shape[1]
        # projector trace is basis independent even when kernel vectors mix chirality
        tr_gamma = float(np.einsum("ik,i,ik->", ker.conj(), b.chirality, ker).real)
        p = (dim + tr_gamma) / 2
        if abs(p - round(p)) > 1e-6:
            raise RuntimeError("kernel chirality split is not integral")
        plus += b.multiplicity * int(round(p))
        minus += b.multiplicity * (dim - int(round(p)))
    return SpectralData(
        eigenvalues=all_values,
        block_values=values,
        block_vectors=vectors,
        blocks=list(assembly.blocks),
        kernel_threshold=thr,
        kernel_plus=plus,
        kernel_minus=minus,
        assembly=assembly,
    )
