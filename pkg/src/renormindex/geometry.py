"""Model geometries: flat tori, the round 2-sphere and the b-cylinder.

Each model has a closed-form metric, so curvature can be computed both
analytically and by finite differences on the sampling grid.

Native charts:

* ``flat_torus``: ``x_i in [0, L_i)``, metric ``delta_ij``.
* ``round_sphere``: ``(theta, phi)``, colatitude on a midpoint grid that
  avoids the poles, metric ``r^2 (dtheta^2 + sin^2 theta dphi^2)``.
* ``b_cylinder``: ``(x, theta)`` on ``(0, 1] x S^1_L`` with the b-metric
  ``(dx/x)^2 + dtheta^2``.  Sampling uses ``s = log x`` on
  ``[-collar_extent, 0]``; ``rho = x`` is the boundary-defining function.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "ModelGeometry",
    "CurvatureData",
    "NormalChart",
    "build_geometry",
    "curvature",
    "normal_coordinates",
    "fejer_weights",
]

KINDS = ("flat_torus", "round_sphere", "b_cylinder")


def fejer_weights(n: int) -> np.ndarray:
    """Fejer's first rule for ``int_{-1}^{1} f(u) du`` at ``u_k = cos((k + 1/2) pi / n)``."""
    theta = (np.arange(n) + 0.5) * np.pi / n
    j = np.arange(1, n // 2 + 1)
    s = np.cos(2 * np.outer(theta, j)) / (4 * j**2 - 1)
    return 2.0 / n * (1 - 2 * s.sum(axis=1))


@dataclass(frozen=True)
class ModelGeometry:
    kind: str
    dimension: int
    params: dict
    resolution: tuple
    axes: tuple  # 1D native-coordinate samples per axis
    weights: np.ndarray  # density weights on the tensor grid, shape = resolution
    metric: np.ndarray  # shape resolution + (n, n)
    rho: np.ndarray  # boundary-defining function on the grid
    orientation: int = 1
    metric_fn: Callable = field(default=None, repr=False, compare=False)

    @property
    def spacing(self) -> tuple:
        if self.kind == "b_cylinder":
            ext = self.params["collar_extent"]
            return (ext / (self.resolution[0] - 1), self.params["boundary_length"] / self.resolution[1])
        if self.kind == "round_sphere":
            return (np.pi / self.resolution[0], 2 * np.pi / self.resolution[1])
        return tuple(L / N for L, N in zip(self.params["periods"], self.resolution))

    @property
    def has_boundary(self) -> bool:
        return self.kind == "b_cylinder"

    def points(self) -> np.ndarray:
        """Grid points in native coordinates, shape ``(npts, n)``."""
        mesh = np.meshgrid(*self.axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def volume(self) -> float:
        """Riemannian volume; infinite for the b-cylinder."""
        if self.kind == "flat_torus":
            return float(np.prod(self.params["periods"]))
        if self.kind == "round_sphere":
            return float(self.weights.sum())
        return float("inf")

    def renormalized_volume(self) -> float:
        """Finite part at ``z = 0`` of ``int rho^z dmu``.

        For the b-cylinder ``int_0^1 x^z dx/x * L = L / z`` has zero finite
        part; closed models return the ordinary volume.
        """
        if self.kind == "b_cylinder":
            return 0.0
        return self.volume()

    def area(self) -> float:
        return self.volume()

    def distance(self, x, y) -> np.ndarray:
        """Geodesic distance between native-coordinate points (broadcasting)."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "flat_torus":
            L = np.asarray(self.params["periods"], dtype=float)
            d = np.abs(x - y) % L
            d = np.minimum(d, L - d)
            return np.sqrt((d**2).sum(axis=-1))
        if self.kind == "round_sphere":
            r = self.params["radius"]
            u, v = _sphere_embed(x), _sphere_embed(y)
            cross = np.linalg.norm(np.cross(u, v), axis=-1)
            dot = (u * v).sum(axis=-1)
            return r * np.arctan2(cross, dot)
        L = self.params["boundary_length"]
        ds = np.log(x[..., 0]) - np.log(y[..., 0])
        dth = np.abs(x[..., 1] - y[..., 1]) % L
        dth = np.minimum(dth, L - dth)
        return np.sqrt(ds**2 + dth**2)

    def injectivity_radius(self) -> float:
        if self.kind == "flat_torus":
            return 0.5 * min(self.params["periods"])
        if self.kind == "round_sphere":
            return np.pi * self.params["radius"]
        return 0.5 * self.params["boundary_length"]

    def integrate(self, values) -> complex:
        """Quadrature against the density on the sampling grid (closed models)."""
        if self.has_boundary:
            raise ValueError("use renorm.regularized_integral on the b-cylinder")
        values = np.asarray(values)
        return (values * self.weights.reshape(values.shape[: self.weights.ndim])).sum()


def _sphere_embed(x):
    th, ph = x[..., 0], x[..., 1]
    return np.stack([np.sin(th) * np.cos(ph), np.sin(th) * np.sin(ph), np.cos(th)], axis=-1)


def _torus_metric(n):
    def g(x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.eye(n), x.shape[:-1] + (n, n)).copy()

    return g


def _sphere_metric(r):
    def g(x):
        x = np.asarray(x, dtype=float)
        out = np.zeros(x.shape[:-1] + (2, 2))
        out[..., 0, 0] = r**2
        out[..., 1, 1] = (r * np.sin(x[..., 0])) ** 2
        return out

    return g


def _bcyl_metric(x):
    x = np.asarray(x, dtype=float)
    out = np.zeros(x.shape[:-1] + (2, 2))
    out[..., 0, 0] = 1.0 / x[..., 0] ** 2
    out[..., 1, 1] = 1.0
    return out


def _log_chart_metric(x):
    x = np.asarray(x, dtype=float)
    return np.broadcast_to(np.eye(2), x.shape[:-1] + (2, 2)).copy()


def build_geometry(spec: dict) -> ModelGeometry:
    """Build a model geometry from ``{"kind", "parameters", "resolution", ...}``.

    Flat parameter keys (``periods``, ``radius``, ...) at the top level are
    accepted as well.
    """
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind not in KINDS:
        raise ValueError(f"unknown geometry kind {kind!r}; expected one of {KINDS}")
    params = dict(spec.pop("parameters", {}) or {})
    resolution = spec.pop("resolution", None)
    dimension = spec.pop("dimension", None)
    params.update(spec)

    if kind == "flat_torus":
        periods = tuple(float(p) for p in np.atleast_1d(params.get("periods", (2 * np.pi, 2 * np.pi))))
        if any(p <= 0 for p in periods):
            raise ValueError("torus periods must be positive")
        n = len(periods)
        if dimension is not None and int(dimension) != n:
            raise ValueError("dimension does not match the number of periods")
        res = _resolution(resolution, n, 32)
        axes = tuple(np.arange(N) * L / N for L, N in zip(periods, res))
        weights = np.full(res, np.prod([L / N for L, N in zip(periods, res)]))
        metric_fn = _torus_metric(n)
        params = {"periods": periods}
    elif kind == "round_sphere":
        r = float(params.get("radius", 1.0))
        if r <= 0:
            raise ValueError("sphere radius must be positive")
        if dimension is not None and int(dimension) != 2:
            raise ValueError("only the 2-sphere is modelled")
        n = 2
        res = _resolution(resolution, n, 32)
        theta = (np.arange(res[0]) + 0.5) * np.pi / res[0]
        phi = np.arange(res[1]) * 2 * np.pi / res[1]
        axes = (theta, phi)
        weights = r**2 * np.outer(fejer_weights(res[0]), np.full(res[1], 2 * np.pi / res[1]))
        metric_fn = _sphere_metric(r)
        params = {"radius": r}
    else:
        L = float(params.get("boundary_length", 2 * np.pi))
        ext = float(params.get("collar_extent", 8.0))
        if L <= 0 or ext <= 0:
            raise ValueError("b-cylinder parameters must be positive")
        if dimension is not None and int(dimension) != 2:
            raise ValueError("the b-cylinder is 2-dimensional")
        n = 2
        res = _resolution(resolution, n, 32)
        s = np.linspace(-ext, 0.0, res[0])
        axes = (np.exp(s), np.arange(res[1]) * L / res[1])
        # trapezoid in s times uniform theta; ds = dx/x
        ws = np.full(res[0], ext / (res[0] - 1))
        ws[[0, -1]] *= 0.5
        weights = np.outer(ws, np.full(res[1], L / res[1]))
        metric_fn = _bcyl_metric
        params = {"boundary_length": L, "collar_extent": ext}

    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack(mesh, axis=-1)
    metric = metric_fn(pts)
    if np.linalg.eigvalsh(metric).min() <= 0:
        raise ValueError("metric is not positive definite on the grid")
    rho = mesh[0].copy() if kind == "b_cylinder" else np.ones(res)
    return ModelGeometry(
        kind=kind,
        dimension=n,
        params=params,
        resolution=tuple(res),
        axes=axes,
        weights=weights,
        metric=metric,
        rho=rho,
        metric_fn=metric_fn,
    )


def _resolution(resolution, n, default):
    if resolution is None:
        res = (default,) * n
    else:
        res = tuple(int(r) for r in np.atleast_1d(resolution))
        if len(res) == 1:
            res = res * n
    if len(res) != n:
        raise ValueError(f"resolution needs {n} entries")
    if min(res) < 4:
        raise ValueError("resolution must be at least 4 per axis")
    return res


# --- curvature -----------------------------------------------------------

@dataclass(frozen=True)
class CurvatureData:
    christoffel: np.ndarray  # [..., k, i, j] = Gamma^k_ij
    riemann: np.ndarray  # orthonormal frame, [..., i, j, k, l] = g(R(e_k, e_l) e_j, e_i)
    scalar: np.ndarray  # kappa = sum_ik R_ikik
    frame: np.ndarray  # [..., a, i]: component a of frame vector e_i

    def antisymmetry_residual(self) -> float:
        R = self.riemann
        return float(max(np.abs(R + np.swapaxes(R, -4, -3)).max(), np.abs(R + np.swapaxes(R, -2, -1)).max()))

    def bianchi_residual(self) -> float:
        """Max of ``|R_ijkl + R_kijl + R_jkil|``."""
        R = self.riemann
        cyc = R + np.einsum("...kijl->...ijkl", R) + np.einsum("...jkil->...ijkl", R)
        return float(np.abs(cyc).max())


def orthonormal_frame(metric: np.ndarray) -> np.ndarray:
    """Frame ``E`` with ``E^T g E = 1`` (``E = L^{-T}`` for ``g = L L^T``)."""
    chol = np.linalg.cholesky(metric)
    return np.swapaxes(np.linalg.inv(chol), -1, -2)


def _christoffel_from_dg(g, dg):
    """``dg[..., c, a, b] = d_c g_ab`` -> ``Gamma[..., k, i, j]``."""
    ginv = np.linalg.inv(g)
    lower = 0.5 * (np.einsum("...jli->...lij", dg) + np.einsum("...ilj->...lij", dg) - dg)
    # lower[..., l, i, j] = 1/2 (d_i g_jl + d_j g_il - d_l g_ij)
    return np.einsum("...kl,...lij->...kij", ginv, lower)


def _christoffel_fd(metric_fn, pts, h):
    n = pts.shape[-1]
    dg = []
    for c in range(n):
        step = np.zeros(pts.shape)
        step[..., c] = h[..., c]
        dg.append((metric_fn(pts + step) - metric_fn(pts - step)) / (2 * h[..., c])[..., None, None])
    return _christoffel_from_dg(metric_fn(pts), np.stack(dg, axis=-3))


def _riemann_coordinate(gamma, dgamma):
    """``Rc[..., a, b, c, d]`` = component a of ``R(d_c, d_d) d_b``; ``dgamma[..., c, a, i, j]``."""
    term1 = np.einsum("...cadb->...abcd", dgamma)
    term2 = np.einsum("...dacb->...abcd", dgamma)
    term3 = np.einsum("...ace,...edb->...abcd", gamma, gamma)
    term4 = np.einsum("...ade,...ecb->...abcd", gamma, gamma)
    return term1 - term2 + term3 - term4


def _frame_riemann(metric, rc):
    lowered = np.einsum("...ae,...ebcd->...abcd", metric, rc)
    E = orthonormal_frame(metric)
    return np.einsum("...ai,...bj,...ck,...dl,...abcd->...ijkl", E, E, E, E, lowered), E


def curvature(geom: ModelGeometry, method: str = "analytic", chart: str = "native", step=None) -> CurvatureData:
    """Christoffels, frame Riemann tensor and scalar curvature on the grid.

    ``method="fd"`` differentiates the closed-form metric by central
    differences with the grid spacing as step (second order).  For the
    b-cylinder ``chart="log"`` uses ``s = log x`` where the metric is flat.
    """
    n = geom.dimension
    mesh = np.meshgrid(*geom.axes, indexing="ij")
    pts = np.stack(mesh, axis=-1)
    metric_fn = geom.metric_fn
    if geom.kind == "b_cylinder" and chart == "log":
        pts = pts.copy()
        pts[..., 0] = np.log(pts[..., 0])
        metric_fn = _log_chart_metric
    metric = metric_fn(pts)
    if np.linalg.eigvalsh(metric).min() <= 0:
        raise ValueError("singular metric sample")

    if method == "analytic":
        gamma = np.zeros(pts.shape[:-1] + (n, n, n))
        if geom.kind == "round_sphere":
            th = pts[..., 0]
            gamma[..., 0, 1, 1] = -np.sin(th) * np.cos(th)
            gamma[..., 1, 0, 1] = gamma[..., 1, 1, 0] = np.cos(th) / np.sin(th)
            K = 1.0 / geom.params["radius"] ** 2
            R = np.zeros(pts.shape[:-1] + (n,) * 4)
            for i in range(n):
                for j in range(n):
                    if i != j:
                        # R_ijkl = K (delta_ik delta_jl - delta_il delta_jk)
                        R[..., i, j, i, j] = K
                        R[..., i, j, j, i] = -K
        elif geom.kind == "b_cylinder" and chart != "log":
            gamma[..., 0, 0, 0] = -1.0 / pts[..., 0]
            R = np.zeros(pts.shape[:-1] + (n,) * 4)
        else:
            R = np.zeros(pts.shape[:-1] + (n,) * 4)
        E = orthonormal_frame(metric)
    elif method == "fd":
        h0 = np.array(geom.spacing if step is None else np.broadcast_to(step, (n,)), dtype=float)
        h = np.broadcast_to(h0, pts.shape).copy()
        # near a coordinate singularity the Christoffels grow like 1/dist;
        # shrinking the step like dist^2 keeps the absolute error O(h^2)
        if geom.kind == "round_sphere":
            th = pts[..., 0]
            h[..., 0] = h[..., 0] * np.minimum(1.0, np.sin(th) ** 2)
        elif geom.kind == "b_cylinder" and chart != "log":
            h[..., 0] = h[..., 0] * np.minimum(1.0, pts[..., 0] ** 2)
        gamma = _christoffel_fd(metric_fn, pts, h)
        dgamma = []
        for c in range(n):
            shift = np.zeros(pts.shape)
            shift[..., c] = h[..., c]
            dgamma.append(
                (_christoffel_fd(metric_fn, pts + shift, h) - _christoffel_fd(metric_fn, pts - shift, h))
                / (2 * h[..., c])[..., None, None, None]
            )
        rc = _riemann_coordinate(gamma, np.stack(dgamma, axis=-4))
        R, E = _frame_riemann(metric, rc)
    else:
        raise ValueError(f"unknown method {method!r}")
    kappa = np.einsum("...ikik->...", R)
    return CurvatureData(christoffel=gamma, riemann=R, scalar=kappa, frame=E)


# --- normal coordinates ---------------------------------------------------

class NormalChart:
    """Geodesic normal chart centred at ``x0``.

    ``exp_map`` takes tangent vectors in orthonormal-frame components and
    returns native coordinates.  ``jacobian`` is ``det(d Exp)`` measured
    numerically from the isometric embedding of the model.
    """

    def __init__(self, geom: ModelGeometry, x0, radius: float, fd_step: float = 1e-5):
        self.geom = geom
        self.x0 = np.asarray(x0, dtype=float)
        self.radius = float(radius)
        self.fd_step = fd_step
        if geom.kind == "round_sphere":
            r = geom.params["radius"]
            p = _sphere_embed(self.x0)
            th, ph = self.x0
            e_theta = np.array([np.cos(th) * np.cos(ph), np.cos(th) * np.sin(ph), -np.sin(th)])
            e_phi = np.array([-np.sin(ph), np.cos(ph), 0.0])
            self._basis = (r * p, e_theta, e_phi)

    def embed(self, v) -> np.ndarray:
        """Image of ``Exp(v)`` in the isometric embedding (Euclidean space)."""
        v = np.asarray(v, dtype=float)
        if self.geom.kind == "round_sphere":
            r = self.geom.params["radius"]
            c, e1, e2 = self._basis
            norm = np.linalg.norm(v, axis=-1, keepdims=True)
            safe = np.where(norm == 0, 1.0, norm)
            direction = (v[..., :1] * e1 + v[..., 1:2] * e2) / safe
            return np.cos(norm / r) * c + r * np.sin(norm / r) * direction
        if self.geom.kind == "b_cylinder":
            # log chart is flat: (s, theta) unrolled
            s0 = np.log(self.x0[0])
            return np.stack([s0 + v[..., 0], self.x0[1] + v[..., 1]], axis=-1)
        return self.x0 + v

    def exp_map(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        self._check(v)
        if self.geom.kind == "round_sphere":
            y = self.embed(v) / self.geom.params["radius"]
            th = np.arccos(np.clip(y[..., 2], -1, 1))
            ph = np.arctan2(y[..., 1], y[..., 0]) % (2 * np.pi)
            return np.stack([th, ph], axis=-1)
        if self.geom.kind == "b_cylinder":
            e = self.embed(v)
            L = self.geom.params["boundary_length"]
            return np.stack([np.exp(e[..., 0]), e[..., 1] % L], axis=-1)
        L = np.asarray(self.geom.params["periods"])
        return (self.x0 + v) % L

    def _check(self, v):
        if np.any(np.linalg.norm(np.atleast_2d(v), axis=-1) > self.radius * (1 + 1e-12)):
            raise ValueError("point lies outside the normal chart")

    def differential(self, v) -> np.ndarray:
        """``d Exp`` at ``v`` as an (embedding dim) x n matrix, by central differences."""
        v = np.asarray(v, dtype=float)
        n = self.geom.dimension
        cols = []
        for i in range(n):
            dv = np.zeros(n)
            dv[i] = self.fd_step
            cols.append((self.embed(v + dv) - self.embed(v - dv)) / (2 * self.fd_step))
        return np.stack(cols, axis=-1)

    def metric_at(self, v) -> np.ndarray:
        M = self.differential(v)
        return np.swapaxes(M, -1, -2) @ M

    def radial_jacobian(self, p) -> np.ndarray:
        """Closed-form ``det(d Exp)`` at geodesic distance ``p`` (the models are isotropic)."""
        p = np.asarray(p, dtype=float)
        if self.geom.kind != "round_sphere":
            return np.ones_like(p)
        r = self.geom.params["radius"]
        u = p / r
        safe = np.where(u == 0, 1.0, u)
        return np.where(u == 0, 1.0, np.sin(safe) / safe) ** (self.geom.dimension - 1)

    def jacobian(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        self._check(v)
        return np.sqrt(np.linalg.det(self.metric_at(v)))


def normal_coordinates(geom: ModelGeometry, x0, radius: float | None = None) -> NormalChart:
    inj = geom.injectivity_radius()
    if radius is None:
        radius = 0.5 * inj
    if radius <= 0 or radius >= inj:
        raise ValueError(f"chart radius {radius} must lie in (0, injectivity radius {inj})")
    if geom.kind == "b_cylinder" and not (0 < x0[0] <= 1):
        raise ValueError("centre must be an interior point")
    return NormalChart(geom, x0, radius)
