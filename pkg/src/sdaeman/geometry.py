"""Embedded manifolds in ambient coordinates.

Every manifold here is a subset of some R^q.  Points are arrays of shape
``(..., q)`` and tangent vectors are ambient vectors of the same shape; all
methods broadcast over leading batch axes.  The only intrinsic coordinates
are charts, used where a local formula is needed.
"""

from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from . import _fd
from .errors import (
    ChartDomainError,
    DegenerateRetractionError,
    InvalidPointError,
    UnsupportedMetricError,
)

POINT_TOL = 1e-9
TANGENT_TOL = 1e-10
POLE_TOL = 1e-8


def _dot(a, b):
    return (a * b).sum(axis=-1)


@dataclass(frozen=True)
class Chart:
    """A local coordinate system ``to_coords: M -> R^n`` with its inverse."""

    name: str
    dim: int
    ambient_dim: int
    in_domain: Callable
    _to: Callable
    _from: Callable
    _to_jac: Optional[Callable] = None
    _from_jac: Optional[Callable] = None

    def contains(self, x):
        return np.asarray(self.in_domain(np.asarray(x, dtype=float)))

    def _require(self, x):
        if not np.all(self.contains(x)):
            raise ChartDomainError(f"point outside the domain of chart {self.name!r}")

    def to_coords(self, x):
        x = np.asarray(x, dtype=float)
        self._require(x)
        return self._to(x)

    def from_coords(self, xi):
        return self._from(np.asarray(xi, dtype=float))

    def to_jacobian(self, x):
        """Differential of ``to_coords``, shape ``(..., n, q)``."""
        x = np.asarray(x, dtype=float)
        self._require(x)
        if self._to_jac is not None:
            return self._to_jac(x)
        return _fd.jacobian(self._to, x)

    def from_jacobian(self, xi):
        """Differential of ``from_coords``, shape ``(..., q, n)``."""
        xi = np.asarray(xi, dtype=float)
        if self._from_jac is not None:
            return self._from_jac(xi)
        return _fd.jacobian(self._from, xi)


def stereographic_chart(k, from_north=True):
    """Stereographic projection of S^k from the north (or south) pole."""
    sgn = 1.0 if from_north else -1.0

    def in_domain(x):
        return 1.0 - sgn * x[..., k] > POLE_TOL

    def to(x):
        return x[..., :k] / (1.0 - sgn * x[..., k])[..., None]

    def to_jac(x):
        den = 1.0 - sgn * x[..., k]
        out = np.zeros(x.shape[:-1] + (k, k + 1))
        out[..., :, :k] = np.eye(k) / den[..., None, None]
        out[..., :, k] = sgn * x[..., :k] / (den * den)[..., None]
        return out

    def frm(xi):
        s = _dot(xi, xi)
        out = np.empty(xi.shape[:-1] + (k + 1,))
        out[..., :k] = 2.0 * xi / (1.0 + s)[..., None]
        out[..., k] = sgn * (s - 1.0) / (1.0 + s)
        return out

    def from_jac(xi):
        s = _dot(xi, xi)
        d = (1.0 + s)[..., None, None]
        out = np.empty(xi.shape[:-1] + (k + 1, k))
        out[..., :k, :] = 2.0 * np.eye(k) / d - 4.0 * xi[..., :, None] * xi[..., None, :] / (d * d)
        out[..., k, :] = sgn * 4.0 * xi / ((1.0 + s) ** 2)[..., None]
        return out

    name = "stereographic-north" if from_north else "stereographic-south"
    return Chart(name, k, k + 1, in_domain, to, frm, to_jac, from_jac)


def identity_chart(k):
    return Chart(
        "identity",
        k,
        k,
        lambda x: np.ones(x.shape[:-1], dtype=bool),
        lambda x: np.array(x, dtype=float),
        lambda xi: np.array(xi, dtype=float),
        lambda x: np.broadcast_to(np.eye(k), x.shape[:-1] + (k, k)).copy(),
        lambda xi: np.broadcast_to(np.eye(k), xi.shape[:-1] + (k, k)).copy(),
    )


class EmbeddedManifold:
    """An n-dimensional manifold realized in ambient R^q.

    Subclasses supply ``residual``, ``project`` and ``retract``; the second
    fundamental form and projector derivative default to finite differences
    of ``project``.
    """

    name = "manifold"
    dim = 0
    ambient_dim = 0
    charts: Sequence[Chart] = ()
    has_connection = True

    def residual(self, x):
        raise NotImplementedError

    def project(self, x, v):
        raise NotImplementedError

    def retract(self, y):
        raise NotImplementedError

    def distance(self, x, y):
        raise UnsupportedMetricError(f"{self.name} has no geodesic distance")

    def injectivity_radius(self, x=None):
        return None

    def random_points(self, rng, size):
        raise NotImplementedError(f"{self.name} has no sampling measure")

    def project_dx(self, x, v):
        """Derivative in ``x`` of ``project(x, v)`` for fixed ``v``: ``(..., q, q)``."""
        return _fd.jacobian(lambda y: self.project(y, v), x)

    def sff(self, x, v, w):
        """Second fundamental form II(v, w), a normal vector at ``x``."""
        dp = self.project_dx(x, w)
        dpw = np.einsum("...ij,...j->...i", dp, v)
        return dpw - self.project(x, dpw)

    def sff_dx(self, x, v, w):
        """Derivative in ``x`` of ``sff(x, v, w)`` for fixed ambient v, w."""
        return _fd.jacobian(lambda y: self.sff(y, v, w), x)

    def normal_project(self, x, v):
        return v - self.project(x, v)

    def tangent_basis(self, x):
        """Orthonormal tangent frame, shape ``(..., n, q)``."""
        x = np.asarray(x, dtype=float)
        eye = np.broadcast_to(np.eye(self.ambient_dim), x.shape[:-1] + (self.ambient_dim,) * 2)
        proj = self.project(x[..., None, :], eye)
        u, _, _ = np.linalg.svd(np.swapaxes(proj, -1, -2))
        return np.swapaxes(u[..., :, : self.dim], -1, -2)

    def membership_error(self, x):
        return np.max(np.abs(self.residual(np.asarray(x, dtype=float))), axis=-1)

    def contains(self, x, tol=POINT_TOL):
        return self.membership_error(x) <= tol

    def check_point(self, x, tol=POINT_TOL):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.ambient_dim:
            raise InvalidPointError(
                f"expected ambient dimension {self.ambient_dim}, got {x.shape[-1]}")
        err = np.max(self.membership_error(x))
        if not err <= tol:
            raise InvalidPointError(f"point is {err:.3g} off {self.name}")
        return x

    def chart_for(self, x):
        for chart in self.charts:
            if np.all(chart.contains(x)):
                return chart
        raise ChartDomainError(f"no chart of {self.name} contains the point")

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"


class Sphere(EmbeddedManifold):
    """Unit sphere S^k in R^(k+1)."""

    has_connection = True

    def __init__(self, k=2):
        self.dim = k
        self.ambient_dim = k + 1
        self.name = f"S{k}"
        self.charts = (stereographic_chart(k, True), stereographic_chart(k, False))

    def residual(self, x):
        return (np.sqrt(_dot(x, x)) - 1.0)[..., None]

    def project(self, x, v):
        s = _dot(x, x)
        return v - (_dot(x, v) / s)[..., None] * x

    def project_dx(self, x, v):
        s = _dot(x, x)[..., None, None]
        xv = _dot(x, v)[..., None, None]
        eye = np.eye(self.ambient_dim)
        outer_xv = x[..., :, None] * v[..., None, :]
        outer_xx = x[..., :, None] * x[..., None, :]
        return -(outer_xv + xv * eye) / s + 2.0 * xv * outer_xx / (s * s)

    def sff(self, x, v, w):
        return -(_dot(v, w) / _dot(x, x))[..., None] * x

    def sff_dx(self, x, v, w):
        s = _dot(x, x)[..., None, None]
        vw = _dot(v, w)[..., None, None]
        outer_xx = x[..., :, None] * x[..., None, :]
        return -vw * (np.eye(self.ambient_dim) / s - 2.0 * outer_xx / (s * s))

    def retract(self, y):
        y = np.asarray(y, dtype=float)
        norm = np.sqrt(_dot(y, y))
        if np.any(norm < 1e-12):
            raise DegenerateRetractionError("cannot retract the origin onto the sphere")
        return y / norm[..., None]

    def distance(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        a = np.sqrt(_dot(x - y, x - y))
        b = np.sqrt(_dot(x + y, x + y))
        return 2.0 * np.arctan2(a, b)

    def injectivity_radius(self, x=None):
        return np.pi

    def random_points(self, rng, size):
        g = rng.standard_normal((size, self.ambient_dim))
        return g / np.linalg.norm(g, axis=-1, keepdims=True)


class Euclidean(EmbeddedManifold):
    """R^k with the Euclidean metric (the real line for k = 1)."""

    def __init__(self, k=1, bounds=(-1.0, 1.0), name=None):
        self.dim = k
        self.ambient_dim = k
        self.bounds = bounds
        self.name = name or ("R" if k == 1 else f"R{k}")
        self.charts = (identity_chart(k),)

    def residual(self, x):
        return np.zeros(np.shape(x)[:-1] + (1,))

    def project(self, x, v):
        return np.array(np.broadcast_to(v, np.broadcast_shapes(np.shape(x), np.shape(v))),
                        dtype=float)

    def project_dx(self, x, v):
        shape = np.broadcast_shapes(np.shape(x), np.shape(v))
        return np.zeros(shape + (self.ambient_dim,))

    def sff(self, x, v, w):
        return np.zeros(np.broadcast_shapes(np.shape(x), np.shape(v), np.shape(w)))

    def sff_dx(self, x, v, w):
        shape = np.broadcast_shapes(np.shape(x), np.shape(v), np.shape(w))
        return np.zeros(shape + (self.ambient_dim,))

    def retract(self, y):
        return np.array(y, dtype=float)

    def distance(self, x, y):
        d = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
        return np.sqrt(_dot(d, d))

    def injectivity_radius(self, x=None):
        return np.inf

    def tangent_basis(self, x):
        x = np.asarray(x, dtype=float)
        return np.broadcast_to(np.eye(self.dim), x.shape[:-1] + (self.dim, self.dim)).copy()

    def random_points(self, rng, size):
        lo, hi = self.bounds
        return rng.uniform(lo, hi, size=(size, self.ambient_dim))


class ImplicitManifold(EmbeddedManifold):
    """A level set ``{x : residual(x) = 0}`` defined by user callables.

    The projector is built from the residual's Jacobian and the retraction is
    a Gauss-Newton projection, so only ``residual`` is strictly required.
    """

    def __init__(self, name, dim, ambient_dim, residual, residual_jac=None,
                 distance=None, injectivity_radius=None, charts=(), sampler=None):
        self.name = name
        self.dim = dim
        self.ambient_dim = ambient_dim
        self._residual = residual
        self._residual_jac = residual_jac
        self._distance = distance
        self._inj = injectivity_radius
        self.charts = tuple(charts)
        self._sampler = sampler

    def residual(self, x):
        return np.asarray(self._residual(np.asarray(x, dtype=float)))

    def _normals(self, x):
        if self._residual_jac is not None:
            return np.asarray(self._residual_jac(x))
        return _fd.jacobian(self._residual, x)

    def project(self, x, v):
        n = self._normals(np.asarray(x, dtype=float))
        gram = np.einsum("...ij,...kj->...ik", n, n)
        coef = np.linalg.solve(gram, np.einsum("...ij,...j->...i", n, v)[..., None])[..., 0]
        return v - np.einsum("...ij,...i->...j", n, coef)

    def retract(self, y, tol=1e-14, max_iter=50):
        x = np.array(y, dtype=float)
        for _ in range(max_iter):
            r = self.residual(x)
            if np.max(np.abs(r)) <= tol:
                return x
            n = self._normals(x)
            gram = np.einsum("...ij,...kj->...ik", n, n)
            if np.any(np.abs(np.linalg.det(gram)) < 1e-300):
                raise DegenerateRetractionError(f"singular normal space on {self.name}")
            coef = np.linalg.solve(gram, r[..., None])[..., 0]
            x = x - np.einsum("...ij,...i->...j", n, coef)
        if np.max(np.abs(self.residual(x))) > 1e-12:
            raise DegenerateRetractionError(f"retraction onto {self.name} did not converge")
        return x

    def distance(self, x, y):
        if self._distance is None:
            return super().distance(x, y)
        return self._distance(x, y)

    def injectivity_radius(self, x=None):
        if callable(self._inj):
            return self._inj(x)
        return self._inj

    def random_points(self, rng, size):
        if self._sampler is None:
            return super().random_points(rng, size)
        return self._sampler(rng, size)


_MANIFOLDS = {
    "S2": lambda: Sphere(2),
    "R": lambda: Euclidean(1),
    "R2": lambda: Euclidean(2),
    "R3": lambda: Euclidean(3),
}


def register_manifold(name, factory):
    """Register a zero-argument factory returning an :class:`EmbeddedManifold`."""
    _MANIFOLDS[name] = factory


def get_manifold(name):
    try:
        return _MANIFOLDS[name]()
    except KeyError:
        raise KeyError(f"unknown manifold {name!r}") from None


@dataclass(frozen=True)
class ManifoldPoint:
    manifold: EmbeddedManifold
    coords: np.ndarray = field(repr=False)

    def __post_init__(self):
        coords = np.array(self.coords, dtype=float)
        self.manifold.check_point(coords)
        coords.setflags(write=False)
        object.__setattr__(self, "coords", coords)


@dataclass(frozen=True)
class TangentVector:
    base: ManifoldPoint
    vec: np.ndarray = field(repr=False)

    def __post_init__(self):
        vec = np.array(self.vec, dtype=float)
        m = self.base.manifold
        err = np.max(np.abs(m.project(self.base.coords, vec) - vec))
        if err > TANGENT_TOL * max(1.0, float(np.max(np.abs(vec)))):
            raise InvalidPointError(f"vector is not tangent (normal part {err:.3g})")
        vec.setflags(write=False)
        object.__setattr__(self, "vec", vec)


def _as_point(m, x):
    if isinstance(x, ManifoldPoint):
        return x
    return ManifoldPoint(m, x)


def project_tangent(m, x, v):
    """Orthogonal projection of an ambient vector onto T_x M."""
    p = _as_point(m, x)
    return TangentVector(p, m.project(p.coords, np.asarray(v, dtype=float)))


def retract(m, y):
    """Nearest-point map from the ambient space back onto ``m``."""
    return ManifoldPoint(m, m.retract(np.asarray(y, dtype=float)))


def geodesic_distance(m, x, y):
    p = _as_point(m, x)
    q = _as_point(m, y)
    return float(m.distance(p.coords, q.coords))


def riemannian_gradient(m, x, df):
    """Gradient of a covector under the induced metric.

    ``df`` is either an ambient covector (array) or a callable evaluating the
    differential on tangent vectors.
    """
    p = _as_point(m, x)
    if callable(df):
        basis = m.tangent_basis(p.coords)
        coeffs = np.array([float(df(e)) for e in basis])
        return TangentVector(p, coeffs @ basis)
    return TangentVector(p, m.project(p.coords, np.asarray(df, dtype=float)))


def chart_roundtrip(chart, x):
    """Return ``(coords, back)`` where ``back = from_coords(to_coords(x))``."""
    xi = chart.to_coords(x)
    return xi, chart.from_coords(xi)
