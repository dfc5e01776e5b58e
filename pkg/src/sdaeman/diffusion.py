"""Second-order calculus: diffusors, the hat operator and diffusion generators.

Two independent routes are kept on purpose.  Chart-local diffusors store
``(a, b)`` for ``L = a^i d_i + b^ij d_ij`` and are applied by central
differences in a chart.  The extrinsic route evaluates a generator on an
ambient extension ``F`` of a test function as

    G(s)[F] = D^2F(s, s) + DF . c_G(s)

where ``c_G`` is an ambient vector: ``II(s, s)`` for the Ito generator and
``Ds . s`` for the Stratonovich one.  The solver uses the extrinsic route; the
chart route is its oracle.
"""

from dataclasses import dataclass

import numpy as np

from . import _fd
from .errors import ChartDomainError, GeneratorError, UnsupportedMetricError
from .geometry import Chart, TangentVector, _as_point, identity_chart

SYMMETRY_TOL = 1e-12
SYMBOL_TOL = 1e-8


def _mv(mat, vec):
    return np.einsum("...ij,...j->...i", mat, vec)


def _quad(mat, v, w):
    return np.einsum("...i,...ij,...j->...", v, mat, w)


def _u_or_empty(x, u):
    if u is None:
        return np.zeros(np.shape(x)[:-1] + (0,))
    return np.asarray(u, dtype=float)


@dataclass(frozen=True)
class Diffusor:
    """Chart-local diffusor ``a^i d_i + b^ij d_ij`` at ``base``."""

    base: np.ndarray
    chart: Chart
    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.array(self.a, dtype=float).reshape(-1)
        b = np.array(self.b, dtype=float).reshape(a.size, a.size)
        if np.max(np.abs(b - b.T), initial=0.0) > SYMMETRY_TOL * max(1.0, np.max(np.abs(b), initial=0.0)):
            raise ValueError("second-order part of a diffusor must be symmetric")
        object.__setattr__(self, "base", np.array(self.base, dtype=float))
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def coords(self):
        return self.chart.to_coords(self.base)

    def first_order_part(self):
        return Diffusor(self.base, self.chart, self.a, np.zeros_like(self.b))

    def __sub__(self, other):
        if other.chart is not self.chart or not np.array_equal(other.base, self.base):
            raise ValueError("diffusors live in different fibres or charts")
        return Diffusor(self.base, self.chart, self.a - other.a, self.b - other.b)


def _chart_jets(chart, f, xi, derivs=None):
    if derivs is not None:
        grad, hess = derivs(xi)
        return np.asarray(grad, dtype=float), np.asarray(hess, dtype=float)
    g = lambda z: f(chart.from_coords(z))
    return _fd.gradient(g, xi), _fd.hessian(g, xi)


def apply_diffusor(L, f, derivs=None):
    """``L[f]`` with ``f`` an ambient-point function.

    ``derivs`` optionally returns analytic chart gradient and Hessian of
    ``f o from_coords``; otherwise central differences are used.
    """
    xi = L.coords
    grad, hess = _chart_jets(L.chart, f, xi, derivs)
    return float(L.a @ grad + np.sum(L.b * hess))


def hat(L):
    """Symmetric second-order symbol of ``L`` as a chart matrix."""
    return L.b.copy()


def hat_pair(L, f, g):
    """``hat(L)(df, dg) = b^ij d_i f d_j g``."""
    xi = L.coords
    gf = _fd.gradient(lambda z: f(L.chart.from_coords(z)), xi)
    gg = _fd.gradient(lambda z: g(L.chart.from_coords(z)), xi)
    return float(gf @ L.b @ gg)


def hat_identity(L, f, g):
    """``(L[fg] - f L[g] - g L[f]) / 2`` evaluated by chart differences."""
    x = L.base
    fg = lambda y: f(y) * g(y)
    return 0.5 * (apply_diffusor(L, fg) - f(x) * apply_diffusor(L, g) - g(x) * apply_diffusor(L, f))


def pushforward_diffusor(phi, L, chart_out=None, out_dim=None):
    """Image of ``L`` under the diffusion map of ``phi``.

    ``phi`` maps ambient points of M to ambient points of N.  In charts the
    first-order part becomes ``a^i d_i phi^k + b^ij d_ij phi^k`` and the
    second-order part ``b^ij d_i phi^k d_j phi^l``.
    """
    y = np.asarray(phi(L.base), dtype=float).reshape(-1)
    if chart_out is None:
        chart_out = identity_chart(out_dim or y.size)
    if not np.all(chart_out.contains(y)):
        raise ChartDomainError(f"image point outside chart {chart_out.name!r}")
    xi = L.coords

    def local(z):
        return chart_out.to_coords(np.asarray(phi(L.chart.from_coords(z)), dtype=float).reshape(-1))

    jac = _fd.jacobian(local, xi)
    k = jac.shape[0]
    hess = np.stack([_fd.hessian(lambda z, i=i: local(z)[i], xi) for i in range(k)])
    a = jac @ L.a + np.einsum("ij,kij->k", L.b, hess)
    b = jac @ L.b @ jac.T
    return Diffusor(y, chart_out, a, 0.5 * (b + b.T))


def _field_value(field, x, u):
    return field(x, _u_or_empty(x, u))


def covariant_derivative(m, field, x, u=None):
    """Levi-Civita ``nabla_s s`` of the induced metric: ``P_x(Ds . s)``."""
    p = _as_point(m, x)
    xs = p.coords
    uu = _u_or_empty(xs, u)
    s = field(xs, uu)
    return TangentVector(p, m.project(xs, _mv(field.jac_x(xs, uu), s)))


def _chart_field_jets(m, field, x, u, chart):
    """Chart components of ``field`` at ``x`` and their chart Jacobian."""
    uu = _u_or_empty(x, u)

    def local(z):
        y = chart.from_coords(z)
        return chart.to_jacobian(y) @ field(y, uu)

    xi = chart.to_coords(x)
    return local(xi), _fd.jacobian(local, xi)


def stratonovich_generator(m, field, x, u=None, chart=None):
    """``G_S(s)``: the diffusor ``f -> s[s[f]]`` in a chart."""
    x = _as_point(m, x).coords
    chart = chart or m.chart_for(x)
    s, ds = _chart_field_jets(m, field, x, u, chart)
    b = np.outer(s, s)
    return Diffusor(x, chart, ds @ s, 0.5 * (b + b.T))


def ito_generator(m, field, x, u=None, chart=None):
    """``G_I(s)``: the Hessian form ``f -> s s f - (nabla_s s) f`` in a chart."""
    if not getattr(m, "has_connection", False):
        raise UnsupportedMetricError(f"{m.name} carries no connection for the Ito generator")
    x = _as_point(m, x).coords
    chart = chart or m.chart_for(x)
    gs = stratonovich_generator(m, field, x, u, chart)
    nabla = covariant_derivative(m, field, x, u).vec
    return Diffusor(x, chart, gs.a - chart.to_jacobian(x) @ nabla, gs.b)


class Generator:
    """A diffusion generator evaluated extrinsically.

    ``first_order`` returns ``c_G(s)`` so that ``G(s)[F] = D^2F(s,s) + DF.c``.
    """

    name = "generator"
    needs_connection = False

    def first_order(self, m, field, x, u):
        raise NotImplementedError

    def first_order_dx(self, m, field, x, u):
        """Tangential derivative of ``first_order`` in ``x``: ``(..., q, q)``."""
        return _fd.jacobian(lambda y: self.first_order(m, field, m.retract(y), u), x)

    def first_order_du(self, m, field, x, u):
        return _fd.jacobian(lambda v: self.first_order(m, field, x, v), u)

    def apply(self, m, field, x, u, grad, hess):
        """``G(s)[F]`` from the ambient gradient and Hessian of ``F``."""
        s = field(x, u)
        return _quad(hess, s, s) + (grad * self.first_order(m, field, x, u)).sum(-1)

    def strat_correction(self, m, field, x, u):
        """``(G - G_S)(s)``, a tangent vector."""
        s = field(x, u)
        c_s = _mv(field.jac_x(x, u), s)
        return m.project(x, self.first_order(m, field, x, u) - c_s)

    def ito_correction(self, m, field, x, u):
        """``(G - G_I)(s)``, a tangent vector."""
        s = field(x, u)
        return m.project(x, self.first_order(m, field, x, u) - m.sff(x, s, s))

    def diffusor(self, m, field, x, u=None, chart=None):
        x = _as_point(m, x).coords
        chart = chart or m.chart_for(x)
        gs = stratonovich_generator(m, field, x, u, chart)
        corr = self.strat_correction(m, field, x, _u_or_empty(x, u))
        return Diffusor(x, chart, gs.a + chart.to_jacobian(x) @ corr, gs.b)

    def __repr__(self):
        return f"<generator {self.name}>"


class _Stratonovich(Generator):
    name = "stratonovich"

    def first_order(self, m, field, x, u):
        return _mv(field.jac_x(x, u), field(x, u))

    def strat_correction(self, m, field, x, u):
        return np.zeros(np.shape(x))

    def diffusor(self, m, field, x, u=None, chart=None):
        return stratonovich_generator(m, field, x, u, chart)


class _Ito(Generator):
    name = "ito"
    needs_connection = True

    def first_order(self, m, field, x, u):
        s = field(x, u)
        return m.sff(x, s, s)

    def first_order_dx(self, m, field, x, u):
        s = field(x, u)
        ds = field.jac_x(x, u)
        cols = np.swapaxes(ds, -1, -2)
        xs = np.broadcast_to(x[..., None, :], cols.shape)
        ss = np.broadcast_to(s[..., None, :], cols.shape)
        return m.sff_dx(x, s, s) + 2.0 * np.swapaxes(m.sff(xs, cols, ss), -1, -2)

    def first_order_du(self, m, field, x, u):
        s = field(x, u)
        cols = np.swapaxes(field.jac_u(x, u), -1, -2)
        if cols.shape[-2] == 0:
            return np.zeros(np.shape(x) + (0,))
        xs = np.broadcast_to(x[..., None, :], cols.shape)
        ss = np.broadcast_to(s[..., None, :], cols.shape)
        return 2.0 * np.swapaxes(m.sff(xs, cols, ss), -1, -2)

    def ito_correction(self, m, field, x, u):
        return np.zeros(np.shape(x))

    def diffusor(self, m, field, x, u=None, chart=None):
        return ito_generator(m, field, x, u, chart)


STRATONOVICH = _Stratonovich()
ITO = _Ito()


class CustomGenerator(Generator):
    """A generator given by an ambient map ``(m, x, y) -> (c, B)``.

    ``B`` is the ambient second-order matrix and must equal ``y y^T`` (the
    symbol condition); ``c - II(y, y)`` must be tangent.  Both are checked on
    random samples when the generator is built.
    """

    def __init__(self, name, ambient_map, manifolds=(), n_check=64, seed=0):
        self.name = name
        self._map = ambient_map
        rng = np.random.default_rng(seed)
        for m in manifolds:
            self.self_test(m, rng, n_check)

    @classmethod
    def from_shift(cls, name, shift, manifolds=(), **kw):
        """``G = G_I + t`` for a tangent-valued map ``t(m, x, y)``."""

        def amap(m, x, y):
            return m.sff(x, y, y) + shift(m, x, y), y[..., :, None] * y[..., None, :]

        return cls(name, amap, manifolds, **kw)

    def self_test(self, m, rng, n):
        x = m.random_points(rng, n)
        y = m.project(x, rng.standard_normal(x.shape))
        c, big_b = self._map(m, x, y)
        outer = y[..., :, None] * y[..., None, :]
        err = np.max(np.abs(big_b - outer))
        if not err <= SYMBOL_TOL * max(1.0, float(np.max(np.abs(outer)))):
            raise GeneratorError(f"generator {self.name!r} violates the symbol condition ({err:.3g})")
        normal = m.normal_project(x, c - m.sff(x, y, y))
        if np.max(np.abs(normal)) > SYMBOL_TOL * max(1.0, float(np.max(np.abs(c)))):
            raise GeneratorError(f"generator {self.name!r} has a first-order part off the manifold")

    def first_order(self, m, field, x, u):
        return self._map(m, x, field(x, u))[0]

    def apply(self, m, field, x, u, grad, hess):
        s = field(x, u)
        c, big_b = self._map(m, x, s)
        return np.einsum("...ij,...ij->...", big_b, hess) + (grad * c).sum(-1)


_GENERATORS = {"ito": ITO, "stratonovich": STRATONOVICH}


def register_generator(gen):
    _GENERATORS[gen.name] = gen


def get_generator(name):
    try:
        return _GENERATORS[name]
    except KeyError:
        raise KeyError(f"unknown generator {name!r}") from None


def generator_correction(gen, m, field, x, u=None):
    """``nabla^G_S(s) = (G - G_S)(s)`` as a tangent vector at ``x``.

    Computed as the difference of the two chart diffusors; the symbols agree,
    so the difference is first order and is mapped back to ambient space.
    """
    p = _as_point(m, x)
    xs = p.coords
    chart = m.chart_for(xs)
    diff = gen.diffusor(m, field, xs, u, chart) - stratonovich_generator(m, field, xs, u, chart)
    if np.max(np.abs(diff.b), initial=0.0) > SYMBOL_TOL:
        raise GeneratorError("generators with different symbols")
    vec = chart.from_jacobian(chart.to_coords(xs)) @ diff.a
    return TangentVector(p, m.project(xs, vec))
