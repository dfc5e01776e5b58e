"""The Y-function of the bounded m-solution and its differentials.

With ``F = f o h`` (``f = Delta_p^2`` in squared mode, ``f = h - p`` in
linear mode) and ``w = V + 1/2 sum c_G(s_l)``,

    Y(x, u) = b F(x) + DF . w + 1/2 sum D^2F(s_l, s_l)

which is ``b F + [V + 1/2 sum G(s_l)][F]`` by the extrinsic formula of the
generator.  D1Y and D2Y are formed analytically from ambient jets when the
constraint provides them, otherwise by central differences.
"""

import numpy as np

from .. import _fd
from ..diffusion import (
    apply_diffusor,
    generator_correction,
    stratonovich_generator,
)
from ..errors import CutLocusProximityError, UnsupportedMetricError
from ..geometry import Euclidean

CUT_LOCUS_MARGIN = 1e-6


def _quad(mat, v, w):
    return np.einsum("...i,...ij,...j->...", v, mat, w)


def _mv(mat, v):
    return np.einsum("...ij,...j->...i", mat, v)


def _mtv(mat, v):
    return np.einsum("...ji,...j->...i", mat, v)


class YFunction:
    def __init__(self, problem, mode=None):
        self.problem = problem
        self.mode = mode or problem.y_mode
        if problem.constraint.depends_on_u:
            raise ValueError("the Y-function is defined for completely high index problems")
        if not isinstance(problem.target, Euclidean):
            raise UnsupportedMetricError("Y needs a Euclidean target manifold P")
        if self.mode == "linear" and problem.constraint.target_dim != 1:
            raise ValueError("linear Y mode needs a scalar constraint")
        self.analytic = problem.constraint.has_jets and all(
            f.analytic for f in (problem.drift,) + problem.diffusions)

    @property
    def algebraic(self):
        return self.problem.algebraic

    # jets of F = f o h
    def f_jets(self, x, u, order=2, mode=None):
        mode = mode or self.mode
        c = self.problem.constraint
        r = c.value(x, u) - self.problem.target_point
        dh = c.jac_x(x, u)
        d2h = c.hess_x(x, u)
        d3h = c.third_x(x, u) if order >= 3 else None
        if mode == "linear":
            out = [r[..., 0], dh[..., 0, :], d2h[..., 0, :, :]]
            if order >= 3:
                out.append(d3h[..., 0, :, :, :])
            return out
        big_f = (r * r).sum(-1)
        df = 2.0 * np.einsum("...k,...kq->...q", r, dh)
        d2f = 2.0 * (np.einsum("...ki,...kj->...ij", dh, dh) + np.einsum("...k,...kij->...ij", r, d2h))
        out = [big_f, df, d2f]
        if order >= 3:
            sym = (np.einsum("...kij,...kl->...ijl", d2h, dh)
                   + np.einsum("...kil,...kj->...ijl", d2h, dh)
                   + np.einsum("...kjl,...ki->...ijl", d2h, dh))
            out.append(2.0 * (sym + np.einsum("...k,...kijl->...ijl", r, d3h)))
        return out

    def _check_cut_locus(self, x, u):
        radius = self.problem.target.injectivity_radius()
        if radius is not None and np.isfinite(radius):
            dist = self.problem.h_dist(x, u)
            if np.any(dist >= radius - CUT_LOCUS_MARGIN):
                raise CutLocusProximityError("h(x) is within 1e-6 of the cut locus of p")

    def _w(self, x, u):
        p = self.problem
        w = p.drift(x, u)
        for s in p.diffusions:
            w = w + 0.5 * p.generator.first_order(p.state, s, x, u)
        return w

    def generator_term(self, x, u, jets=None):
        """``[V + 1/2 sum G(s_l)][F]`` via the extrinsic formula."""
        p = self.problem
        _, df, d2f = jets if jets is not None else self.f_jets(x, u)
        out = (df * p.drift(x, u)).sum(-1)
        for s in p.diffusions:
            out = out + 0.5 * p.generator.apply(p.state, s, x, u, df, d2f)
        return out

    def value(self, b, x, u):
        self._check_cut_locus(x, u)
        jets = self.f_jets(x, u)
        return b * jets[0] + self.generator_term(x, u, jets)

    def d1(self, b, x, u):
        """Tangential gradient of ``Y`` in ``x`` (ambient vector)."""
        if not self.analytic:
            return self.d1_fd(b, x, u)
        p = self.problem
        m = p.state
        _, df, d2f, d3f = self.f_jets(x, u, order=3)
        w = self._w(x, u)
        dw = p.drift.jac_x(x, u)
        for s in p.diffusions:
            dw = dw + 0.5 * p.generator.first_order_dx(m, s, x, u)
        g = np.asarray(b)[..., None] * df + _mv(d2f, w) + _mtv(dw, df)
        for s in p.diffusions:
            sv = s(x, u)
            ds = s.jac_x(x, u)
            g = g + 0.5 * np.einsum("...ijk,...i,...j->...k", d3f, sv, sv)
            g = g + _mtv(ds, _mv(d2f, sv))
        return m.project(x, g)

    def d2(self, b, x, u):
        """Gradient of ``Y`` in ``u`` on ``T_u N`` (ambient vector of N)."""
        if not self.analytic:
            return self.d2_fd(b, x, u)
        p = self.problem
        m = p.state
        _, df, d2f = self.f_jets(x, u)
        dwu = p.drift.jac_u(x, u)
        for s in p.diffusions:
            if s.depends_on_u:
                dwu = dwu + 0.5 * p.generator.first_order_du(m, s, x, u)
        g = _mtv(dwu, df)
        for s in p.diffusions:
            if s.depends_on_u:
                g = g + _mtv(s.jac_u(x, u), _mv(d2f, s(x, u)))
        return p.algebraic.project(u, g)

    def d1_fd(self, b, x, u, step=_fd.STEP):
        m = self.problem.state
        basis = m.tangent_basis(x)
        out = np.zeros(np.shape(x))
        for i in range(m.dim):
            e = basis[..., i, :]
            dy = (self.value(b, m.retract(x + step * e), u)
                  - self.value(b, m.retract(x - step * e), u)) / (2 * step)
            out = out + np.asarray(dy)[..., None] * e
        return out

    def d2_fd(self, b, x, u, step=_fd.STEP):
        n = self.problem.algebraic
        basis = n.tangent_basis(u)
        out = np.zeros(np.shape(u))
        for i in range(n.dim):
            e = basis[..., i, :]
            dy = (self.value(b, x, n.retract(u + step * e))
                  - self.value(b, x, n.retract(u - step * e))) / (2 * step)
            out = out + np.asarray(dy)[..., None] * e
        return out

    def lambda_terms(self, x, u):
        """``sum_l (D_x h s_l [Delta_p^2 o h])^2`` at each point."""
        _, df, _ = self.f_jets(x, u, mode="squared")
        total = 0.0
        for s in self.problem.diffusions:
            total = total + (df * s(x, u)).sum(-1) ** 2
        return total


def y_value(problem, b, x, u, mode=None):
    return YFunction(problem, mode).value(b, np.asarray(x, dtype=float), np.atleast_1d(np.asarray(u, dtype=float)))


def decomposed_drift(problem, x, u, mode="squared"):
    """The generator term evaluated through the literal decomposition.

    Computes ``D_xh.V + 1/2 sum D_xh.nabla^G_S(s_l) + 1/2 sum G_S(D_xh.s_l)``
    applied to ``f`` at a single point using chart differences only, as an
    independent check of :meth:`YFunction.generator_term`.
    """
    p = problem
    m = p.state
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    chart = m.chart_for(x)
    pt = p.target_point
    hfun = lambda y: float(p.h(y, u)[0])
    xi = chart.to_coords(x)
    grad = _fd.gradient(lambda z: hfun(chart.from_coords(z)), xi)
    to_jac = chart.to_jacobian(x)
    dh = lambda v: float(grad @ (to_jac @ v))
    r = hfun(x) - pt[0]
    if mode == "linear":
        f1, f2 = 1.0, 0.0
    else:
        f1, f2 = 2.0 * r, 2.0
    total = f1 * dh(p.drift(x, u))
    for s in p.diffusions:
        corr = generator_correction(p.generator, m, s, x, u).vec
        total += 0.5 * f1 * dh(corr)
        hs = dh(s(x, u))
        ss_h = apply_diffusor(stratonovich_generator(m, s, x, u, chart), hfun)
        total += 0.5 * (f2 * hs * hs + f1 * ss_h)
    return total
