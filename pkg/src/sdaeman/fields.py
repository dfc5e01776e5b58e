"""Vector fields on M parametrized by the algebraic variable.

A field maps ``(x, u)`` with ``x`` of shape ``(..., q)`` and ``u`` of shape
``(..., m)`` to an ambient vector tangent to M at ``x``.  Jacobians are
ambient: ``jac_x`` has shape ``(..., q, q)`` and ``jac_u`` has shape
``(..., q, m)``.  Without analytic Jacobians the field is differentiated by
central differences of ``x -> field(retract(x), u)``, so only tangential
directions carry information.
"""

import numpy as np

from . import _fd


class VectorField:
    analytic = False

    def __init__(self, manifold, fn, jac_x=None, jac_u=None, depends_on_u=True, name="field"):
        self.manifold = manifold
        self._fn = fn
        self._jac_x = jac_x
        self._jac_u = jac_u
        self.depends_on_u = depends_on_u
        self.name = name
        self.analytic = jac_x is not None

    def __call__(self, x, u):
        return np.asarray(self._fn(x, u), dtype=float)

    def jac_x(self, x, u):
        if self._jac_x is not None:
            return np.asarray(self._jac_x(x, u), dtype=float)
        m = self.manifold
        return _fd.jacobian(lambda y: self(m.retract(y), u), x)

    def jac_u(self, x, u):
        if not self.depends_on_u:
            return np.zeros(np.shape(x) + (np.shape(u)[-1],))
        if self._jac_u is not None:
            return np.asarray(self._jac_u(x, u), dtype=float)
        return _fd.jacobian(lambda v: self(x, v), u)

    def scaled(self, c):
        return Scaled(self, c)

    def __repr__(self):
        return f"{type(self).__name__}({self.name!r})"


class ProjectedConstant(VectorField):
    """``K(x) = P_x c`` for a fixed ambient vector ``c``."""

    def __init__(self, manifold, c, name=None):
        self.manifold = manifold
        self.c = np.asarray(c, dtype=float)
        self.depends_on_u = False
        self.analytic = True
        self.name = name or f"P_x{tuple(self.c)}"

    def __call__(self, x, u=None):
        x = np.asarray(x, dtype=float)
        return self.manifold.project(x, np.broadcast_to(self.c, x.shape))

    def jac_x(self, x, u=None):
        x = np.asarray(x, dtype=float)
        return self.manifold.project_dx(x, np.broadcast_to(self.c, x.shape))


class Constant(VectorField):
    """A constant vector on a flat manifold."""

    def __init__(self, manifold, c, name=None):
        self.manifold = manifold
        self.c = np.asarray(c, dtype=float)
        self.depends_on_u = False
        self.analytic = True
        self.name = name or f"const{tuple(self.c)}"

    def __call__(self, x, u=None):
        return np.array(np.broadcast_to(self.c, np.shape(x)), dtype=float)

    def jac_x(self, x, u=None):
        q = np.shape(x)[-1]
        return np.zeros(np.shape(x) + (q,))


def Zero(manifold):
    return Constant(manifold, np.zeros(manifold.ambient_dim), name="zero")


class Scaled(VectorField):
    def __init__(self, field, c):
        self.field = field
        self.c = float(c)
        self.manifold = field.manifold
        self.depends_on_u = field.depends_on_u
        self.analytic = field.analytic
        self.name = f"{self.c:g}*{field.name}"

    def __call__(self, x, u=None):
        return self.c * self.field(x, u)

    def jac_x(self, x, u=None):
        return self.c * self.field.jac_x(x, u)

    def jac_u(self, x, u):
        return self.c * self.field.jac_u(x, u)


class AffineInU(VectorField):
    """``F(x, u) = base(x) + sum_j u_j slopes[j](x)`` with u-free parts."""

    def __init__(self, base, slopes, name="affine"):
        self.base = base
        self.slopes = tuple(slopes)
        self.manifold = base.manifold
        self.depends_on_u = bool(self.slopes)
        self.analytic = base.analytic and all(s.analytic for s in self.slopes)
        self.name = name

    def __call__(self, x, u):
        out = self.base(x, u)
        for j, s in enumerate(self.slopes):
            out = out + u[..., j:j + 1] * s(x, u)
        return out

    def jac_x(self, x, u):
        out = self.base.jac_x(x, u)
        for j, s in enumerate(self.slopes):
            out = out + u[..., j:j + 1, None] * s.jac_x(x, u)
        return out

    def jac_u(self, x, u):
        cols = [s(x, u) for s in self.slopes]
        return np.stack(cols, axis=-1)
