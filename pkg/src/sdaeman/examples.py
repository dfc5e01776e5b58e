"""Built-in SDAE problems.

``sphere_example`` is the three-petal constraint on S^2 driven by two noise
fields; ``euclidean_index1`` and ``tangent_noise`` exercise the index-1 and
well-posedness paths; ``degenerate_line`` has a region where Y does not
depend on u, which forces the gradient-descent fallback.
"""

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from .diffusion import ITO
from .errors import ChartDomainError, DegenerateDirectionError, UnknownProblemError
from .fields import AffineInU, Constant, ProjectedConstant, Scaled, VectorField
from .geometry import POLE_TOL, Euclidean, Sphere, stereographic_chart
from .problem import Constraint, SDAEProblem

ORIGIN_TOL = 1e-14
DENOM_GUARD = 1e-10


# --- the sphere constraint -------------------------------------------------
#
# In the stereographic chart from the north pole the constraint reads
# h = 1 + (3 Y X^2 - Y^3) / (X^2 + Y^2)^(3/2) - sqrt(X^2 + Y^2), i.e.
# 1 + sin(3 theta) - r.  On the sphere r^2 = (1 + x3) / (1 - x3) and theta is
# the polar angle of (x1, x2), which gives the ambient extension
# h(x) = 1 + sin(3 atan2(x2, x1)) - g(x3) with g(z) = sqrt((1 + z) / (1 - z)).

def sphere_h_chart(X, Y):
    """The constraint exactly as written in stereographic coordinates."""
    rr = X * X + Y * Y
    return 1.0 + (3.0 * Y * X * X - Y ** 3) / rr ** 1.5 - np.sqrt(rr)


def _guard(x):
    if np.any(1.0 - x[..., 2] <= POLE_TOL):
        raise ChartDomainError("constraint evaluated at the north pole (outside the chart)")
    if np.any(x[..., 0] ** 2 + x[..., 1] ** 2 <= ORIGIN_TOL):
        raise ChartDomainError("constraint is singular at the chart origin")


def _g_jets(z):
    one = 1.0 - z * z
    g = np.sqrt((1.0 + z) / (1.0 - z))
    return (g, g / one, g * (1.0 + 2.0 * z) / one ** 2,
            g * (3.0 + 6.0 * z + 6.0 * z * z) / one ** 3)


def _theta_partial(w, a, b):
    """d^a/dx1^a d^b/dx2^b of arg(x1 + i x2) for a + b >= 1."""
    k = a + b
    fact = 1.0
    for j in range(1, k):
        fact *= j
    val = (1j) ** (b - 1) * (-1.0) ** (k - 1) * fact * w ** (-k)
    return val.real


def _s_jets(x):
    """sin(3 theta) and its derivatives in (x1, x2) up to third order."""
    w = x[..., 0] + 1j * x[..., 1]
    w3 = w ** 3
    mod3 = np.abs(w) ** 3
    s0 = w3.imag / mod3
    c0 = w3.real / mod3
    f1, f2, f3 = 3.0 * c0, -9.0 * s0, -27.0 * c0
    shape = x.shape[:-1]
    t1 = np.empty(shape + (2,))
    t2 = np.empty(shape + (2, 2))
    t3 = np.empty(shape + (2, 2, 2))
    for i in range(2):
        t1[..., i] = _theta_partial(w, 1 - i, i)
        for j in range(2):
            t2[..., i, j] = _theta_partial(w, 2 - i - j, i + j)
            for k in range(2):
                t3[..., i, j, k] = _theta_partial(w, 3 - i - j - k, i + j + k)
    d1 = f1[..., None] * t1
    d2 = (f2[..., None, None] * t1[..., :, None] * t1[..., None, :]
          + f1[..., None, None] * t2)
    d3 = (f3[..., None, None, None] * t1[..., :, None, None] * t1[..., None, :, None] * t1[..., None, None, :]
          + f2[..., None, None, None] * (t2[..., :, :, None] * t1[..., None, None, :]
                                         + t2[..., :, None, :] * t1[..., None, :, None]
                                         + t2[..., None, :, :] * t1[..., :, None, None])
          + f1[..., None, None, None] * t3)
    return s0, d1, d2, d3


def sphere_h(x, u=None):
    x = np.asarray(x, dtype=float)
    _guard(x)
    s0 = _s_jets(x)[0]
    return (1.0 + s0 - _g_jets(x[..., 2])[0])[..., None]


def sphere_h_jac(x, u=None):
    x = np.asarray(x, dtype=float)
    _guard(x)
    _, d1, _, _ = _s_jets(x)
    out = np.zeros(x.shape[:-1] + (1, 3))
    out[..., 0, :2] = d1
    out[..., 0, 2] = -_g_jets(x[..., 2])[1]
    return out


def sphere_h_hess(x, u=None):
    x = np.asarray(x, dtype=float)
    _guard(x)
    _, _, d2, _ = _s_jets(x)
    out = np.zeros(x.shape[:-1] + (1, 3, 3))
    out[..., 0, :2, :2] = d2
    out[..., 0, 2, 2] = -_g_jets(x[..., 2])[2]
    return out


def sphere_h_third(x, u=None):
    x = np.asarray(x, dtype=float)
    _guard(x)
    _, _, _, d3 = _s_jets(x)
    out = np.zeros(x.shape[:-1] + (1, 3, 3, 3))
    out[..., 0, :2, :2, :2] = d3
    out[..., 0, 2, 2, 2] = -_g_jets(x[..., 2])[3]
    return out


def _ito_term(m, field, x, u, grad, hess):
    return ITO.apply(m, field, x, u, grad, hess)


def sphere_closed_form_u(problem, x, b, guard=DENOM_GUARD):
    """The algebraic variable that makes Y vanish on the sphere example.

    u = [-b h - drift_scale dh.K2 - 1/2 sum G_I(s_l)[h]] / (dh.K1), with dh
    and the generator terms taken from the analytic ambient jets of h.
    """
    x = np.asarray(x, dtype=float)
    m = problem.state
    k1, k2 = problem.params["K"]
    scale = problem.params["drift_scale"]
    u0 = np.zeros(x.shape[:-1] + (1,))
    grad = sphere_h_jac(x)[..., 0, :]
    hess = sphere_h_hess(x)[..., 0, :, :]
    h = sphere_h(x)[..., 0] - problem.target_point[0]
    num = -np.asarray(b) * h - scale * (grad * k2(x)).sum(-1)
    for s in problem.diffusions:
        num = num - 0.5 * _ito_term(m, s, x, u0, grad, hess)
    den = (grad * k1(x)).sum(-1)
    if np.any(np.abs(den) <= guard):
        raise DegenerateDirectionError("dh . K1 vanishes: closed-form u is undefined")
    return (num / den)[..., None]


def sphere_problem(noise_scale=0.3, drift_scale=2.0, x0=(1.0, 0.0, 0.0), y_mode="linear"):
    m = Sphere(2)
    k1 = ProjectedConstant(m, [0.0, 0.0, 1.0], name="K1")
    k2 = ProjectedConstant(m, [0.0, 1.0, 0.0], name="K2")
    drift = AffineInU(Scaled(k2, drift_scale), [k1], name="V")
    sig = (Scaled(k1, noise_scale), Scaled(k2, noise_scale))
    h = Constraint(m, sphere_h, 1, sphere_h_jac, None, sphere_h_hess, sphere_h_third,
                   depends_on_u=False, name="petals")
    params = {"noise_scale": noise_scale, "drift_scale": drift_scale, "K": (k1, k2)}
    prob = SDAEProblem(
        name="sphere_example", state=m, algebraic=Euclidean(1, bounds=(-5.0, 5.0)),
        target=Euclidean(1), drift=drift, diffusions=sig, constraint=h,
        target_point=np.zeros(1), x0=np.asarray(x0, dtype=float), generator=ITO,
        y_mode=y_mode, description="three-petal constraint on the unit sphere", params=params)
    closed = lambda x, b: sphere_closed_form_u(prob, x, b)
    object.__setattr__(prob, "closed_form_u", closed)
    object.__setattr__(prob, "u0", closed(prob.x0, 1.0))
    return prob


def sphere_constraint_curve(n_rays=720, r_max=3.0, xtol=1e-15):
    """Points of ``{h = 0}`` found by bisection along chart rays.

    Rows are ``(theta, X, Y, x1, x2, x3, h)``.  Rays on which ``h`` does not
    change sign (where the petals meet at the chart origin) are skipped.
    """
    chart = stereographic_chart(2, True)
    rows = []
    for k in range(n_rays):
        theta = 2.0 * np.pi * k / n_rays
        c, s = np.cos(theta), np.sin(theta)
        f = lambda r: sphere_h_chart(r * c, r * s)
        lo = 1e-9
        if not f(lo) > 0 or not f(r_max) < 0:
            continue
        r = brentq(f, lo, r_max, xtol=xtol, rtol=4 * np.finfo(float).eps, maxiter=200)
        X, Y = r * c, r * s
        x = chart.from_coords(np.array([X, Y]))
        rows.append((theta, X, Y, x[0], x[1], x[2], float(sphere_h_chart(X, Y))))
    return np.array(rows)


# --- Euclidean problems ----------------------------------------------------

def euclidean_index1_problem(noise=0.2, x0=0.0):
    line = Euclidean(1)
    h = Constraint(line, lambda x, u: u - np.sin(x), 1,
                   jac_x=lambda x, u: -np.cos(x)[..., None],
                   jac_u=lambda x, u: np.ones(np.shape(u) + (1,)),
                   hess_x=lambda x, u: np.sin(x)[..., None, None],
                   third_x=lambda x, u: np.cos(x)[..., None, None, None],
                   depends_on_u=True, name="u - sin x")
    return SDAEProblem(
        name="euclidean_index1", state=line, algebraic=Euclidean(1), target=Euclidean(1),
        drift=Constant(line, [1.0], name="V"), diffusions=(Constant(line, [noise], name="sigma"),),
        constraint=h, target_point=np.zeros(1), x0=np.array([x0]), u0=np.array([np.sin(x0)]),
        generator=ITO, params={"noise": noise})


def tangent_noise_problem():
    plane = Euclidean(2)
    h = Constraint(plane, lambda x, u: x[..., :1], 1,
                   jac_x=lambda x, u: np.broadcast_to([[1.0, 0.0]], np.shape(x)[:-1] + (1, 2)),
                   hess_x=lambda x, u: np.zeros(np.shape(x)[:-1] + (1, 2, 2)),
                   third_x=lambda x, u: np.zeros(np.shape(x)[:-1] + (1, 2, 2, 2)),
                   depends_on_u=False, name="x1")
    return SDAEProblem(
        name="tangent_noise", state=plane, algebraic=Euclidean(1), target=Euclidean(1),
        drift=Constant(plane, [0.0, 1.0], name="V"),
        diffusions=(Constant(plane, [0.0, 1.0], name="sigma"),),
        constraint=h, target_point=np.zeros(1), x0=np.zeros(2), generator=ITO)


def _psi(x):
    return np.where(x > 0, x, 0.0)


def degenerate_line_problem(noise=0.2, x0=-0.5):
    """h(x) = max(x, 0)^3 with V = u - x: Y ignores u wherever x <= 0."""
    line = Euclidean(1)
    h = Constraint(line, lambda x, u: _psi(x) ** 3, 1,
                   jac_x=lambda x, u: (3.0 * _psi(x) ** 2)[..., None],
                   hess_x=lambda x, u: (6.0 * _psi(x))[..., None, None],
                   third_x=lambda x, u: (6.0 * (x > 0))[..., None, None, None],
                   depends_on_u=False, name="max(x,0)^3")
    drift = VectorField(line, lambda x, u: u - x, jac_x=lambda x, u: -np.ones(np.shape(x) + (1,)),
                        jac_u=lambda x, u: np.ones(np.shape(x) + (1,)), name="u - x")
    return SDAEProblem(
        name="degenerate_line", state=line, algebraic=Euclidean(1), target=Euclidean(1),
        drift=drift, diffusions=(Constant(line, [noise], name="sigma"),), constraint=h,
        target_point=np.zeros(1), x0=np.array([x0]), u0=np.zeros(1), generator=ITO,
        y_mode="linear", params={"noise": noise})


@dataclass(frozen=True)
class ProblemRegistryEntry:
    name: str
    builder: Callable
    closed_form_u: Optional[Callable] = None
    documentation: str = ""


REGISTRY = {
    "sphere_example": ProblemRegistryEntry(
        "sphere_example", sphere_problem, sphere_closed_form_u,
        "S^2 with noise 0.3 K_j, drift 2 K2 + u K1, Ito generator, start (1,0,0)."),
    "euclidean_index1": ProblemRegistryEntry(
        "euclidean_index1", euclidean_index1_problem, None,
        "h(x, u) = u - sin x on R x R with V = 1 and sigma = 0.2."),
    "tangent_noise": ProblemRegistryEntry(
        "tangent_noise", tangent_noise_problem, None,
        "h(x) = x1 on R^2 with noise along the level set."),
    "degenerate_line": ProblemRegistryEntry(
        "degenerate_line", degenerate_line_problem, None,
        "h(x) = max(x,0)^3 on R, where D2Y vanishes for x <= 0."),
}


def register_problem(entry):
    REGISTRY[entry.name] = entry


def get_problem(name, **params):
    try:
        entry = REGISTRY[name]
    except KeyError:
        raise UnknownProblemError(
            f"unknown problem {name!r}; available: {', '.join(sorted(REGISTRY))}") from None
    return entry.builder(**params)
