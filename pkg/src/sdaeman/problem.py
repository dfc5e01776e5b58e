"""SDAE problem definition, index classification and index-1 reduction."""

from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from . import _fd
from .diffusion import ITO, Generator
from .errors import (
    ChartDomainError,
    InvalidPointError,
    NumericalGuardError,
    SDAEError,
    SingularConstraintError,
)
from .geometry import TANGENT_TOL, EmbeddedManifold

INDEX1_RCOND = 1e-8
U_FREE_TOL = 1e-12
WITNESS_TOL = 1e-8


class Constraint:
    """The algebraic map ``h(x, u)`` into the ambient space of P.

    Values have shape ``(..., k)``.  ``jac_x``/``hess_x``/``third_x`` are
    ambient derivatives in ``x`` of shapes ``(..., k, q)``, ``(..., k, q, q)``
    and ``(..., k, q, q, q)``.  Missing derivatives fall back to central
    differences of ``y -> h(retract(y), u)``.
    """

    def __init__(self, manifold, fn, target_dim=1, jac_x=None, jac_u=None, hess_x=None,
                 third_x=None, depends_on_u=True, name="h"):
        self.manifold = manifold
        self._fn = fn
        self.target_dim = target_dim
        self._jac_x = jac_x
        self._jac_u = jac_u
        self._hess_x = hess_x
        self._third_x = third_x
        self.depends_on_u = depends_on_u
        self.name = name

    @property
    def has_jets(self):
        """True when analytic first, second and third x-derivatives exist."""
        return None not in (self._jac_x, self._hess_x, self._third_x)

    def _ext(self, u):
        m = self.manifold
        return lambda y: self.value(m.retract(y), u)

    def value(self, x, u):
        return np.asarray(self._fn(x, u), dtype=float)

    def jac_x(self, x, u):
        if self._jac_x is not None:
            return np.asarray(self._jac_x(x, u), dtype=float)
        return _fd.jacobian(self._ext(u), x)

    def jac_u(self, x, u):
        if not self.depends_on_u:
            return np.zeros(np.shape(x)[:-1] + (self.target_dim, np.shape(u)[-1]))
        if self._jac_u is not None:
            return np.asarray(self._jac_u(x, u), dtype=float)
        return _fd.jacobian(lambda v: self.value(x, v), u)

    def hess_x(self, x, u):
        if self._hess_x is not None:
            return np.asarray(self._hess_x(x, u), dtype=float)
        ext = self._ext(u)
        return np.stack([_fd.hessian(lambda y, i=i: ext(y)[..., i], x)
                         for i in range(self.target_dim)], axis=-3)

    def third_x(self, x, u):
        if self._third_x is not None:
            return np.asarray(self._third_x(x, u), dtype=float)
        return _fd.jacobian(lambda y: self.hess_x(y, u), x, step=1e-3)

    def tangent_jac_x(self, x, u):
        """Rows of ``D_x h`` projected onto ``T_x M``."""
        jac = self.jac_x(x, u)
        return self.manifold.project(np.asarray(x)[..., None, :], jac)


@dataclass(frozen=True)
class SDAEProblem:
    """An explicit SDAE: dX = [V + 1/2 sum G(s_l)] dt + sum s_l dW^l, h = p."""

    name: str
    state: EmbeddedManifold
    algebraic: EmbeddedManifold
    target: EmbeddedManifold
    drift: object
    diffusions: tuple
    constraint: Constraint
    target_point: np.ndarray
    x0: np.ndarray
    u0: Optional[np.ndarray] = None
    generator: Generator = ITO
    y_mode: str = "squared"
    closed_form_u: Optional[Callable] = None
    description: str = ""
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "diffusions", tuple(self.diffusions))
        if len(self.diffusions) < 1:
            raise SDAEError("an SDAE needs at least one diffusion field")
        if self.y_mode not in ("squared", "linear"):
            raise SDAEError(f"unknown y_mode {self.y_mode!r}")
        x0 = self.state.check_point(np.array(self.x0, dtype=float))
        object.__setattr__(self, "x0", x0)
        object.__setattr__(self, "target_point", np.atleast_1d(np.array(self.target_point, dtype=float)))
        u0 = self.u0
        if u0 is None:
            u0 = np.zeros(self.algebraic.ambient_dim)
        u0 = np.atleast_1d(np.array(u0, dtype=float))
        object.__setattr__(self, "u0", u0)
        for f in (self.drift,) + self.diffusions:
            v = f(x0, u0)
            if np.max(np.abs(self.state.project(x0, v) - v)) > TANGENT_TOL * max(1.0, np.max(np.abs(v))):
                raise InvalidPointError(f"field {f.name!r} is not tangent at x0")
        if not np.all(np.isfinite(self.constraint.value(x0, u0))):
            raise InvalidPointError("constraint is not finite at x0")

    @property
    def d(self):
        return len(self.diffusions)

    @property
    def u_free(self):
        return not self.constraint.depends_on_u

    @property
    def sigma_depends_on_u(self):
        return any(s.depends_on_u for s in self.diffusions)

    def h(self, x, u):
        return self.constraint.value(x, u)

    def h_dist(self, x, u):
        h = self.h(x, u)
        return self.target.distance(h, np.broadcast_to(self.target_point, h.shape))

    def strat_drift(self, x, u):
        """Stratonovich drift ``V + 1/2 sum (G - G_S)(s_l)``."""
        m = self.state
        out = self.drift(x, u)
        for s in self.diffusions:
            out = out + 0.5 * self.generator.strat_correction(m, s, x, u)
        return out

    def ito_drift(self, x, u):
        """Levi-Civita Ito drift ``V + 1/2 sum (G - G_I)(s_l)``."""
        m = self.state
        out = self.drift(x, u)
        for s in self.diffusions:
            out = out + 0.5 * self.generator.ito_correction(m, s, x, u)
        return out

    def sigma(self, x, u):
        """Diffusion fields stacked to shape ``(d, ..., q)``."""
        return np.stack([s(x, u) for s in self.diffusions])


@dataclass
class IndexClass:
    kind: str
    ill_posed: str
    witnesses: list = field(default_factory=list)

    def __post_init__(self):
        if self.kind not in ("Index1", "HighIndex", "CompletelyHighIndex"):
            raise ValueError(f"unknown index class {self.kind!r}")
        allowed = ("yes", "no-evidence") if self.kind == "CompletelyHighIndex" else ("not-applicable",)
        if self.ill_posed not in allowed:
            raise ValueError(f"ill_posed={self.ill_posed!r} is invalid for {self.kind}")

    def to_dict(self):
        return {"kind": self.kind, "ill_posed": self.ill_posed, "witnesses": self.witnesses}


@dataclass
class WellposednessReport:
    x: np.ndarray
    u: np.ndarray
    diffusion_values: np.ndarray
    drift_values: np.ndarray
    ill_posed: str

    @property
    def diffusion_residuals(self):
        return np.linalg.norm(self.diffusion_values, axis=-1)

    @property
    def drift_residuals(self):
        return np.linalg.norm(self.drift_values, axis=-1)

    @property
    def witness_mask(self):
        return np.any(self.diffusion_residuals > WITNESS_TOL, axis=-1)


def _finite_mask(problem, x, u):
    try:
        with np.errstate(all="ignore"):
            h = problem.h(x, u)
            dh = problem.constraint.jac_x(x, u)
    except (ChartDomainError, InvalidPointError):
        return np.zeros(x.shape[0], dtype=bool)
    return np.all(np.isfinite(h), axis=-1) & np.all(np.isfinite(dh), axis=(-1, -2))


def sample_points(problem, n_samples, seed, max_rounds=100):
    """Draw ``n_samples`` points of M x N where the constraint is evaluable."""
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    rng = np.random.default_rng(seed)
    xs, us, have = [], [], 0
    for _ in range(max_rounds):
        x = problem.state.random_points(rng, n_samples)
        u = problem.algebraic.random_points(rng, n_samples)
        ok = _finite_mask_rowwise(problem, x, u)
        xs.append(x[ok])
        us.append(u[ok])
        have += int(ok.sum())
        if have >= n_samples:
            break
    if have < n_samples:
        raise SDAEError(f"could only sample {have} of {n_samples} valid points")
    return np.concatenate(xs)[:n_samples], np.concatenate(us)[:n_samples]


def _finite_mask_rowwise(problem, x, u):
    ok = _finite_mask(problem, x, u)
    if ok.any() or x.shape[0] == 0:
        return ok
    # a single bad row can make a batched chart call raise; retry one by one
    return np.array([bool(_finite_mask(problem, x[i:i + 1], u[i:i + 1])[0]) for i in range(x.shape[0])])


def project_to_constraint(problem, x, u, tol=1e-10, max_iter=60):
    """Gauss-Newton projection of sample points onto ``{h(x, u) = p}``.

    Returns the moved points and a mask of the ones that converged.
    """
    m = problem.state
    c = problem.constraint
    x = np.array(x, dtype=float)
    done = np.zeros(x.shape[0], dtype=bool)
    for _ in range(max_iter):
        with np.errstate(all="ignore"):
            try:
                r = c.value(x, u) - problem.target_point
                jac = c.tangent_jac_x(x, u)
            except (ChartDomainError, InvalidPointError):
                break
        done = np.all(np.abs(r) <= tol, axis=-1)
        if done.all():
            break
        gram = np.einsum("...ij,...kj->...ik", jac, jac)
        bad = ~np.all(np.isfinite(gram), axis=(-1, -2)) | (np.abs(np.linalg.det(gram)) < 1e-14)
        gram[bad] = np.eye(gram.shape[-1])
        r = np.where(np.isfinite(r), r, 0.0)
        step = np.einsum("...ij,...i->...j", jac, np.linalg.solve(gram, r[..., None])[..., 0])
        step = np.where((done | bad)[:, None], 0.0, step)
        norm = np.linalg.norm(step, axis=-1, keepdims=True)
        step = step * np.minimum(1.0, 0.25 / np.maximum(norm, 1e-300))
        x = m.retract(x - step)
    with np.errstate(all="ignore"):
        try:
            r = c.value(x, u) - problem.target_point
            done = np.all(np.abs(r) <= tol, axis=-1)
        except (ChartDomainError, InvalidPointError):
            done = np.zeros(x.shape[0], dtype=bool)
    return x, done


def check_wellposedness(problem, x, u):
    """Kernel test for a completely high index problem at sample points.

    Reports ``D_x h . s_l`` for every diffusion field and
    ``D_x h . (V + 1/2 sum nabla^G_S s_l)``.  A sample with any diffusion
    residual above 1e-8 is an ill-posedness witness; the verdict is ``yes``
    only when the diffusion fields do not depend on ``u``.
    """
    x = np.atleast_2d(np.asarray(x, dtype=float))
    u = np.atleast_2d(np.asarray(u, dtype=float))
    jac = problem.constraint.tangent_jac_x(x, u)
    sig = problem.sigma(x, u)
    diff_vals = np.einsum("nkq,dnq->ndk", jac, sig)
    drift_vals = np.einsum("nkq,nq->nk", jac, problem.strat_drift(x, u))
    report = WellposednessReport(x, u, diff_vals, drift_vals, "no-evidence")
    if report.witness_mask.any() and not problem.sigma_depends_on_u:
        report.ill_posed = "yes"
    return report


def _witness_rows(x, u, values, limit=8):
    rows = []
    for i in range(min(limit, x.shape[0])):
        rows.append({"x": x[i].tolist(), "u": u[i].tolist(), "value": values[i]})
    return rows


def classify(problem, n_samples=32, seed=0):
    """Index class of ``problem`` from structure and sampled differentials."""
    x, u = sample_points(problem, n_samples, seed)
    c = problem.constraint
    if not c.depends_on_u:
        kind = "CompletelyHighIndex"
        d2 = None
    else:
        d2 = c.jac_u(x, u)
        d2 = _restrict_to_n(problem, u, d2)
        norms = np.linalg.norm(d2, axis=(-1, -2))
        if np.all(norms <= U_FREE_TOL):
            kind = "CompletelyHighIndex"
        elif d2.shape[-1] == d2.shape[-2]:
            sv = np.linalg.svd(d2, compute_uv=False)
            ratio = sv[..., -1] / np.maximum(sv[..., 0], 1e-300)
            kind = "Index1" if np.all(ratio > INDEX1_RCOND) else "HighIndex"
        else:
            kind = "HighIndex"
    if kind != "CompletelyHighIndex":
        values = np.linalg.svd(d2, compute_uv=False)[..., -1].tolist()
        return IndexClass(kind, "not-applicable", _witness_rows(x, u, values))
    xp, ok = project_to_constraint(problem, x, u)
    if not ok.any():
        raise SDAEError("no sample could be projected onto the constraint set")
    report = check_wellposedness(problem, xp[ok], u[ok])
    res = report.diffusion_residuals
    order = np.argsort(-res.max(axis=-1), kind="stable")
    wx, wu = report.x[order], report.u[order]
    values = [{"diffusion": res[i].tolist(), "drift": float(report.drift_residuals[i])} for i in order]
    return IndexClass(kind, report.ill_posed, _witness_rows(wx, wu, values))


def _tangent_basis_n(problem, u):
    return problem.algebraic.tangent_basis(u)


def _restrict_to_n(problem, u, d2):
    """``D_2 h`` as a map on ``T_u N`` (basis coefficients)."""
    basis = _tangent_basis_n(problem, u)
    return np.einsum("...kj,...aj->...ka", d2, basis)


class ReducedFields:
    """Stratonovich fields of the coupled index-1 system on M x N."""

    def __init__(self, problem):
        self.problem = problem

    def _solve_map(self, x, u):
        c = self.problem.constraint
        d1 = c.jac_x(x, u)
        d2 = _restrict_to_n(self.problem, u, c.jac_u(x, u))
        if d2.shape[-1] != d2.shape[-2]:
            raise SingularConstraintError("D_2 h is not square", np.inf)
        sv = np.linalg.svd(d2, compute_uv=False)
        with np.errstate(divide="ignore", invalid="ignore"):
            cond = np.where(sv[..., -1] > 0, sv[..., 0] / sv[..., -1], np.inf)
        if np.any(~(cond <= 1.0 / INDEX1_RCOND)):
            raise SingularConstraintError(
                f"D_2 h is singular (condition number {float(np.max(cond)):.3g})", float(np.max(cond)))
        basis = _tangent_basis_n(self.problem, u)

        def apply(v):
            rhs = np.einsum("...kq,...q->...k", d1, v)
            coef = np.linalg.solve(d2, -rhs[..., None])[..., 0]
            return np.einsum("...a,...aj->...j", coef, basis)

        return apply

    def drift(self, x, u):
        fx = self.problem.strat_drift(x, u)
        return fx, self._solve_map(x, u)(fx)

    def diffusions(self, x, u):
        sx = self.problem.sigma(x, u)
        apply = self._solve_map(x, u)
        return sx, np.stack([apply(s) for s in sx])


def index1_reduction(problem):
    return ReducedFields(problem)
