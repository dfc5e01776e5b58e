"""Integration of SDAEs: the coupled Y-system, its fallback and the block loop.

Every system advances a batch of paths with row-wise arithmetic only, so a
path's trajectory does not depend on which other paths share its batch.
"""

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .. import _fd
from ..errors import (
    DegenerateDirectionError,
    FallbackFailureError,
    SDAEError,
    SingularConstraintError,
    StiffnessError,
    UnsupportedMetricError,
)
from ..geometry import ManifoldPoint, TangentVector
from ..problem import ReducedFields
from .config import SolverConfig
from .gradient import descend
from .stepping import euler_ito_step, heun_step, heun_step_x
from .wiener import WienerPath, fresh_increments, wiener_path
from .yfunction import YFunction

__all__ = [
    "Trajectory", "algorithm1", "algorithm2", "bounded_m_fields", "closed_form_solve",
    "heun_step", "integrate_intrinsic", "run_paths", "solve", "solve_index1",
    "unit_probability_fields",
]

FLAG_NAMES = ("violations", "gd_fallbacks", "denominator_guards")


@dataclass
class Trajectory:
    times: np.ndarray
    X: np.ndarray
    U: np.ndarray
    h_dist: np.ndarray
    b: np.ndarray
    flags: dict = field(default_factory=lambda: dict.fromkeys(FLAG_NAMES, 0))
    failure: Optional[Exception] = None
    path_index: int = 0
    fallback: Optional[np.ndarray] = None

    @property
    def ok(self):
        return self.failure is None

    @property
    def sup_h_dist(self):
        if self.h_dist.size == 0:
            return float("nan")
        return float(np.max(self.h_dist))

    @property
    def final_b(self):
        return float(self.b[-1]) if self.b.size else float("nan")


# --- fields of the coupled bounded m-solution system -------------------------

def _coupled_fields(y, b, x, u, guard):
    """Drifts and diffusions of the system that keeps Y constant.

    Returns ``(fx, fu, sx, su, degenerate)``; on degenerate rows
    (``|D2Y|^2 <= guard``) the N-fields are set to zero.
    """
    p = y.problem
    fx = p.strat_drift(x, u)
    sx = p.sigma(x, u)
    d1 = y.d1(b, x, u)
    d2 = y.d2(b, x, u)
    den = (d2 * d2).sum(-1)
    degenerate = ~(den > guard)
    scale = np.where(degenerate, 0.0, -1.0 / np.where(degenerate, 1.0, den))
    fu = ((d1 * fx).sum(-1) * scale)[..., None] * d2
    su = np.stack([((d1 * s).sum(-1) * scale)[..., None] * d2 for s in sx])
    return fx, fu, sx, su, degenerate


def bounded_m_fields(problem, b, x, u, guard=1e-10, mode=None):
    """Fields on N that make the Y-function a constant of the motion.

    With ``a = D2Y`` (the gradient on N) returns ``(alpha_0 a, [alpha_l a])``,
    ``alpha_0 = -D1Y.[V + 1/2 sum nabla_S s_l] / |a|^2`` and
    ``alpha_l = -D1Y.s_l / |a|^2``.
    """
    y = problem if isinstance(problem, YFunction) else YFunction(problem, mode)
    x = np.asarray(x, dtype=float)
    u = np.atleast_1d(np.asarray(u, dtype=float))
    _, fu, _, su, degenerate = _coupled_fields(y, b, x, u, guard)
    if np.any(degenerate):
        raise DegenerateDirectionError(f"|D2Y . a| <= {guard:g}: no direction along N moves Y")
    base = ManifoldPoint(y.problem.algebraic, u)
    return TangentVector(base, fu), tuple(TangentVector(base, s) for s in su)


def unit_probability_fields(y_map, problem, t, u):
    """The fields ``a`` and ``B_l`` on N that keep ``K(t, u) = h(y(t, u))`` fixed.

    ``y_map(t, u)`` returns a point of M; if it has a ``du(t, u)`` method that
    returns the ambient Jacobian ``(q, n)`` it is used, otherwise the Jacobian
    is taken by central differences along ``T_u N``.
    """
    p = problem
    n = p.algebraic
    u = np.atleast_1d(np.asarray(u, dtype=float))
    x = np.asarray(y_map(t, u), dtype=float)
    basis = n.tangent_basis(u)
    if hasattr(y_map, "du"):
        d2y = np.asarray(y_map.du(t, u)) @ basis.T
    else:
        cols = [(np.asarray(y_map(t, n.retract(u + _fd.STEP * e)))
                 - np.asarray(y_map(t, n.retract(u - _fd.STEP * e)))) / (2 * _fd.STEP) for e in basis]
        d2y = np.stack(cols, axis=-1)
    dh = p.constraint.jac_x(x, u)
    a_mat = dh @ d2y
    if a_mat.shape[0] != a_mat.shape[1]:
        raise SingularConstraintError("Dh D2y is not square", np.inf)
    cond = np.linalg.cond(a_mat)
    if not np.isfinite(cond) or cond > 1e12:
        raise SingularConstraintError(f"Dh D2y is singular (condition number {cond:.3g})", float(cond))
    solve = lambda v: basis.T @ np.linalg.solve(a_mat, dh @ v)
    base = ManifoldPoint(n, u)
    a = solve(p.strat_drift(x, u))
    bs = tuple(TangentVector(base, solve(s)) for s in p.sigma(x, u))
    return TangentVector(base, a), bs


# --- systems ---------------------------------------------------------------------

class _System:
    """A batched one-step map plus the hooks used by the block loop."""

    adaptive = True

    def __init__(self, problem, config):
        self.problem = problem
        self.config = config

    def initial_u(self, x, b):
        return np.broadcast_to(self.problem.u0, x.shape[:-1] + self.problem.u0.shape).copy()

    def resolve(self, x, u, b):
        return u

    def observed_u(self, x, u, b):
        return u

    def step(self, x, u, b, dW, dt, counts):
        raise NotImplementedError


class _Unconstrained(_System):
    adaptive = False

    def __init__(self, problem, config, u_fixed=None):
        super().__init__(problem, config)
        self.u_fixed = np.zeros(problem.algebraic.ambient_dim) if u_fixed is None else np.atleast_1d(u_fixed)

    def initial_u(self, x, b):
        return np.broadcast_to(self.u_fixed, x.shape[:-1] + self.u_fixed.shape).copy()

    def step(self, x, u, b, dW, dt, counts):
        p = self.problem
        if self.config.scheme == "euler_ito":
            fields = lambda z: (p.ito_drift(z, u), p.sigma(z, u))
            return euler_ito_step(fields, p.state.retract, x, dW, dt), u
        fields = lambda z: (p.strat_drift(z, u), p.sigma(z, u))
        return heun_step_x(fields, p.state.retract, x, dW, dt), u


class _ClosedForm(_System):
    def __init__(self, problem, config):
        super().__init__(problem, config)
        if problem.closed_form_u is None:
            raise SDAEError(f"problem {problem.name!r} has no closed-form algebraic variable")
        self.cf = problem.closed_form_u

    def initial_u(self, x, b):
        return self.cf(x, b)

    def resolve(self, x, u, b):
        return self.cf(x, b)

    def observed_u(self, x, u, b):
        return self.cf(x, b)

    def step(self, x, u, b, dW, dt, counts):
        p = self.problem
        if self.config.scheme == "euler_ito":
            fields = lambda z: (p.ito_drift(z, self.cf(z, b)), p.sigma(z, self.cf(z, b)))
            x1 = euler_ito_step(fields, p.state.retract, x, dW, dt)
        else:
            def fields(z):
                v = self.cf(z, b)
                return p.strat_drift(z, v), p.sigma(z, v)
            x1 = heun_step_x(fields, p.state.retract, x, dW, dt)
        return x1, self.cf(x1, b)


class _Index1(_System):
    adaptive = False

    def __init__(self, problem, config):
        super().__init__(problem, config)
        self.reduced = ReducedFields(problem)

    def step(self, x, u, b, dW, dt, counts):
        p = self.problem

        def fields(z, v):
            fx, fu = self.reduced.drift(z, v)
            sx, su = self.reduced.diffusions(z, v)
            return fx, fu, sx, su

        return heun_step(fields, p.state.retract, p.algebraic.retract, x, u, dW, dt)


class _Alg1(_System):
    def __init__(self, problem, config):
        super().__init__(problem, config)
        self.y = YFunction(problem, config.y_mode)

    def _gd(self, x, u, b, max_iter=None):
        c = self.config
        res = descend(self.y, b, x, u, c.gd_tol, c.gd_max_iter if max_iter is None else max_iter,
                      c.gd_rule, c.gd_step)
        if not res.converged.all():
            bad = ~res.converged
            worst = float(np.max(res.residual[bad]))
            lm = bool(res.local_minimum[bad].any())
            err = FallbackFailureError(
                f"gradient descent left |Y| = {worst:.3g} > {c.gd_tol:g}"
                + (" (flat gradient: suspected local minimum)" if lm else ""), worst, lm)
            err.rows = bad
            raise err
        return res.u

    def initial_u(self, x, b):
        return self._gd(x, super().initial_u(x, b), b)

    def resolve(self, x, u, b):
        if not self.config.resolve_u:
            return u
        return self._gd(x, u, b)

    def _coupled(self, x, u, b, dW, dt):
        p = self.problem
        guard = self.config.denom_guard
        degenerate = np.zeros(x.shape[0], dtype=bool)

        def fields(z, v):
            fx, fu, sx, su, deg = _coupled_fields(self.y, b, z, v, guard)
            degenerate[:] |= deg
            return fx, fu, sx, su

        x1, u1 = heun_step(fields, p.state.retract, p.algebraic.retract, x, u, dW, dt)
        return x1, u1, degenerate

    def step(self, x, u, b, dW, dt, counts):
        x1, u1, degenerate = self._coupled(x, u, b, dW, dt)
        if degenerate.any():
            err = DegenerateDirectionError(
                f"|D2Y|^2 <= {self.config.denom_guard:g} on the coupled step (set on_degenerate='alg2' to fall back)")
            err.rows = degenerate
            raise err
        return x1, u1


class _Alg2(_Alg1):
    def step(self, x, u, b, dW, dt, counts):
        c = self.config
        p = self.problem
        d2 = self.y.d2(b, x, u)
        n2 = (d2 * d2).sum(-1)
        coupled = (np.sqrt(n2) > c.d2y_threshold) & (n2 > c.denom_guard)
        x1 = np.empty_like(x)
        u1 = np.empty_like(u)
        fall = ~coupled
        if coupled.any():
            rows = np.flatnonzero(coupled)
            xc, uc, deg = self._coupled(x[rows], u[rows], b[rows], dW[rows], dt)
            x1[rows] = xc
            u1[rows] = uc
            counts["denominator_guards"][rows[deg]] += 1
            fall[rows[deg]] = True
        counts["denominator_guards"][~(n2 > c.denom_guard)] += 1
        if fall.any():
            rows = np.flatnonzero(fall)
            uf = u[rows]
            fields = lambda z: (p.strat_drift(z, uf), p.sigma(z, uf))
            xf = heun_step_x(fields, p.state.retract, x[rows], dW[rows], dt)
            try:
                uf = self._gd(xf, uf, b[rows])
            except FallbackFailureError as err:
                rows_bad = np.zeros(x.shape[0], dtype=bool)
                rows_bad[rows[err.rows]] = True
                err.rows = rows_bad
                raise
            x1[rows] = xf
            u1[rows] = uf
            counts["gd_fallbacks"][rows] += 1
        return x1, u1


_SYSTEMS = {
    "alg1": _Alg1, "alg2": _Alg2, "closed-form": _ClosedForm,
    "index1": _Index1, "unconstrained": _Unconstrained,
}


def make_system(problem, config, **kw):
    kind = config.algorithm
    if kind == "alg1" and config.on_degenerate == "alg2":
        kind = "alg2"
    return _SYSTEMS[kind](problem, config, **kw)


# --- the block loop --------------------------------------------------------------

def _row_error(err, n):
    rows = getattr(err, "rows", None)
    if rows is None or np.shape(rows) != (n,):
        return None
    return np.asarray(rows, dtype=bool)


def _advance(system, x, u, b, dW, dt):
    """Integrate ``dW.shape[1]`` steps for a batch; returns histories and per-row errors.

    A failure confined to known rows is charged to those rows and the rest
    are rerun without them; any other failure is isolated by bisecting the
    batch, so a sick path never takes its neighbours down.
    """
    p = system.problem
    n_rows, n_steps = dW.shape[:2]
    errors = {}
    rows = np.arange(n_rows)
    while rows.size:
        counts = {k: np.zeros(rows.size, dtype=int) for k in FLAG_NAMES}
        try:
            xs, us, hs, fs = _run_steps(system, x[rows], u[rows], b[rows], dW[rows], dt, counts)
        except SDAEError as err:
            bad = _row_error(err, rows.size)
            if bad is not None and bad.any() and not bad.all():
                for r in rows[bad]:
                    errors[int(r)] = err
                rows = rows[~bad]
                continue
            if rows.size == 1:
                errors[int(rows[0])] = err
                break
            half = rows.size // 2
            parts = (rows[:half], rows[half:])
            sub = [_advance(system, x[q], u[q], b[q], dW[q], dt) for q in parts]
            return _merge(sub, parts, n_rows, n_steps, x, u, errors)
        out = _empty(n_rows, n_steps, x, u)
        for key, val in zip(("X", "U", "H", "F"), (xs, us, hs, fs)):
            out[key][rows] = val
        for k in FLAG_NAMES:
            out["counts"][k][rows] = counts[k]
        out["errors"] = errors
        return out
    out = _empty(n_rows, n_steps, x, u)
    out["errors"] = errors
    return out


def _empty(n_rows, n_steps, x, u):
    return {
        "X": np.full((n_rows, n_steps) + x.shape[1:], np.nan),
        "U": np.full((n_rows, n_steps) + u.shape[1:], np.nan),
        "H": np.full((n_rows, n_steps), np.nan),
        "F": np.zeros((n_rows, n_steps), dtype=bool),
        "counts": {k: np.zeros(n_rows, dtype=int) for k in FLAG_NAMES},
        "errors": {},
    }


def _merge(sub, parts, n_rows, n_steps, x, u, errors):
    out = _empty(n_rows, n_steps, x, u)
    out["errors"] = dict(errors)
    for rows, s in zip(parts, sub):
        for key in ("X", "U", "H", "F"):
            out[key][rows] = s[key]
        for k in FLAG_NAMES:
            out["counts"][k][rows] = s["counts"][k]
        for i, err in s["errors"].items():
            out["errors"][int(rows[i])] = err
    return out


def _run_steps(system, x, u, b, dW, dt, counts):
    p = system.problem
    n_steps = dW.shape[1]
    xs = np.empty((x.shape[0], n_steps) + x.shape[1:])
    us = np.empty((u.shape[0], n_steps) + u.shape[1:])
    hs = np.empty((x.shape[0], n_steps))
    fs = np.zeros((x.shape[0], n_steps), dtype=bool)
    with np.errstate(all="ignore"):
        for j in range(n_steps):
            before = counts["gd_fallbacks"].copy()
            x, u = system.step(x, u, b, dW[:, j], dt, counts)
            fs[:, j] = counts["gd_fallbacks"] > before
            xs[:, j] = x
            us[:, j] = system.observed_u(x, u, b)
            hs[:, j] = p.h_dist(x, us[:, j])
    return xs, us, hs, fs


def _block_violation(h, epsilon, mode):
    bad = ~np.all(np.isfinite(h), axis=1)
    if epsilon is None:
        return bad
    score = np.max(np.where(np.isfinite(h), h, np.inf), axis=1) if mode == "sup" else h[:, -1]
    return bad | ~(score <= epsilon)


def run_paths(problem, config, paths, system=None):
    """Run the configured algorithm on a batch of Wiener paths.

    ``paths`` is a sequence of :class:`WienerPath` sharing ``dt`` and length.
    Returns one :class:`Trajectory` per path; a failed path carries the
    exception in ``failure`` and its history up to the last accepted block.
    """
    c = config
    c.check_cut_locus(problem)
    system = system or make_system(problem, c)
    p = problem
    n_paths = len(paths)
    inc = np.stack([w.increments for w in paths])
    n_steps = inc.shape[1]
    dt = paths[0].dt
    N = c.inner_steps
    adaptive = system.adaptive and c.adapt_b and c.epsilon is not None

    x = np.broadcast_to(p.x0, (n_paths,) + p.x0.shape).copy()
    b = np.full(n_paths, float(c.b0))
    failures = {}
    with np.errstate(all="ignore"):
        u = _isolated_rows(lambda rows: system.initial_u(x[rows], b[rows]), n_paths, failures,
                           np.zeros((n_paths,) + p.u0.shape))
    X = np.full((n_paths, n_steps + 1) + x.shape[1:], np.nan)
    U = np.full((n_paths, n_steps + 1) + u.shape[1:], np.nan)
    H = np.full((n_paths, n_steps + 1), np.nan)
    B = np.full((n_paths, n_steps + 1), np.nan)
    F = np.zeros((n_paths, n_steps + 1), dtype=bool)
    X[:, 0], U[:, 0], B[:, 0] = x, system.observed_u(x, u, b), b
    with np.errstate(all="ignore"):
        H[:, 0] = p.h_dist(x, U[:, 0])
    flags = {k: np.zeros(n_paths, dtype=int) for k in FLAG_NAMES}
    reached = np.zeros(n_paths, dtype=int)

    for block, s0 in enumerate(range(0, n_steps, N)):
        s1 = min(s0 + N, n_steps)
        pending = np.array([r for r in range(n_paths) if r not in failures], dtype=int)
        attempt = 0
        while pending.size:
            if attempt == 0 or c.retry_rng == "reuse":
                dW = inc[pending, s0:s1]
            else:
                dW = np.stack([fresh_increments(c.seed, paths[r].path_index, block, attempt,
                                                s1 - s0, inc.shape[2], dt) for r in pending])
            out = _advance(system, x[pending], u[pending], b[pending], dW, dt)
            for local, err in out["errors"].items():
                failures[int(pending[local])] = err
            alive = np.array([i not in out["errors"] for i in range(pending.size)], dtype=bool)
            viol = _block_violation(out["H"], c.epsilon, c.block_check)
            accept = alive & (~viol | (not adaptive))
            for i in np.flatnonzero(accept):
                r = pending[i]
                X[r, s0 + 1:s1 + 1] = out["X"][i]
                U[r, s0 + 1:s1 + 1] = out["U"][i]
                H[r, s0 + 1:s1 + 1] = out["H"][i]
                F[r, s0 + 1:s1 + 1] = out["F"][i]
                B[r, s0 + 1:s1 + 1] = b[r]
                x[r] = out["X"][i, -1]
                u[r] = out["U"][i, -1]
                reached[r] = s1
                for k in FLAG_NAMES:
                    flags[k][r] += out["counts"][k][i]
                if viol[i]:
                    flags["violations"][r] += 1
            retry = pending[alive & ~accept]
            nxt = []
            for r in retry:
                flags["violations"][r] += 1
                if 2.0 * b[r] > c.b_cap:
                    failures[int(r)] = StiffnessError(
                        f"b would exceed b_cap={c.b_cap:g} at t={s0 * dt:.6g} "
                        f"(sup h_dist {np.nanmax(out['H'][list(pending).index(r)]):.3g} > epsilon={c.epsilon:g})",
                        {"b": float(b[r]), "t": s0 * dt, "block": block, "path_index": paths[r].path_index})
                    continue
                b[r] *= 2.0
                nxt.append(r)
            nxt = np.array(nxt, dtype=int)
            if nxt.size:
                errs = {}
                with np.errstate(all="ignore"):
                    u[nxt] = _isolated_rows(
                        lambda rows: system.resolve(x[nxt[rows]], u[nxt[rows]], b[nxt[rows]]),
                        nxt.size, errs, u[nxt])
                for i, err in errs.items():
                    failures[int(nxt[i])] = err
                nxt = np.array([r for i, r in enumerate(nxt) if i not in errs], dtype=int)
            pending = nxt
            attempt += 1

    trajectories = []
    times = dt * np.arange(n_steps + 1)
    for r in range(n_paths):
        end = reached[r] + 1
        trajectories.append(Trajectory(
            times=times[:end], X=X[r, :end], U=U[r, :end], h_dist=H[r, :end], b=B[r, :end],
            flags={k: int(flags[k][r]) for k in FLAG_NAMES}, failure=failures.get(r),
            path_index=paths[r].path_index, fallback=F[r, :end]))
    return trajectories


def _isolated_rows(fn, n, failures, default):
    """Evaluate a row-wise function, isolating rows whose evaluation fails.

    Failed rows are recorded in ``failures`` and keep ``default``.
    """
    rows = np.arange(n)
    try:
        return fn(rows)
    except SDAEError:
        pass
    value = np.array(default, dtype=float, copy=True)
    errs = {}
    for r in range(n):
        try:
            value[r] = fn(rows[r:r + 1])[0]
        except SDAEError as err:
            errs[r] = err
    failures.update(errs)
    return value


def _paths_for(problem, config, path_indices, refine=1):
    return [wiener_path(config.seed, i, problem.d, config.n_steps, config.dt, refine) for i in path_indices]


def solve(problem, config, path=None, path_index=0):
    """Run one path of the configured algorithm; raise its failure if any."""
    path = path or _paths_for(problem, config, [path_index])[0]
    traj = run_paths(problem, config, [path])[0]
    if traj.failure is not None:
        raise traj.failure
    return traj


def algorithm1(problem, config=None, path=None, path_index=0):
    """Approximate bounded m-solution with the coupled Y-system and b-doubling."""
    config = (config or SolverConfig()).replace(algorithm="alg1")
    return solve(problem, config, path, path_index)


def algorithm2(problem, config=None, path=None, path_index=0):
    """As :func:`algorithm1`, freezing U and descending on Y^2 where D2Y degenerates."""
    config = (config or SolverConfig()).replace(algorithm="alg2")
    return solve(problem, config, path, path_index)


def closed_form_solve(problem, config=None, path=None, path_index=0):
    """Integrate X with the algebraic variable given in closed form at each point."""
    config = (config or SolverConfig()).replace(algorithm="closed-form")
    return solve(problem, config, path, path_index)


def solve_index1(problem, config=None, path=None, path_index=0):
    """Integrate the reduced index-1 system on M x N."""
    config = (config or SolverConfig()).replace(algorithm="index1", epsilon=None)
    return solve(problem, config, path, path_index)


def integrate_intrinsic(problem, u_process, path, scheme="heun_stratonovich"):
    """Integrate the intrinsic SDE for X with a prescribed algebraic process.

    ``u_process`` is a constant point of N or a callable ``(t, x) -> u``
    acting on batches.  The Stratonovich scheme uses the drift
    ``V + 1/2 sum nabla_S s_l``, the Ito scheme ``V + 1/2 sum nabla_I s_l``
    (which needs a connection).  ``path`` is a :class:`WienerPath` or a list
    of them sharing one grid; a list gives a list of trajectories.
    """
    p = problem
    m = p.state
    if scheme == "euler_ito" and not m.has_connection:
        raise UnsupportedMetricError("the Ito scheme needs a connection on M")
    if scheme not in ("heun_stratonovich", "euler_ito"):
        raise ValueError(f"unknown scheme {scheme!r}")
    single = isinstance(path, WienerPath)
    paths = [path] if single else list(path)
    if callable(u_process):
        ufn = u_process
    else:
        const = np.atleast_1d(np.asarray(u_process, dtype=float))
        ufn = lambda t, x: np.broadcast_to(const, x.shape[:-1] + const.shape)
    dt = paths[0].dt
    inc = np.stack([w.increments for w in paths])
    x = np.broadcast_to(p.x0, (len(paths),) + p.x0.shape).copy()
    xs = [x]
    us = [np.asarray(ufn(0.0, x), dtype=float)]
    with np.errstate(all="ignore"):
        for j in range(inc.shape[1]):
            t = j * dt
            if scheme == "euler_ito":
                fields = lambda z: (p.ito_drift(z, ufn(t, z)), p.sigma(z, ufn(t, z)))
                x = euler_ito_step(fields, m.retract, x, inc[:, j], dt)
            else:
                fields = lambda z: (p.strat_drift(z, ufn(t, z)), p.sigma(z, ufn(t, z)))
                x = heun_step_x(fields, m.retract, x, inc[:, j], dt)
            xs.append(x)
            us.append(np.asarray(ufn(t + dt, x), dtype=float))
        X = np.stack(xs, axis=1)
        U = np.stack(us, axis=1)
        H = p.h_dist(X, U)
    out = [Trajectory(times=w.times, X=X[i], U=U[i], h_dist=H[i], b=np.full(X.shape[1], np.nan),
                      path_index=w.path_index) for i, w in enumerate(paths)]
    return out[0] if single else out
