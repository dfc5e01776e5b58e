"""Riemannian gradient descent on K(u) = Y(x, u)^2 over N."""

from dataclasses import dataclass

import numpy as np

from ..errors import FallbackFailureError

ARMIJO_C = 1e-4
MAX_HALVINGS = 60
FLAT_RTOL = 1e-14
STALL_RTOL = 1e-12


@dataclass
class GDResult:
    u: np.ndarray
    iterations: np.ndarray
    residual: np.ndarray
    converged: np.ndarray
    local_minimum: np.ndarray


def descend(y, b, x, u, tol=1e-8, max_iter=200, rule="newton", step=0.1):
    """Batched descent; rows are independent of one another.

    ``y`` provides ``value(b, x, u)``, ``d2(b, x, u)`` and ``algebraic``.
    With ``rule='newton'`` the trial step is ``2K / |grad K|^2`` (a Newton
    step on Y, exact when Y is affine in u); with ``rule='fixed'`` it is
    ``step``.  Either way the step is halved until the Armijo condition holds.
    """
    n = y.algebraic
    x = np.atleast_2d(x)
    u = np.array(np.atleast_2d(u), dtype=float)
    b = np.broadcast_to(np.asarray(b, dtype=float), x.shape[:1]).copy()
    yv = y.value(b, x, u)
    iters = np.zeros(x.shape[0], dtype=int)
    stuck = np.zeros(x.shape[0], dtype=bool)
    with np.errstate(all="ignore"):
        for _ in range(max_iter):
            active = np.flatnonzero((np.abs(yv) > tol) & ~stuck & np.isfinite(yv))
            if active.size == 0:
                break
            xa, ua, ba, ya = x[active], u[active], b[active], yv[active]
            g = y.d2(ba, xa, ua)
            grad = 2.0 * ya[:, None] * g
            gn2 = (grad * grad).sum(-1)
            k = ya * ya
            flat = ~(np.sqrt(gn2) > FLAT_RTOL * k)
            if rule == "newton":
                t = np.where(flat, 0.0, 2.0 * k / np.where(flat, 1.0, gn2))
            else:
                t = np.full(active.size, float(step))
            accepted = np.zeros(active.size, dtype=bool)
            new_u = ua.copy()
            new_y = ya.copy()
            for _ in range(MAX_HALVINGS):
                todo = np.flatnonzero(~accepted & ~flat)
                if todo.size == 0:
                    break
                cand = n.retract(ua[todo] - t[todo, None] * grad[todo])
                yc = y.value(ba[todo], xa[todo], cand)
                ok = yc * yc <= k[todo] - ARMIJO_C * t[todo] * gn2[todo]
                hit = todo[ok]
                new_u[hit] = cand[ok]
                new_y[hit] = yc[ok]
                accepted[hit] = True
                t[todo[~ok]] *= 0.5
            u[active] = new_u
            yv[active] = new_y
            iters[active] += accepted
            # a step that no longer lowers K in relative terms counts as a stall
            stalled = accepted & (new_y * new_y >= k * (1.0 - STALL_RTOL)) & (np.abs(new_y) > tol)
            stuck[active] = ~accepted | stalled
    res = np.abs(yv)
    conv = res <= tol
    return GDResult(u, iters, res, conv, stuck & ~conv)


def gradient_descent_root(y, b, x, u_init, tol=1e-8, max_iter=200, rule="newton", step=0.1):
    """Find ``u`` with ``|Y(x, u)| <= tol`` starting from ``u_init``.

    Returns ``(u, iterations)`` for a single point or a batch.  Raises
    :class:`FallbackFailureError` when any row fails; ``local_minimum`` is set
    when descent stalled on a flat gradient away from a root.
    """
    single = np.ndim(x) == 1
    res = descend(y, b, x, u_init, tol, max_iter, rule, step)
    if not res.converged.all():
        bad = np.flatnonzero(~res.converged)
        worst = float(np.nanmax(res.residual[bad])) if np.isfinite(res.residual[bad]).any() else float("nan")
        lm = bool(res.local_minimum[bad].any())
        hint = " (flat gradient: suspected local minimum)" if lm else ""
        raise FallbackFailureError(
            f"gradient descent reached |Y| = {worst:.3g} > {tol:g}{hint}", worst, lm)
    if single:
        return res.u[0], int(res.iterations[0])
    return res.u, res.iterations
