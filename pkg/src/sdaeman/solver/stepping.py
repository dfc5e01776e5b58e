"""One-step maps with retraction.

All steppers act on batches: ``x`` is ``(P, q)``, ``u`` is ``(P, m)``,
``dW`` is ``(P, d)`` and diffusion stacks are ``(d, P, q)``.  Only
elementwise arithmetic is used so each row's result is independent of the
rest of the batch.
"""

import numpy as np


def _noise(stack, dW):
    out = stack[0] * dW[..., 0:1]
    for l in range(1, stack.shape[0]):
        out = out + stack[l] * dW[..., l:l + 1]
    return out


def heun_step(fields, retract_x, retract_u, x, u, dW, dt):
    """Stratonovich-Heun predictor-corrector step for a coupled system.

    ``fields(x, u)`` returns ``(fx, fu, sx, su)``: drifts on M and N and the
    stacked diffusions.  Both predictor and corrector are retracted.
    """
    fx, fu, sx, su = fields(x, u)
    xp = retract_x(x + fx * dt + _noise(sx, dW))
    up = retract_u(u + fu * dt + _noise(su, dW))
    fx2, fu2, sx2, su2 = fields(xp, up)
    x1 = retract_x(x + 0.5 * (fx + fx2) * dt + 0.5 * (_noise(sx, dW) + _noise(sx2, dW)))
    u1 = retract_u(u + 0.5 * (fu + fu2) * dt + 0.5 * (_noise(su, dW) + _noise(su2, dW)))
    return x1, u1


def heun_step_x(fields, retract, x, dW, dt):
    """Heun step for an SDE on M alone; ``fields(x)`` returns ``(f, s)``."""
    f, s = fields(x)
    xp = retract(x + f * dt + _noise(s, dW))
    f2, s2 = fields(xp)
    return retract(x + 0.5 * (f + f2) * dt + 0.5 * (_noise(s, dW) + _noise(s2, dW)))


def euler_ito_step(fields, retract, x, dW, dt):
    """Euler-Maruyama step for an Ito SDE followed by the retraction.

    ``fields(x)`` returns the Ito drift and the diffusion stack.  With a
    metric-projection retraction the second-order term of the projection
    reproduces the normal part of the Ito correction, so the step is
    consistent with the Levi-Civita Ito SDE on M.
    """
    f, s = fields(x)
    return retract(x + f * dt + _noise(s, dW))
