"""Central finite differences on batched arrays.

All helpers take functions mapping ``(..., q)`` arrays to ``(..., k)`` (or
``(...,)``) arrays and differentiate along the last axis.
"""

import numpy as np

STEP = 1e-5
STEP2 = 1e-4


def jacobian(fn, x, step=STEP):
    """Jacobian ``(..., k, q)`` of ``fn`` at ``x`` along ambient axes."""
    x = np.asarray(x, dtype=float)
    cols = []
    for i in range(x.shape[-1]):
        e = np.zeros(x.shape[-1])
        e[i] = step
        cols.append((np.asarray(fn(x + e)) - np.asarray(fn(x - e))) / (2 * step))
    return np.stack(cols, axis=-1)


def gradient(fn, x, step=STEP):
    """Gradient ``(..., q)`` of a scalar-valued ``fn``."""
    return jacobian(fn, x, step)


def hessian(fn, x, step=STEP2):
    """Hessian ``(..., q, q)`` of a scalar-valued ``fn`` (four-point stencil)."""
    x = np.asarray(x, dtype=float)
    q = x.shape[-1]
    out = np.empty(x.shape[:-1] + (q, q))
    eye = np.eye(q) * step
    for i in range(q):
        for j in range(i, q):
            ei, ej = eye[i], eye[j]
            val = (fn(x + ei + ej) - fn(x + ei - ej)
                   - fn(x - ei + ej) + fn(x - ei - ej)) / (4 * step * step)
            out[..., i, j] = val
            out[..., j, i] = val
    return out


def directional(fn, x, v, step=STEP):
    """Derivative of ``fn`` at ``x`` along direction ``v``."""
    x = np.asarray(x, dtype=float)
    v = np.asarray(v, dtype=float)
    return (np.asarray(fn(x + step * v)) - np.asarray(fn(x - step * v))) / (2 * step)
