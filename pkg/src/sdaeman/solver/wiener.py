"""Reproducible Wiener increments from a counter-based generator.

Each path owns the stream ``Philox(SeedSequence(seed, spawn_key=(index,)))``
so paths are independent of how many others are drawn or in what order.
"""

from dataclasses import dataclass

import numpy as np


def _generator(seed, key):
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(seed, spawn_key=tuple(key))))


@dataclass(frozen=True)
class WienerPath:
    seed: int
    path_index: int
    dt: float
    increments: np.ndarray

    @property
    def d(self):
        return self.increments.shape[1]

    @property
    def n_steps(self):
        return self.increments.shape[0]

    @property
    def times(self):
        return self.dt * np.arange(self.n_steps + 1)

    @property
    def values(self):
        w = np.zeros((self.n_steps + 1, self.d))
        np.cumsum(self.increments, axis=0, out=w[1:])
        return w

    def coarsen(self, factor):
        """Same Brownian path sampled on a grid ``factor`` times coarser."""
        if self.n_steps % factor:
            raise ValueError("step count is not divisible by the coarsening factor")
        inc = self.increments.reshape(self.n_steps // factor, factor, self.d)
        total = inc[:, 0, :].copy()
        for j in range(1, factor):
            total += inc[:, j, :]
        return WienerPath(self.seed, self.path_index, self.dt * factor, total)


def wiener_path(seed, path_index, d, n_steps, dt, refine=1):
    """Increments ``N(0, dt)`` of shape ``(n_steps, d)``.

    With ``refine > 1`` the path is drawn on the finer grid ``dt / refine``
    and summed, so runs at different step sizes share one realization.
    """
    if n_steps < 1:
        raise ValueError("n_steps must be at least 1")
    fine_dt = dt / refine
    z = _generator(seed, (path_index,)).standard_normal((n_steps * refine, d))
    path = WienerPath(int(seed), int(path_index), fine_dt, z * np.sqrt(fine_dt))
    return path.coarsen(refine) if refine > 1 else path


def wiener_batch(seed, path_indices, d, n_steps, dt, refine=1):
    """Stacked increments ``(len(path_indices), n_steps, d)``."""
    return np.stack([wiener_path(seed, i, d, n_steps, dt, refine).increments for i in path_indices])


def fresh_increments(seed, path_index, block, attempt, n_steps, d, dt):
    """Independent increments for retrying a block with ``retry_rng='fresh'``."""
    z = _generator(seed, (path_index, 1, block, attempt)).standard_normal((n_steps, d))
    return z * np.sqrt(dt)
