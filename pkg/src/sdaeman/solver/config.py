"""Solver configuration."""

import dataclasses
import math
from dataclasses import dataclass, field
from typing import Optional

from ..errors import ConfigError, CutLocusProximityError

SCHEMES = ("heun_stratonovich", "euler_ito")
RETRY_RNG = ("reuse", "fresh")
BLOCK_CHECKS = ("sup", "end")
GD_RULES = ("newton", "fixed")
ALGORITHMS = ("index1", "alg1", "alg2", "closed-form", "unconstrained")
ON_DEGENERATE = ("error", "alg2")


@dataclass(frozen=True)
class SolverConfig:
    dt: float = 1e-3
    t_final: float = 1.0
    epsilon: Optional[float] = 0.1
    alpha: float = 0.05
    b0: float = 1.0
    b_cap: float = 2.0 ** 20
    adapt_b: bool = True
    inner_steps: int = 10
    block_check: str = "sup"
    resolve_u: bool = True
    gd_step: float = 0.1
    gd_tol: float = 1e-8
    gd_max_iter: int = 200
    gd_rule: str = "newton"
    d2y_threshold: float = 1e-8
    denom_guard: float = 1e-10
    scheme: str = "heun_stratonovich"
    algorithm: str = "alg1"
    on_degenerate: str = "error"
    y_mode: Optional[str] = None
    seed: int = 0
    n_paths: int = 1
    retry_rng: str = "reuse"
    lambda_estimate: bool = False
    extra: dict = field(default_factory=dict)

    def __post_init__(self):
        def bad(msg):
            raise ConfigError(msg)

        if not self.dt > 0:
            bad("dt must be positive")
        if not self.t_final > 0:
            bad("t_final must be positive")
        if self.epsilon is not None and not self.epsilon > 0:
            bad("epsilon must be positive")
        if not 0 < self.alpha <= 1:
            bad("alpha must lie in (0, 1]")
        if not self.b0 > 0:
            bad("b0 must be positive")
        if not self.b_cap >= self.b0:
            bad("b_cap must be at least b0")
        if int(self.inner_steps) != self.inner_steps or self.inner_steps < 1:
            bad("inner_steps must be a positive integer")
        if int(self.n_paths) != self.n_paths or self.n_paths < 1:
            bad("n_paths must be a positive integer")
        if self.gd_max_iter < 0 or not self.gd_tol > 0 or not self.gd_step > 0:
            bad("invalid gradient-descent controls")
        if not self.denom_guard > 0 or not self.d2y_threshold >= 0:
            bad("guards must be positive")
        for name, allowed in (("scheme", SCHEMES), ("retry_rng", RETRY_RNG),
                              ("block_check", BLOCK_CHECKS), ("gd_rule", GD_RULES),
                              ("algorithm", ALGORITHMS), ("on_degenerate", ON_DEGENERATE)):
            if getattr(self, name) not in allowed:
                bad(f"{name} must be one of {', '.join(allowed)}")
        if self.y_mode not in (None, "squared", "linear"):
            bad("y_mode must be squared or linear")
        if self.scheme == "euler_ito" and self.algorithm not in ("closed-form", "unconstrained"):
            bad("euler_ito is only available for closed-form and unconstrained runs")
        n = self.t_final / self.dt
        if abs(n - round(n)) > 1e-6 * max(1.0, n):
            bad("t_final must be an integer multiple of dt")

    @property
    def n_steps(self):
        return int(round(self.t_final / self.dt))

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
        kw = dict(data)
        for key in ("inner_steps", "n_paths", "gd_max_iter", "seed"):
            if key in kw and kw[key] is not None:
                kw[key] = int(kw[key])
        return cls(**kw)

    def check_cut_locus(self, problem):
        """Reject an epsilon that reaches the injectivity radius of P at p."""
        if self.epsilon is None:
            return
        radius = problem.target.injectivity_radius(problem.target_point)
        if radius is not None and math.isfinite(radius) and self.epsilon >= radius:
            raise CutLocusProximityError(
                f"epsilon={self.epsilon} is not below the injectivity radius {radius:.6g}")
