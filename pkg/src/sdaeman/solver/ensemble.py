"""Monte-Carlo ensembles and their diagnostics."""

import time
from dataclasses import dataclass, field

import numpy as np

from .algorithms import FLAG_NAMES, make_system, run_paths
from .wiener import wiener_path
from .yfunction import YFunction


@dataclass
class EnsembleDiagnostics:
    n_paths: int
    epsilon: float
    sup_h_dist: np.ndarray
    violation_fraction: float
    final_b: np.ndarray
    failures: dict
    flags: dict
    lambda_estimate: float = None
    b_bounds: dict = None
    runtime: float = 0.0
    trajectories: list = field(default_factory=list, repr=False)

    def to_dict(self):
        """JSON-ready view; the runtime is left out so outputs are reproducible."""
        out = {
            "n_paths": self.n_paths,
            "epsilon": self.epsilon,
            "violation_fraction": self.violation_fraction,
            "sup_h_dist": [float(v) for v in self.sup_h_dist],
            "final_b": [float(v) for v in self.final_b],
            "failures": {str(k): f"{type(v).__name__}: {v}" for k, v in sorted(self.failures.items())},
            "flags": {k: int(v) for k, v in self.flags.items()},
        }
        if self.lambda_estimate is not None:
            out["lambda_estimate"] = self.lambda_estimate
            out["b_bounds"] = self.b_bounds
        return out


def violation_fraction(sup_h, epsilon, failed=None):
    """Share of paths whose sup distance exceeds ``epsilon``; failed paths count as violating."""
    sup_h = np.asarray(sup_h, dtype=float)
    bad = ~(sup_h <= epsilon)
    if failed is not None:
        bad |= np.asarray(failed, dtype=bool)
    return float(bad.mean()) if bad.size else 0.0


def estimate_lambda(problem, trajectories, mode=None):
    """Monte-Carlo sup over visited points of ``sum_l (Dh s_l [Delta_p^2 o h])^2``."""
    y = YFunction(problem, mode)
    best = 0.0
    for tr in trajectories:
        if tr.X.shape[0] == 0:
            continue
        with np.errstate(all="ignore"):
            vals = y.lambda_terms(tr.X, tr.U)
        vals = vals[np.isfinite(vals)]
        if vals.size:
            best = max(best, float(vals.max()))
    return best


def run_ensemble(problem, config, path_indices=None, batch_size=None, system=None):
    """Run ``config.n_paths`` paths (or ``path_indices``) and summarise them.

    Per-path failures are kept in ``failures`` and counted as violations;
    an error is raised only when every path fails.
    """
    t0 = time.perf_counter()
    indices = list(range(config.n_paths)) if path_indices is None else list(path_indices)
    batch = batch_size or len(indices)
    system = system or make_system(problem, config)
    trajectories = []
    for k in range(0, len(indices), batch):
        paths = [wiener_path(config.seed, i, problem.d, config.n_steps, config.dt)
                 for i in indices[k:k + batch]]
        trajectories.extend(run_paths(problem, config, paths, system))
    failures = {tr.path_index: tr.failure for tr in trajectories if tr.failure is not None}
    if failures and len(failures) == len(trajectories):
        raise trajectories[0].failure
    sup_h = np.array([tr.sup_h_dist for tr in trajectories])
    eps = config.epsilon if config.epsilon is not None else np.inf
    frac = violation_fraction(sup_h, eps, [tr.failure is not None for tr in trajectories])
    diag = EnsembleDiagnostics(
        n_paths=len(trajectories), epsilon=config.epsilon, sup_h_dist=sup_h, violation_fraction=frac,
        final_b=np.array([tr.final_b for tr in trajectories]), failures=failures,
        flags={k: sum(tr.flags[k] for tr in trajectories) for k in FLAG_NAMES},
        trajectories=trajectories)
    if config.lambda_estimate:
        lam = estimate_lambda(problem, trajectories, "squared")
        diag.lambda_estimate = lam
        a, e = config.alpha, config.epsilon
        diag.b_bounds = {"lambda/(alpha eps^4)": lam / (a * e ** 4), "lambda/(2 alpha eps^2)": lam / (2 * a * e ** 2)} if e else None
    diag.runtime = time.perf_counter() - t0
    return diag
