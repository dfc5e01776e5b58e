"""Stochastic integration and approximate solutions of high index SDAEs."""

from .algorithms import (
    Trajectory,
    algorithm1,
    algorithm2,
    bounded_m_fields,
    closed_form_solve,
    integrate_intrinsic,
    run_paths,
    solve,
    solve_index1,
    unit_probability_fields,
)
from .config import SolverConfig
from .ensemble import EnsembleDiagnostics, estimate_lambda, run_ensemble, violation_fraction
from .gradient import gradient_descent_root
from .stepping import euler_ito_step, heun_step, heun_step_x
from .wiener import WienerPath, fresh_increments, wiener_batch, wiener_path
from .yfunction import YFunction, decomposed_drift, y_value

__all__ = [
    "EnsembleDiagnostics", "SolverConfig", "Trajectory", "WienerPath", "YFunction",
    "algorithm1", "algorithm2", "bounded_m_fields", "closed_form_solve", "decomposed_drift",
    "estimate_lambda", "euler_ito_step", "fresh_increments", "gradient_descent_root",
    "heun_step", "heun_step_x", "integrate_intrinsic", "run_ensemble", "run_paths", "solve",
    "solve_index1", "unit_probability_fields", "violation_fraction", "wiener_batch",
    "wiener_path", "y_value",
]
