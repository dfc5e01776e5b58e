"""Command-line front end: classify, solve, ensemble and example."""

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .errors import ConfigError, SDAEError
from .examples import REGISTRY, get_problem, sphere_constraint_curve
from .problem import classify
from .solver import SolverConfig, run_ensemble, run_paths, wiener_path
from .solver.algorithms import make_system

FLOAT_FMT = "%.17g"

# flag name -> SolverConfig field
CONFIG_FLAGS = {
    "algorithm": "algorithm", "dt": "dt", "t_final": "t_final", "epsilon": "epsilon",
    "alpha": "alpha", "b0": "b0", "b_cap": "b_cap", "inner_steps": "inner_steps",
    "seed": "seed", "paths": "n_paths", "retry_rng": "retry_rng", "scheme": "scheme",
    "lambda_estimate": "lambda_estimate",
}


def _fmt(v):
    return FLOAT_FMT % v


def write_trajectory_csv(path, traj):
    """Write ``t,x1..xq,u1..um,h_dist,b`` with 17 significant digits."""
    q = traj.X.shape[-1]
    m = traj.U.shape[-1]
    header = ["t"] + [f"x{i + 1}" for i in range(q)] + [f"u{i + 1}" for i in range(m)] + ["h_dist", "b"]
    rows = np.column_stack([traj.times, traj.X, traj.U, traj.h_dist, traj.b])
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(_fmt(v) for v in row) + "\n")


def write_json(path, data):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(data, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _parse_params(items):
    out = {}
    for item in items or []:
        if "=" not in item:
            raise ConfigError(f"--param expects key=value, got {item!r}")
        key, val = item.split("=", 1)
        try:
            out[key] = json.loads(val)
        except json.JSONDecodeError:
            out[key] = val
    return out


def _load_config_file(path):
    """A flat SolverConfig JSON or a run manifest (its ``config`` entry is used)."""
    try:
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as err:
        raise ConfigError(f"cannot read config {path}: {err}") from err
    if "config" in data and isinstance(data["config"], dict):
        return data["config"], data.get("problem")
    return data, None


def _resolve(args):
    """Problem, config and problem description from the config file and the flags."""
    base, prob_info = ({}, None)
    if getattr(args, "config", None):
        base, prob_info = _load_config_file(args.config)
    name = args.problem or (prob_info or {}).get("name")
    if not name:
        raise ConfigError("no problem given (use --problem)")
    params = dict((prob_info or {}).get("params", {})) if prob_info and prob_info.get("name") == name else {}
    params.update(_parse_params(getattr(args, "param", None)))
    problem = get_problem(name, **params)
    data = dict(base)
    for flag, key in CONFIG_FLAGS.items():
        val = getattr(args, flag, None)
        if val is not None and val is not False:
            data[key] = val
    if "algorithm" not in data:
        data["algorithm"] = "alg1" if problem.u_free else "index1"
    if data["algorithm"] == "index1" and "epsilon" not in data:
        data["epsilon"] = None
    config = SolverConfig.from_dict(data)
    return problem, config, {"name": name, "params": params}


def _manifest(command, prob_info, config, outputs, started):
    return {
        "command": command,
        "problem": prob_info,
        "config": config.to_dict(),
        "seed": config.seed,
        "version": __version__,
        "timing": {"wall_seconds": round(time.perf_counter() - started, 3)},
        "outputs": outputs,
    }


def _out_dir(args):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- commands ----------------------------------------------------------------------

def cmd_classify(args):
    problem = get_problem(args.problem, **_parse_params(args.param))
    result = classify(problem, n_samples=args.samples, seed=args.seed)
    report = result.to_dict()
    print(f"problem: {problem.name}")
    print(f"kind: {report['kind']}")
    print(f"ill_posed: {report['ill_posed']}")
    witnesses = report.get("witnesses") or []
    if witnesses:
        print("witnesses:")
        for w in witnesses:
            print("  " + json.dumps(w, sort_keys=True))
    print(json.dumps(report, sort_keys=True))
    if args.out:
        out = _out_dir(args)
        write_json(out / "classify.json", report)
    return 0


def _first_failure(trajectories):
    for tr in trajectories:
        if tr.failure is not None:
            return tr.failure
    return None


def cmd_solve(args):
    started = time.perf_counter()
    problem, config, info = _resolve(args)
    out = _out_dir(args)
    paths = [wiener_path(config.seed, i, problem.d, config.n_steps, config.dt) for i in range(config.n_paths)]
    trajectories = run_paths(problem, config, paths)
    outputs = []
    for tr in trajectories:
        name = f"path_{tr.path_index:04d}.csv"
        write_trajectory_csv(out / name, tr)
        outputs.append(name)
    write_json(out / "manifest.json", _manifest("solve", info, config, outputs, started))
    failure = _first_failure(trajectories)
    if failure is not None:
        raise failure
    return 0


def cmd_ensemble(args):
    started = time.perf_counter()
    problem, config, info = _resolve(args)
    out = _out_dir(args)
    diag = run_ensemble(problem, config)
    write_json(out / "diagnostics.json", diag.to_dict())
    write_json(out / "manifest.json", _manifest("ensemble", info, config, ["diagnostics.json"], started))
    print(f"violation_fraction: {diag.violation_fraction:g} over {diag.n_paths} paths")
    if diag.lambda_estimate is not None:
        print(f"lambda_estimate: {diag.lambda_estimate:.6g}")
    return 0


def cmd_example(args):
    started = time.perf_counter()
    if args.problem is None:
        args.problem = args.name
    if args.algorithm is None:
        args.algorithm = "closed-form" if REGISTRY[args.name].closed_form_u is not None else None
    problem, config, info = _resolve(args)
    n = args.paths or 8
    config = config.replace(n_paths=n)
    out = _out_dir(args)
    outputs = []
    paths = [wiener_path(config.seed, i, problem.d, config.n_steps, config.dt) for i in range(n)]
    for tag, cfg in (("constrained", config),
                     ("unconstrained", config.replace(algorithm="unconstrained", scheme="heun_stratonovich"))):
        sub = out / tag
        sub.mkdir(exist_ok=True)
        for tr in run_paths(problem, cfg, paths, make_system(problem, cfg)):
            name = f"{tag}/path_{tr.path_index:04d}.csv"
            write_trajectory_csv(out / name, tr)
            outputs.append(name)
    if args.name == "sphere_example":
        curve = sphere_constraint_curve()
        with open(out / "constraint_curve.csv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write("theta,X,Y,x1,x2,x3,h\n")
            for row in curve:
                fh.write(",".join(_fmt(v) for v in row) + "\n")
        outputs.append("constraint_curve.csv")
    write_json(out / "manifest.json", _manifest("example", info, config, outputs, started))
    return 0


# --- parser ------------------------------------------------------------------------

def _add_run_flags(p, problem_required=False):
    p.add_argument("--problem", required=problem_required, help="registered problem name")
    p.add_argument("--param", action="append", metavar="KEY=VALUE", help="problem parameter (repeatable)")
    p.add_argument("--algorithm", choices=["index1", "alg1", "alg2", "closed-form", "unconstrained"])
    p.add_argument("--scheme", choices=["heun_stratonovich", "euler_ito"])
    p.add_argument("--dt", type=float)
    p.add_argument("--t-final", dest="t_final", type=float)
    p.add_argument("--epsilon", type=float)
    p.add_argument("--alpha", type=float)
    p.add_argument("--b0", type=float)
    p.add_argument("--b-cap", dest="b_cap", type=float)
    p.add_argument("--inner-steps", dest="inner_steps", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--paths", type=int)
    p.add_argument("--retry-rng", dest="retry_rng", choices=["reuse", "fresh"])
    p.add_argument("--lambda-estimate", dest="lambda_estimate", action="store_true")
    p.add_argument("--config", help="JSON config (flat keys) or a run manifest")
    p.add_argument("--out", default="out", help="output directory")


def build_parser():
    parser = argparse.ArgumentParser(prog="sdaeman", description="Simulate explicit SDAEs on embedded manifolds.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("classify", help="classify a problem and test for ill-posedness")
    p.add_argument("--problem", required=True)
    p.add_argument("--param", action="append", metavar="KEY=VALUE")
    p.add_argument("--samples", type=int, default=32)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("solve", help="integrate paths and write one CSV per path")
    _add_run_flags(p)
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("ensemble", help="run an ensemble and write diagnostics JSON")
    _add_run_flags(p)
    p.set_defaults(func=cmd_ensemble)

    p = sub.add_parser("example", help="write constrained, unconstrained and constraint-curve data")
    p.add_argument("name", choices=sorted(REGISTRY))
    _add_run_flags(p)
    p.set_defaults(func=cmd_example)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except SDAEError as err:
        print(f"error: {type(err).__name__}: {err}", file=sys.stderr)
        return err.exit_code


if __name__ == "__main__":
    sys.exit(main())
