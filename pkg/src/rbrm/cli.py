"""Command-line entry point: ``rbrm plan|simulate|sweep|validate``.

Exit codes: 0 success, 2 invalid input, 3 no path, 4 numerical failure,
5 a validation check failed.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import math
import sys
from pathlib import Path

import numpy as np

from . import numerics
from .errors import ComplexityGuardError, InvalidInputError, NoPathError, NumericalFailureError, RBRMError
from .roadmap import SEARCH_METHODS, brm_baseline_search, node_values_along, rbrm_search
from .scenario import Scenario, build_models, build_roadmap, bundled_path, load_scenario
from .simulate import laser_step_count, path_problem, run_monte_carlo, sweep_reliability

EXIT_OK = 0
EXIT_INVALID = 2
EXIT_NO_PATH = 3
EXIT_NUMERICAL = 4
EXIT_VALIDATION = 5

PLANNERS = ("rbrm", "brm-trace", "brm-eig")
VARIANTS = ("stochastic", "simplified", "uniform")
DEFAULT_GRID = [i / 10 for i in range(11)]


def fmt(x) -> str:
    """Lossless float text (17 significant digits)."""
    if x is None:
        return ""
    if isinstance(x, (int, np.integer)) and not isinstance(x, bool):
        return str(int(x))
    return format(float(x), ".17g")


def _resolve_scenario(arg: str) -> Path:
    p = Path(arg)
    if not p.exists() and not p.is_absolute() and p.parent == Path("."):
        cand = bundled_path(arg if arg.endswith(".json") else arg + ".json")
        if cand.exists():
            return cand
    return p


def _load(args):
    sc = load_scenario(_resolve_scenario(args.scenario))
    models = build_models(sc)
    r = build_roadmap(sc, models, args.resolution, args.workers)
    return sc, models, r


def _write(path, text: str):
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        Path(path).write_text(text)


def _plan(sc: Scenario, models, r, planner: str, variant: str, method: str = "label-correcting"):
    ell0 = numerics.eig_extremes(models.P0).lambda_max
    if planner == "rbrm":
        res = rbrm_search(r, ell0, variant, method)
    else:
        res = brm_baseline_search(r, models.P0, "trace" if planner == "brm-trace" else "max-eig")
    return res, ell0


def _poses(r, path):
    pos = r.positions[path]
    out = []
    for k, (x, y) in enumerate(pos):
        if k + 1 < len(pos):
            dx, dy = pos[k + 1] - pos[k]
        elif k > 0:
            dx, dy = pos[k] - pos[k - 1]
        else:
            dx, dy = 1.0, 0.0
        out.append([float(x), float(y), math.atan2(dy, dx)])
    return out


def cmd_plan(args) -> int:
    sc, models, r = _load(args)
    variant = args.variant or sc.planner.variant
    res, ell0 = _plan(sc, models, r, args.planner, variant, args.search)
    path = res.path
    doc = {
        "planner": args.planner,
        "variant": variant if args.planner == "rbrm" else None,
        "search": args.search if args.planner == "rbrm" else None,
        "prm_seed": sc.prm.seed,
        "resolution": args.resolution if args.resolution is not None else sc.prm.resolution,
        "node_ids": [int(i) for i in path],
        "poses": _poses(r, path),
        "goal_value": res.goal_value,
        "goal_bound": node_values_along(r, path, ell0, variant)[-1],
        "node_bounds": node_values_along(r, path, ell0, variant),
        "laser_measurement_steps": laser_step_count(r, path, models.sensors),
        "steps": sum(len(t) for t in r.path_transfers(path)),
    }
    _write(args.out, json.dumps(doc, indent=2) + "\n")
    print(
        f"{args.planner}: {len(path)} nodes, {doc['steps']} steps, goal value {fmt(res.goal_value)}, "
        f"laser steps {doc['laser_measurement_steps']}",
        file=sys.stderr,
    )
    return EXIT_OK


def _read_path(args, r) -> list:
    try:
        doc = json.loads(Path(args.path).read_text())
        ids = [int(i) for i in doc["node_ids"]]
    except (OSError, ValueError, KeyError, TypeError) as exc:
        raise InvalidInputError(f"cannot read path file {args.path}: {exc}") from None
    if not ids or ids[0] != r.start_id:
        raise InvalidInputError("path must start at the start node")
    for i, l in zip(ids, ids[1:]):
        if not (0 <= i < len(r.nodes)) or (i, l) not in r.transfers:
            raise InvalidInputError(f"path edge ({i}, {l}) is not in the scenario roadmap")
    if "poses" in doc:
        pos = np.array([p[:2] for p in doc["poses"]], dtype=float)
        if pos.shape != (len(ids), 2) or not np.allclose(pos, r.positions[ids], rtol=0, atol=1e-9):
            raise InvalidInputError("path poses do not match the scenario roadmap (different seed?)")
    return ids


def cmd_simulate(args) -> int:
    sc, models, r = _load(args)
    ids = _read_path(args, r)
    variant = args.variant or sc.planner.variant
    problem = path_problem(r, ids, models.sensors, models.model, models.P0)
    trace = run_monte_carlo(problem, args.trials, args.seed, variant, args.workers)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "bound", "mc_mean_max_eig", "mc_stderr_max_eig", "mc_mean_trace", "mc_stderr_trace", "trials", "failures"])
    for row in trace.rows():
        w.writerow([fmt(v) for v in row])
    _write(args.out, buf.getvalue())
    if trace.failures:
        print(f"{len(trace.failures)} trial(s) failed: {trace.failures[:5]}", file=sys.stderr)
    return EXIT_OK


def _prob_list(text: str) -> list:
    try:
        vals = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise InvalidInputError(f"bad probability list {text!r}") from None
    if not vals or any(not 0.0 <= v <= 1.0 for v in vals):
        raise InvalidInputError(f"probabilities must lie in [0, 1]: {text!r}")
    return vals


def cmd_sweep(args) -> int:
    laser_ps = _prob_list(args.laser_ps) if args.laser_ps else DEFAULT_GRID
    beacon_ps = _prob_list(args.beacon_ps) if args.beacon_ps else DEFAULT_GRID
    sc, models, r = _load(args)
    variant = args.variant or sc.planner.variant
    ell0 = numerics.eig_extremes(models.P0).lambda_max
    grid = sweep_reliability(r, models.sensors, ell0, laser_ps, beacon_ps, variant, args.workers)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["p_laser", "p_beacon", "goal_bound", "laser_measurement_count", "path_id", "status"])
    for cell, pid in zip(grid.cells, grid.path_ids()):
        w.writerow([fmt(cell.p_laser), fmt(cell.p_beacon), fmt(cell.goal_bound),
                    "" if cell.laser_count is None else cell.laser_count, "" if pid is None else pid, cell.status])
    _write(args.out, buf.getvalue())
    if all(c.goal_bound is None for c in grid.cells):
        return EXIT_NO_PATH
    return EXIT_OK


def cmd_validate(args) -> int:
    from .validate import validate_scenario

    sc, models, r = _load(args)
    results = validate_scenario(sc, models, r, seed=args.seed, trials=args.trials)
    ok = True
    for name, passed, detail in results:
        ok &= passed
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
    return EXIT_OK if ok else EXIT_VALIDATION


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rbrm", description="Robust belief roadmap planner")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--scenario", required=True, help="scenario JSON (or bundled name, e.g. fig2)")
        sp.add_argument("--resolution", type=float, default=None, help="edge discretization (default: scenario)")
        sp.add_argument("--workers", type=int, default=1, help="threads for compilation and trials")
        sp.add_argument("--variant", choices=VARIANTS, default=None, help="bound variant (default: scenario)")
        sp.add_argument("--out", default=None, help="output file (default: stdout)")

    sp = sub.add_parser("plan", help="plan a path")
    common(sp)
    sp.add_argument("--planner", choices=PLANNERS, default="rbrm")
    sp.add_argument("--search", choices=SEARCH_METHODS, default="label-correcting",
                    help="rbrm search: label-correcting (default) or exact over simple paths (small roadmaps)")
    sp.set_defaults(func=cmd_plan)

    sp = sub.add_parser("simulate", help="Monte Carlo metrics along a planned path")
    common(sp)
    sp.add_argument("--path", required=True, help="path JSON written by 'plan'")
    sp.add_argument("--trials", type=int, default=100)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("sweep", help="reliability sweep over constant detection probabilities")
    common(sp)
    sp.add_argument("--laser-ps", default=None, help="comma-separated laser probabilities")
    sp.add_argument("--beacon-ps", default=None, help="comma-separated beacon probabilities")
    sp.set_defaults(func=cmd_sweep)

    sp = sub.add_parser("validate", help="run the invariant checks on a scenario")
    common(sp)
    sp.add_argument("--trials", type=int, default=50)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.resolution is not None and not args.resolution > 0:
        print("error: --resolution must be positive", file=sys.stderr)
        return EXIT_INVALID
    if args.workers < 1 or getattr(args, "trials", 1) < 1:
        print("error: --workers and --trials must be >= 1", file=sys.stderr)
        return EXIT_INVALID
    try:
        return args.func(args)
    except NoPathError as exc:
        print(f"no path: {exc}", file=sys.stderr)
        return EXIT_NO_PATH
    except NumericalFailureError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (InvalidInputError, ComplexityGuardError, RBRMError) as exc:
        print(f"invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
