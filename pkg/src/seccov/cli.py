"""Command-line front end for the batch simulator.

Exit codes: 0 success, 2 configuration error, 3 numeric or topology
failure.
"""

import argparse
import json
from pathlib import Path
import sys

import numpy as np

from .scenario import ConfigError, load_scenario
from . import simulate
from .simulate import StageError


def _common(parser):
    parser.add_argument("--config", required=True, help="scenario JSON file")
    parser.add_argument("--out", default=None, help="output directory "
                        "(defaults to the scenario's output_dir)")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the scenario seed")
    parser.add_argument("--threads", type=int, default=1,
                        help="worker threads for the anchor sweep")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="seccov",
        description="sectorial coverage simulator on conformally mapped "
                    "annular regions")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("map", help="build the mesh and annulus atlas only")
    _common(p)

    p = sub.add_parser("run", help="full pipeline: mesh, map, coverage, sweep")
    _common(p)
    p.add_argument("--snapshot-times", default=None,
                   help="comma-separated snapshot times, e.g. 0,5,10")

    p = sub.add_parser("sweep", help="anchor sweep only, from the initial state")
    _common(p)

    p = sub.add_parser("baseline", help="geodesic Voronoi / Lloyd baseline")
    _common(p)

    p = sub.add_parser("render", help="render a saved state to SVG")
    _common(p)
    p.add_argument("--state", default=None,
                   help="state JSON (defaults to OUT/state_final.json)")
    p.add_argument("--space", choices=("chart", "original"), default="chart")
    return parser


def _load(args):
    scenario = load_scenario(args.config)
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("seed", "seed must be nonnegative")
        scenario.seed = args.seed
    out = Path(args.out if args.out is not None else scenario.output_dir)
    return scenario, out


def _cmd_map(args) -> int:
    scenario, out = _load(args)
    out.mkdir(parents=True, exist_ok=True)
    problem = simulate.build_problem(scenario, with_original=False)
    problem.atlas.export_json(out / "atlas.json")
    problem.mesh.save(out / "region.off", out / "region.json")
    print(f"L* = {problem.atlas.L_star:.6f}, "
          f"{len(problem.mesh.vertices)} vertices, "
          f"flipped faces = {problem.flipped_faces}")
    return 0


def _cmd_run(args) -> int:
    scenario, out = _load(args)
    snaps = None
    if args.snapshot_times is not None:
        try:
            snaps = [float(s) for s in args.snapshot_times.split(",") if s]
        except ValueError as exc:
            raise ConfigError("snapshot-times", str(exc)) from exc
    summary = simulate.run(scenario, out_dir=out, threads=args.threads,
                           snapshot_times=snaps)
    print(json.dumps(summary.to_dict(), sort_keys=True, indent=2))
    return 0


def _cmd_sweep(args) -> int:
    scenario, out = _load(args)
    out.mkdir(parents=True, exist_ok=True)
    problem = simulate.build_problem(scenario)
    plan = simulate._make_plan(scenario)
    from .search import run_sweep, select_best
    from .coverage import lyapunov_value
    records = run_sweep(plan, problem.state, scenario.search["t_eps"],
                        problem.gains, problem.ctx, threads=args.threads)
    k_star, best = select_best(records, plan.K_star)
    simulate._write_csv(out / "sweep.csv",
                        ["k", "J", "J_orig", "V_final", "chosen"],
                        [[r.anchor_index, r.total_cost, r.total_cost_orig,
                          lyapunov_value(r.masses),
                          int(r.anchor_index == k_star)] for r in records])
    print(f"k* = {k_star}, J' = {best.total_cost_orig:.6g}")
    return 0


def _cmd_baseline(args) -> int:
    scenario, out = _load(args)
    result = simulate.voronoi_baseline(scenario, out_dir=out)
    print(json.dumps({k: result[k] for k in ("mass_variance", "total_cost")},
                     sort_keys=True, indent=2))
    return 0


def _cmd_render(args) -> int:
    scenario, out = _load(args)
    out.mkdir(parents=True, exist_ok=True)
    problem = simulate.build_problem(scenario, with_original=False)
    state = problem.state
    state_path = args.state or (out / "state_final.json")
    if Path(state_path).exists():
        from dataclasses import replace
        from .coverage import sector_masses
        with open(state_path) as fh:
            doc = json.load(fh)
        psi = np.asarray(doc["psi"], dtype=float)
        state = replace(state, psi=psi,
                        agents_xi=np.asarray(doc["agents_xi"], dtype=float),
                        agents_orig=np.asarray(doc["agents_orig"], dtype=float),
                        masses=sector_masses(problem.profile, psi))
    path = out / f"render_{args.space}.svg"
    from .svg import emit_svg
    emit_svg(state, problem.atlas, path, density=problem.density,
             space=args.space)
    print(str(path))
    return 0


_COMMANDS = {"map": _cmd_map, "run": _cmd_run, "sweep": _cmd_sweep,
             "baseline": _cmd_baseline, "render": _cmd_render}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except (StageError, ValueError, RuntimeError, ArithmeticError) as exc:
        print(f"pipeline failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
