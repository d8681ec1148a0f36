"""Command-line entry points: primitive generation, planning, benchmarks.

Exit codes of `plan`: 0 solved, 1 timeout, 2 usage error.
"""
from __future__ import annotations

import argparse
import sys as _sys
from pathlib import Path

import numpy as np

from . import bench, trajio
from .dynamics.systems import make_system, system_names
from .planner import PlannerConfig, idb_rrt, validate_solution
from .primitives import (PrimitiveLibrary, generate_library, load_library,
                         LibraryError, save_library)
from .trajopt import OcpProblem, solve_fddp


def _cmd_generate(args):
    sys_obj = make_system(args.system)
    prims = generate_library(sys_obj, args.count, args.seed,
                             workers=args.workers)
    save_library(args.out, sys_obj, prims)
    print(f"wrote {len(prims)} {args.system} primitives to {args.out}")
    return 0


def _cmd_validate(args):
    sys_obj = make_system(args.system)
    try:
        prims = load_library(args.library, sys_obj)
    except LibraryError as exc:
        print(f"INVALID: {exc}")
        return 1
    print(f"OK: {len(prims)} primitives, all invariants hold")
    return 0


def _cmd_plan(args):
    problem = bench.load_problem(args.problem)
    sys_obj = problem.sys
    lib = PrimitiveLibrary(sys_obj, load_library(args.primitives, sys_obj))
    config = PlannerConfig.for_system(sys_obj, variant=args.variant,
                                      seed=args.seed,
                                      global_timeout=args.timeout,
                                      **problem.planner_overrides)
    report = idb_rrt(problem, config, lib)
    if not report.solved:
        print(f"timeout after {report.time_to_solution:.1f}s "
              f"({len(report.iterations)} outer iterations)")
        return 1
    spec = sys_obj.spec
    pred = sys_obj.step_many(report.states[:-1], report.controls)
    from .dynamics.base import state_diff
    d = state_diff(spec, pred, report.states[1:])
    defects = np.sqrt((d * d) @ spec.distance_weights)
    trajio.write_trajectory(args.out, system=spec.name, dt=spec.dt,
                            states=report.states, controls=report.controls,
                            defects=defects, delta=config.delta0,
                            seed=args.seed,
                            wall_time=report.time_to_solution, solved=True)
    print(f"solved in {report.time_to_solution:.2f}s, "
          f"cost {report.cost:.2f}s, wrote {args.out}")
    return 0


def _cmd_optimize(args):
    problem = bench.load_problem(args.problem)
    doc = trajio.read_trajectory(args.traj)
    if doc["system"] != problem.sys.spec.name:
        raise SystemExit(f"trajectory is for '{doc['system']}', problem uses "
                         f"'{problem.sys.spec.name}'")
    states, controls = doc["states"], doc["controls"]
    prob = OcpProblem(problem.sys, len(controls), problem.x_start,
                      problem.x_goal, env=problem.env)
    res = solve_fddp(prob, states, controls)
    ok, rep = validate_solution(problem, res.states, res.controls)
    spec = problem.sys.spec
    pred = problem.sys.step_many(res.states[:-1], res.controls)
    from .dynamics.base import state_diff
    d = state_diff(spec, pred, res.states[1:])
    defects = np.sqrt((d * d) @ spec.distance_weights)
    trajio.write_trajectory(args.out, system=spec.name, dt=spec.dt,
                            states=res.states, controls=res.controls,
                            defects=defects, delta=doc.get("delta"),
                            seed=doc.get("seed"), solved=bool(res.converged and ok))
    print(f"converged={res.converged} feasible={ok} "
          f"defect={rep.max_defect:.2e} goal={rep.goal_distance:.2e}; "
          f"wrote {args.out}")
    return 0 if (res.converged and ok) else 1


def _cmd_bench(args):
    suite = sorted(Path(args.suite).glob("*.yaml"))
    if not suite:
        raise SystemExit(f"no problem files in {args.suite}")
    libraries = {}
    for ppath in suite:
        name = bench.load_problem(ppath).sys.spec.name
        lib_file = Path(args.primitives) / f"{name}.prims"
        if not lib_file.exists():
            raise SystemExit(f"missing primitive library {lib_file}")
        libraries[name] = lib_file
    results = bench.run_benchmark(
        suite, libraries, variant=args.variant, n_seeds=args.seeds,
        timeout=args.timeout, workers=args.workers, out_dir=args.out,
        save_trajectories=args.save_trajectories)
    print(bench.format_table(results, args.variant), end="")
    return 0


def _cmd_plot(args):
    problem = bench.load_problem(args.problem)
    states = None
    if args.traj:
        states = trajio.read_trajectory(args.traj)["states"]
    bench.plot_solution(problem, states, args.out)
    print(f"wrote {args.out}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="dbrrt",
                                description="kinodynamic planning toolbox")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-primitives",
                       help="generate a motion-primitive library offline")
    g.add_argument("--system", required=True, choices=system_names())
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--workers", type=int, default=1)
    g.set_defaults(func=_cmd_generate)

    v = sub.add_parser("validate-primitives",
                       help="re-check every invariant of a library file")
    v.add_argument("library")
    v.add_argument("--system", required=True, choices=system_names())
    v.set_defaults(func=_cmd_validate)

    pl = sub.add_parser("plan", help="solve one problem instance")
    pl.add_argument("--problem", required=True)
    pl.add_argument("--primitives", required=True)
    pl.add_argument("--variant", choices=("forward", "connect"),
                    default="forward")
    pl.add_argument("--seed", type=int, default=0)
    pl.add_argument("--timeout", type=float, default=60.0)
    pl.add_argument("--out", required=True)
    pl.set_defaults(func=_cmd_plan)

    o = sub.add_parser("optimize",
                       help="run the trajectory optimizer on a stored dump")
    o.add_argument("--traj", required=True)
    o.add_argument("--problem", required=True)
    o.add_argument("--out", required=True)
    o.set_defaults(func=_cmd_optimize)

    b = sub.add_parser("bench", help="run a problem suite over many seeds")
    b.add_argument("--suite", required=True)
    b.add_argument("--primitives", required=True,
                   help="directory with <system>.prims files")
    b.add_argument("--variant", choices=("forward", "connect"),
                   default="forward")
    b.add_argument("--seeds", type=int, default=20)
    b.add_argument("--timeout", type=float, default=60.0)
    b.add_argument("--workers", type=int, default=1)
    b.add_argument("--out", default="results")
    b.add_argument("--save-trajectories", action="store_true")
    b.set_defaults(func=_cmd_bench)

    pt = sub.add_parser("plot", help="render a problem and trajectory")
    pt.add_argument("--problem", required=True)
    pt.add_argument("--traj")
    pt.add_argument("--out", required=True)
    pt.set_defaults(func=_cmd_plot)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    _sys.exit(main())
