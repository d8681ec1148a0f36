"""Problem ingestion, seeded benchmark execution, and solution plots.

A problem file is a YAML mapping naming the system, the environment, the
boundary states, and optional per-problem planner overrides.  The runner
executes every (problem, seed) pair in isolated worker processes, enforces
the per-run wall-clock timeout, and aggregates median time-to-solution,
median trajectory duration, and success rate.
"""
from __future__ import annotations

import json
import statistics
import traceback as tb
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import yaml

from .collision import (Environment, environment_from_dict, is_state_free,
                        states_signed_distance)
from .dynamics.base import SystemSpec, is_within_bounds, normalize_state
from .dynamics.systems import make_system
from .planner import PlannerConfig, PlannerReport, idb_rrt
from .primitives import PrimitiveLibrary, load_library
from . import trajio


class ProblemError(ValueError):
    """Schema or validation failure while loading a problem file."""


@dataclass
class ProblemInstance:
    """A fully validated planning task."""

    name: str
    sys: object
    env: Environment
    x_start: np.ndarray
    x_goal: np.ndarray
    planning_spec: SystemSpec       # system spec with sampling box applied
    planner_overrides: dict = field(default_factory=dict)
    source: dict = field(default_factory=dict)


def _blocking_obstacle(env: Environment, sys, x) -> str | None:
    bodies = sys.collision_bodies(np.asarray(x, float)[None, :])[0]
    for i, obs in enumerate(env.obstacles):
        if np.any(obs.clearance(bodies) - sys.body_radii <= 0.0):
            return f"obstacle #{i} ({obs.kind} at {obs.center.tolist()})"
    return None


def problem_from_dict(data: dict, name: str = "<memory>") -> ProblemInstance:
    """Validate and build a `ProblemInstance` from parsed YAML."""
    try:
        sys = make_system(data["system"])
        env = environment_from_dict(data["environment"])
        x_start = np.array(data["start"], float)
        x_goal = np.array(data["goal"], float)
    except (KeyError, TypeError, ValueError) as exc:
        raise ProblemError(f"{name}: {exc}") from exc
    spec = sys.spec
    if x_start.shape != (spec.d_x,) or x_goal.shape != (spec.d_x,):
        raise ProblemError(
            f"{name}: start/goal must have {spec.d_x} components")
    x_start = normalize_state(spec, x_start)
    x_goal = normalize_state(spec, x_goal)
    # positions sample inside the configured box (default: the workspace)
    pb = data.get("position_bounds")
    if pb is not None:
        pos_lo = np.array(pb["min"], float)
        pos_hi = np.array(pb["max"], float)
    else:
        pos_lo, pos_hi = env.workspace_min, env.workspace_max
    lo = np.array(spec.state_lower)
    hi = np.array(spec.state_upper)
    tmask = spec.translation_mask
    if tmask.sum() not in (0, len(pos_lo)):
        raise ProblemError(f"{name}: position_bounds dimension mismatch")
    if tmask.any():
        lo[tmask] = pos_lo[:int(tmask.sum())]
        hi[tmask] = pos_hi[:int(tmask.sum())]
    planning_spec = spec.replace_bounds(lo, hi)
    for label, x in (("start", x_start), ("goal", x_goal)):
        if not is_within_bounds(planning_spec, x):
            raise ProblemError(f"{name}: {label} state outside bounds")
    if not is_state_free(env, sys, x_start):
        blocker = _blocking_obstacle(env, sys, x_start) or "the workspace boundary"
        raise ProblemError(f"{name}: start state collides with {blocker}")
    return ProblemInstance(
        name=data.get("name", name),
        sys=sys, env=env, x_start=x_start, x_goal=x_goal,
        planning_spec=planning_spec,
        planner_overrides=dict(data.get("planner", {}) or {}),
        source=data,
    )


def load_problem(path) -> ProblemInstance:
    """Load and validate a problem YAML file."""
    path = Path(path)
    try:
        with open(path) as fh:
            data = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ProblemError(f"{path}: YAML parse error: {exc}") from exc
    if not isinstance(data, dict):
        raise ProblemError(f"{path}: expected a mapping at the top level")
    return problem_from_dict(data, name=str(path))


def save_problem(path, problem: ProblemInstance) -> None:
    """Write a problem back out; load(save(load(p))) is identical."""
    with open(path, "w") as fh:
        yaml.safe_dump(problem.source, fh, sort_keys=True)


def packaged_problems() -> list[str]:
    """Names of the desk-suite problems shipped with the package."""
    root = resources.files("dbrrt") / "problems"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".yaml"))


def problem_path(name: str):
    """Filesystem path of a packaged desk-suite problem."""
    return resources.files("dbrrt") / "problems" / f"{name}.yaml"


def load_packaged_problem(name: str) -> ProblemInstance:
    return load_problem(problem_path(name))


# -- benchmark runner -----------------------------------------------------------

@dataclass
class RunRecord:
    problem: str
    seed: int
    outcome: str            # solved | timeout | error
    t: float                # wall seconds to first solution (inf if none)
    c: float                # trajectory duration in seconds (inf if none)
    outer_iterations: int = 0
    expansions: int = 0
    error: str = ""


@dataclass
class BenchResult:
    """Aggregates for one problem; recomputable from the records."""

    problem: str
    records: list[RunRecord]

    @property
    def n_solved(self) -> int:
        return sum(r.outcome == "solved" for r in self.records)

    @property
    def success_rate(self) -> float:
        return self.n_solved / max(1, len(self.records))

    @property
    def low_success(self) -> bool:
        return 0 < self.n_solved < 0.5 * len(self.records)

    @property
    def median_t(self) -> float:
        ts = [r.t for r in self.records if r.outcome == "solved"]
        return statistics.median(ts) if ts else float("inf")

    @property
    def median_c(self) -> float:
        cs = [r.c for r in self.records if r.outcome == "solved"]
        return statistics.median(cs) if cs else float("inf")

    def cell(self, value: float) -> str:
        """Table cell: dash when nothing solved, asterisk when below 50%."""
        if self.n_solved == 0:
            return "-"
        mark = "*" if self.low_success else ""
        return f"{value:.2f}{mark}"


_worker_libs: dict[str, PrimitiveLibrary] = {}


def _get_library(sys, path) -> PrimitiveLibrary:
    key = str(path)
    if key not in _worker_libs:
        _worker_libs[key] = PrimitiveLibrary(sys, load_library(path, sys))
    return _worker_libs[key]


def run_single(problem_path_, library_path, variant: str, seed: int,
               timeout: float, overrides: dict | None = None,
               traj_out=None) -> RunRecord:
    """Execute one planner run; crashes are recorded, not raised."""
    problem = load_problem(problem_path_)
    try:
        lib = _get_library(problem.sys, library_path)
        merged = dict(problem.planner_overrides)
        merged.update(overrides or {})
        config = PlannerConfig.for_system(
            problem.sys, variant=variant, seed=seed, global_timeout=timeout,
            **merged)
        report = idb_rrt(problem, config, lib)
        if traj_out is not None and report.solved:
            _dump_report(traj_out, problem, config, report)
        return RunRecord(
            problem=problem.name, seed=seed, outcome=report.outcome,
            t=report.time_to_solution if report.solved else float("inf"),
            c=report.cost, outer_iterations=len(report.iterations),
            expansions=report.expansions)
    except Exception:
        return RunRecord(problem=problem.name, seed=seed, outcome="error",
                         t=float("inf"), c=float("inf"),
                         error=tb.format_exc(limit=3))


def _dump_report(path, problem, config, report: PlannerReport) -> None:
    spec = problem.sys.spec
    pred = problem.sys.step_many(report.states[:-1], report.controls)
    from .dynamics.base import state_diff
    d = state_diff(spec, pred, report.states[1:])
    defects = np.sqrt((d * d) @ spec.distance_weights)
    trajio.write_trajectory(
        path, system=spec.name, dt=spec.dt, states=report.states,
        controls=report.controls, defects=defects, delta=config.delta0,
        seed=config.seed, wall_time=report.time_to_solution, solved=True)


def _bench_worker(args):
    return run_single(*args)


def run_benchmark(problem_paths, libraries: dict[str, Path], *,
                  variant: str = "forward", n_seeds: int = 20,
                  timeout: float = 60.0, seeds=None, workers: int = 1,
                  overrides: dict | None = None, out_dir=None,
                  save_trajectories: bool = False) -> list[BenchResult]:
    """Run the planner over every (problem, seed) pair and aggregate.

    `libraries` maps system name -> primitive library file.  Results are
    deterministic for a fixed seed list apart from wall-clock fields.
    """
    seeds = list(seeds) if seeds is not None else list(range(n_seeds))
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        (out_dir / "trajs").mkdir(parents=True, exist_ok=True)
    jobs = []
    for ppath in problem_paths:
        prob = load_problem(ppath)
        lib_path = libraries[prob.sys.spec.name]
        for seed in seeds:
            traj_out = (out_dir / "trajs" / f"{prob.name}_s{seed}.yaml"
                        if save_trajectories and out_dir is not None else None)
            jobs.append((str(ppath), str(lib_path), variant, seed, timeout,
                         overrides, traj_out))
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            records = list(pool.map(_bench_worker, jobs))
    else:
        records = [_bench_worker(j) for j in jobs]
    by_problem: dict[str, list[RunRecord]] = {}
    for rec in records:
        by_problem.setdefault(rec.problem, []).append(rec)
    results = [BenchResult(name, recs) for name, recs in by_problem.items()]
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        with open(out_dir / "records.jsonl", "w") as fh:
            for rec in records:
                fh.write(json.dumps(rec.__dict__, default=float) + "\n")
        with open(out_dir / "summary.txt", "w") as fh:
            fh.write(format_table(results, variant))
    return results


def format_table(results: list[BenchResult], variant: str = "") -> str:
    lines = [f"{'problem':<28} {'success':>8} {'t[s]':>8} {'c[s]':>8}   ({variant})"]
    for res in sorted(results, key=lambda r: r.problem):
        lines.append(
            f"{res.problem:<28} {res.n_solved:>3}/{len(res.records):<4} "
            f"{res.cell(res.median_t):>8} {res.cell(res.median_c):>8}")
    return "\n".join(lines) + "\n"


# -- plotting ----------------------------------------------------------------------

def plot_solution(problem: ProblemInstance, states, out_path,
                  n_snapshots: int = 24) -> None:
    """Top-down rendering: workspace, obstacles, footprint snapshots.

    3-D workspaces are projected onto the first two axes (with a notice in
    the axes title).  `states` may be None/empty to draw the scene only.
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt
    from matplotlib.patches import Circle, Rectangle

    env = problem.env
    fig, ax = plt.subplots(figsize=(6, 6))
    lo, hi = env.workspace_min[:2], env.workspace_max[:2]
    ax.add_patch(Rectangle(lo, *(hi - lo), fill=False, lw=1.5, color="k"))
    title = problem.name
    if env.workspace_dim > 2:
        title += " (x-y projection of a 3-D workspace)"
    for obs in env.obstacles:
        c = obs.center[:2]
        if obs.kind == "sphere":
            ax.add_patch(Circle(c, obs.radius, color="0.45"))
        else:
            he = obs.half_extents[:2]
            ax.add_patch(Rectangle(c - he, *(2 * he), color="0.45"))
    sys = problem.sys
    for x, color, label in ((problem.x_start, "tab:green", "start"),
                            (problem.x_goal, "tab:red", "goal")):
        bodies = sys.collision_bodies(np.asarray(x, float)[None, :])[0]
        for b, r in zip(bodies, sys.body_radii):
            ax.add_patch(Circle(b[:2], r, fill=False, color=color, lw=1.5))
        ax.plot(*bodies[0][:2], "o", color=color, label=label, ms=4)
    states = None if states is None else np.atleast_2d(np.asarray(states, float))
    if states is not None and len(states):
        bodies = sys.collision_bodies(states)       # (n, B, 2)
        for b in range(bodies.shape[1]):
            ax.plot(bodies[:, b, 0], bodies[:, b, 1], "-", lw=1.0,
                    color="tab:blue", alpha=0.8)
        step_idx = np.linspace(0, len(states) - 1, n_snapshots).astype(int)
        for i in step_idx:
            for b, r in zip(bodies[i], sys.body_radii):
                ax.add_patch(Circle(b[:2], r, fill=False, color="tab:blue",
                                    lw=0.5, alpha=0.5))
    margin = 0.05 * (hi - lo)
    ax.set_xlim(lo[0] - margin[0], hi[0] + margin[0])
    ax.set_ylim(lo[1] - margin[1], hi[1] + margin[1])
    ax.set_aspect("equal")
    ax.set_title(title)
    ax.legend(loc="upper left", fontsize=8)
    fig.savefig(out_path, dpi=110, metadata={"Software": None})
    plt.close(fig)
