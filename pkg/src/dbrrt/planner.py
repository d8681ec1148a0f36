"""Outer planning loop: alternate discontinuity-bounded search and repair.

Each iteration runs Db-RRT (forward or bidirectional) with the current
discontinuity bound and primitive subset.  A found search solution is handed
to the penalty optimizer; if the optimizer converges and the independent
validator passes, the planner returns.  On optimizer failure the bound
shrinks geometrically; on search timeout the bound shrinks and the primitive
subset grows geometrically.  One or two iterations usually suffice.
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .dynamics.base import distance, state_diff
from .primitives import (PrimitiveLibrary, choose_primitives,
                         increase_primitives, reverse_library)
from .search import SearchParams, db_rrt, db_rrt_connect
from .trajopt import (ConstraintReport, OcpProblem, PenaltyWeights,
                      check_feasible, solve_fddp)

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Tolerances:
    """Feasibility thresholds a `solved` trajectory must satisfy."""

    dyn_tol: float = 1e-5      # weighted per-step dynamics defect
    goal_tol: float = 1e-3     # weighted start/goal distance
    bound_tol: float = 1e-6    # state/control bound violation


@dataclass
class PlannerConfig:
    """iDb-RRT parameters; per-system defaults come from the system config."""

    delta0: float
    m0: int
    delta_rate: float = 0.9
    m_rate: float = 1.5
    inner_time_budget: float = 5.0
    budget_growth: float = 1.5
    global_timeout: float = 60.0
    variant: str = "forward"            # "forward" | "connect"
    goal_bias: float = 0.1
    seed: int = 0
    inflation: float = 0.0
    weights: PenaltyWeights = field(default_factory=PenaltyWeights)
    tolerances: Tolerances = field(default_factory=Tolerances)
    max_opt_iters: int = 150

    def __post_init__(self):
        if not (0.0 < self.delta_rate < 1.0):
            raise ValueError("delta_rate must be in (0, 1)")
        if self.m_rate <= 1.0:
            raise ValueError("m_rate must be > 1")
        if self.delta0 <= 0:
            raise ValueError("delta0 must be positive")

    @classmethod
    def for_system(cls, sys, **overrides) -> "PlannerConfig":
        base = sys.config.get("planner", {})
        kwargs = dict(
            delta0=base.get("delta0", 0.3),
            m0=base.get("primitives0", 200),
            delta_rate=base.get("delta_rate", 0.9),
            m_rate=base.get("primitives_rate", 1.5),
            goal_bias=base.get("goal_bias", 0.1),
            inner_time_budget=base.get("inner_time_budget", 5.0),
        )
        kwargs.update(overrides)
        return cls(**kwargs)


@dataclass
class IterationLog:
    delta: float
    n_primitives: int
    search_time: float
    search_iters: int
    search_expansions: int
    search_solved: bool
    opt_converged: bool | None = None
    opt_iters: int = 0
    opt_time: float = 0.0


@dataclass
class PlannerReport:
    """Outcome of one planner run."""

    outcome: str                      # "solved" | "timeout"
    states: np.ndarray | None
    controls: np.ndarray | None
    time_to_solution: float           # wall seconds, start -> validator pass
    cost: float                       # trajectory duration, K * dt
    iterations: list[IterationLog]
    report: ConstraintReport | None = None

    @property
    def solved(self) -> bool:
        return self.outcome == "solved"

    @property
    def expansions(self) -> int:
        return sum(it.search_expansions for it in self.iterations)


def validate_solution(problem, states, controls,
                      tolerances: Tolerances = Tolerances()):
    """Independently re-check a trajectory against the full problem contract.

    Returns (ok, ConstraintReport).  Used by the planner before reporting
    `solved`, by the CLI, and by the acceptance tests.
    """
    rep = check_feasible(problem.sys, problem.env, states, controls,
                         x_start=problem.x_start, x_goal=problem.x_goal,
                         spec=problem.planning_spec)
    return rep.feasible(tolerances.dyn_tol, tolerances.goal_tol,
                        tolerances.bound_tol), rep


def _interp_states(spec, a, b, n):
    frac = np.linspace(0.0, 1.0, n + 1)[:, None]
    return a + frac * state_diff(spec, b, a)


def idb_rrt(problem, config: PlannerConfig,
            library: PrimitiveLibrary) -> PlannerReport:
    """Run the full planner on a problem instance.

    `library` is the precomputed primitive pool; the planner starts from a
    random subset of `config.m0` of them and grows it on search failures.
    """
    sys = problem.sys
    spec = problem.planning_spec
    rng = np.random.default_rng(config.seed)
    t0 = time.monotonic()
    deadline = t0 + config.global_timeout
    delta = config.delta0
    subset = choose_primitives(library, config.m0, rng)
    subset_rev = reverse_library(subset) if config.variant == "connect" else None
    iterations: list[IterationLog] = []
    params = SearchParams(goal_bias=config.goal_bias,
                          inflation=config.inflation)
    while True:
        remaining = deadline - time.monotonic()
        if remaining <= 0.05:
            break
        params.time_budget = min(
            config.inner_time_budget * config.budget_growth ** len(iterations),
            remaining)
        params.goal_tolerance = delta
        if config.variant == "connect":
            found = db_rrt_connect(problem.x_start, problem.x_goal,
                                   problem.env, subset, subset_rev, delta,
                                   params, rng, spec=spec)
        else:
            found = db_rrt(problem.x_start, problem.x_goal, problem.env,
                           subset, delta, params, rng, spec=spec)
        entry = IterationLog(delta=delta, n_primitives=len(subset),
                             search_time=found.wall_time,
                             search_iters=found.iterations,
                             search_expansions=found.expansions,
                             search_solved=found.solved)
        iterations.append(entry)
        if not found.solved:
            delta *= config.delta_rate
            subset = increase_primitives(subset, library, config.m_rate)
            if subset_rev is not None:
                subset_rev = reverse_library(subset)
            continue
        sol = found.solution
        if len(sol.controls):
            K = len(sol.controls)
            xs0, us0 = sol.states, sol.controls
        else:
            # start already within delta of the goal: give the optimizer a
            # short horizon to close the remaining gap exactly
            K = max(2, int(sys.config["primitives"]["length_range"][0]))
            xs0 = _interp_states(spec, sol.states[0], problem.x_goal, K)
            us0 = np.tile(sys.u_ref, (K, 1))
        prob = OcpProblem(sys, K, problem.x_start, problem.x_goal,
                          env=problem.env, weights=config.weights)
        t_opt = time.monotonic()
        res = solve_fddp(prob, xs0, us0, max_iters=config.max_opt_iters,
                         dyn_tol=config.tolerances.dyn_tol,
                         deadline=deadline)
        entry.opt_time = time.monotonic() - t_opt
        entry.opt_iters = res.iterations
        ok, rep = validate_solution(problem, res.states, res.controls,
                                    config.tolerances)
        entry.opt_converged = bool(res.converged and ok)
        if entry.opt_converged:
            return PlannerReport("solved", res.states, res.controls,
                                 time.monotonic() - t0,
                                 len(res.controls) * spec.dt,
                                 iterations, rep)
        log.debug("optimization failed (%s, defect %.2e, goal %.2e); "
                  "shrinking delta", res.stop_reason, rep.max_defect,
                  rep.goal_distance)
        delta *= config.delta_rate
    return PlannerReport("timeout", None, None, time.monotonic() - t0,
                         float("inf"), iterations, None)
