"""Kinodynamic motion planning with discontinuity-bounded RRT.

The library grows an RRT whose edges are precomputed motion primitives
allowed to mismatch by a bounded discontinuity, then repairs the
discontinuities with feasibility-driven DDP.  See README for a tour.
"""

from .dynamics import (DynamicalSystem, SystemSpec, distance, make_system,
                       system_names)
from .collision import Environment, Obstacle, is_motion_free, is_state_free, \
    load_environment, signed_distance
from .primitives import (MotionPrimitive, PrimitiveLibrary, canonicalize,
                         choose_primitives, ensure_library, generate_library,
                         generate_primitive, increase_primitives, load_library,
                         reverse_library, save_library)
from .search import (DbSolution, SearchParams, SearchResult, db_rrt,
                     db_rrt_connect, traceback)
from .trajopt import (ConstraintReport, OcpProblem, OptResult, PenaltyWeights,
                      check_feasible, solve_fddp)
from .planner import (IterationLog, PlannerConfig, PlannerReport, Tolerances,
                      idb_rrt, validate_solution)
from .bench import (BenchResult, ProblemInstance, load_packaged_problem,
                    load_problem, packaged_problems, plot_solution,
                    run_benchmark)

__version__ = "0.1.0"
