"""Fixed-horizon penalty optimal control solved by feasibility-driven DDP.

The solver accepts dynamically infeasible warm starts (state/control
sequences whose per-step dynamics gaps are nonzero, e.g. the output of the
discontinuity-bounded search) and contracts those gaps during its forward
rollout while minimizing the penalty objective:

    sum_k  w_reg ||u_k - u_ref||^2 + w_acc ||accel(x_k, u_k)||^2
         + w_col max(0, margin - sd(x_k))^2 + bounds penalties
    +      w_goal d(x_K, x_goal)^2 + terminal collision/bounds penalties

subject to x_{k+1} = step(x_k, u_k) and x_0 = x_start (both enforced through
the gap-contracting rollout).  Goal, collision, and bound constraints enter
the cost through squared penalties with max() activations.
"""
from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from .collision import Environment, states_signed_distance, signed_distance_batch
from .dynamics.base import (DynamicalSystem, SystemSpec, distance,
                            normalize_state, state_diff)


@dataclass(frozen=True)
class PenaltyWeights:
    """Penalty/regularizer weights of the optimal control problem."""

    goal: float = 200.0
    collision: float = 100.0
    bounds: float = 100.0
    control_reg: float = 1e-2
    accel_reg: float = 1e-3
    collision_margin: float = 0.03   # [m] clearance kept around obstacles
    bound_margin_frac: float = 0.02  # bounds shrunk by this fraction of range


@dataclass
class OcpProblem:
    """Fixed-horizon goal-reaching problem with penalized constraints."""

    sys: DynamicalSystem
    K: int
    x_start: np.ndarray
    x_goal: np.ndarray
    env: Environment | None = None
    weights: PenaltyWeights = field(default_factory=PenaltyWeights)

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("horizon K must be >= 1")
        self.x_start = normalize_state(self.sys.spec, np.asarray(self.x_start, float))
        self.x_goal = normalize_state(self.sys.spec, np.asarray(self.x_goal, float))


@dataclass
class ConstraintReport:
    """Feasibility summary of a trajectory, independent of any solver state."""

    max_defect: float
    start_distance: float
    goal_distance: float
    min_signed_distance: float
    max_control_violation: float
    max_state_violation: float

    def feasible(self, dyn_tol: float = 1e-5, goal_tol: float = 1e-3,
                 bound_tol: float = 1e-6) -> bool:
        return (self.max_defect <= dyn_tol
                and self.start_distance <= goal_tol
                and self.goal_distance <= goal_tol
                and self.min_signed_distance > 0.0
                and self.max_control_violation <= bound_tol
                and self.max_state_violation <= bound_tol)


@dataclass
class OptResult:
    """Output of `solve_fddp`."""

    states: np.ndarray
    controls: np.ndarray
    converged: bool
    iterations: int
    cost: float
    max_defect: float
    gradient_norm: float
    stop_reason: str
    history: list
    report: ConstraintReport | None = None


def _paired_distance(spec: SystemSpec, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    d = state_diff(spec, a, b)
    return np.sqrt((d * d) @ spec.distance_weights)


# -- cost models -------------------------------------------------------------

class QuadraticCost:
    """Plain quadratic tracking cost; used for LQR-style problems and tests.

    running:  (x - x_ref)' Q (x - x_ref) + u' R u
    terminal: (x - x_ref)' Qf (x - x_ref)
    """

    def __init__(self, Q, R, Qf, x_ref=None):
        self.Q = np.asarray(Q, float)
        self.R = np.asarray(R, float)
        self.Qf = np.asarray(Qf, float)
        self.x_ref = (np.zeros(len(self.Q)) if x_ref is None
                      else np.asarray(x_ref, float))

    def stage_values(self, xs, us, f_vals=None):
        dx = xs - self.x_ref
        return np.einsum("ki,ij,kj->k", dx, self.Q, dx) + \
            np.einsum("ki,ij,kj->k", us, self.R, us)

    def terminal_value(self, x):
        dx = x - self.x_ref
        return float(dx @ self.Qf @ dx)

    def stage_derivs(self, xs, us, f_jac=None, f_vals=None):
        K, d_x = xs.shape
        d_u = us.shape[1]
        dx = xs - self.x_ref
        l = self.stage_values(xs, us)
        lx = 2.0 * dx @ self.Q.T
        lu = 2.0 * us @ self.R.T
        lxx = np.broadcast_to(2.0 * self.Q, (K, d_x, d_x)).copy()
        luu = np.broadcast_to(2.0 * self.R, (K, d_u, d_u)).copy()
        lux = np.zeros((K, d_u, d_x))
        return l, lx, lu, lxx, lux, luu

    def terminal_derivs(self, x):
        dx = x - self.x_ref
        return float(dx @ self.Qf @ dx), 2.0 * self.Qf @ dx, 2.0 * self.Qf


class PenaltyCost:
    """Penalty objective of an `OcpProblem`, with Gauss-Newton Hessians."""

    def __init__(self, prob: OcpProblem):
        self.prob = prob
        self.sys = prob.sys
        spec = prob.sys.spec
        self.spec = spec
        w = prob.weights
        self.w = w
        self.accel_rows = np.asarray(prob.sys.accel_rows, dtype=int)
        # state bound penalties act on components that are neither positions
        # (workspace containment is a collision matter) nor angles (wrapped),
        # and only on finite bound sides, shrunk by the safety margin.
        pen = ~spec.translation_mask & ~spec.angle_mask
        rng = spec.state_upper - spec.state_lower
        margin = np.where(np.isfinite(rng), w.bound_margin_frac * rng, 0.0)
        self.s_lo = np.where(pen & np.isfinite(spec.state_lower),
                             spec.state_lower + margin, -np.inf)
        self.s_hi = np.where(pen & np.isfinite(spec.state_upper),
                             spec.state_upper - margin, np.inf)
        crng = spec.control_upper - spec.control_lower
        cmargin = np.where(np.isfinite(crng), w.bound_margin_frac * crng, 0.0)
        self.c_lo = spec.control_lower + cmargin
        self.c_hi = spec.control_upper - cmargin

    # -- values --------------------------------------------------------------

    def _state_penalties(self, xs):
        over = np.maximum(xs - self.s_hi, 0.0)
        under = np.maximum(self.s_lo - xs, 0.0)
        v = self.w.bounds * ((over * over).sum(axis=1) + (under * under).sum(axis=1))
        if self.prob.env is not None and self.w.collision > 0:
            sd = states_signed_distance(self.prob.env, self.sys, xs)
            act = np.maximum(self.w.collision_margin - sd, 0.0)
            v = v + self.w.collision * act * act
        return v

    def stage_values(self, xs, us, f_vals=None):
        du = us - self.sys.u_ref
        v = self.w.control_reg * (du * du).sum(axis=1)
        cover = np.maximum(us - self.c_hi, 0.0)
        cunder = np.maximum(self.c_lo - us, 0.0)
        v = v + self.w.bounds * ((cover * cover).sum(axis=1)
                                 + (cunder * cunder).sum(axis=1))
        if self.w.accel_reg > 0 and len(self.accel_rows):
            fv = self.sys.f_many(xs, us) if f_vals is None else f_vals
            acc = fv[:, self.accel_rows]
            v = v + self.w.accel_reg * (acc * acc).sum(axis=1)
        return v + self._state_penalties(xs)

    def terminal_value(self, x):
        d = state_diff(self.spec, x, self.prob.x_goal)
        v = self.w.goal * float((d * d) @ self.spec.distance_weights)
        return v + float(self._state_penalties(x[None, :])[0])

    # -- derivatives ----------------------------------------------------------

    def _state_penalty_derivs(self, xs):
        """Returns (v, gx, Hdiag_or_full) contributions of bounds+collision."""
        n, d_x = xs.shape
        v = np.zeros(n)
        gx = np.zeros((n, d_x))
        Hxx = np.zeros((n, d_x, d_x))
        over = np.maximum(xs - self.s_hi, 0.0)
        under = np.maximum(self.s_lo - xs, 0.0)
        v += self.w.bounds * ((over * over).sum(axis=1) + (under * under).sum(axis=1))
        gx += 2.0 * self.w.bounds * (over - under)
        active = ((over > 0) | (under > 0)).astype(float)
        idx = np.arange(d_x)
        Hxx[:, idx, idx] += 2.0 * self.w.bounds * active
        if self.prob.env is not None and self.w.collision > 0:
            sd, gsd = signed_distance_batch(self.prob.env, self.sys, xs)
            act = np.maximum(self.w.collision_margin - sd, 0.0)
            v += self.w.collision * act * act
            coef = -2.0 * self.w.collision * act
            gx += coef[:, None] * gsd
            on = (act > 0).astype(float)
            Hxx += (2.0 * self.w.collision * on)[:, None, None] * \
                np.einsum("ki,kj->kij", gsd, gsd)
        return v, gx, Hxx

    def stage_derivs(self, xs, us, f_jac=None, f_vals=None):
        K, d_x = xs.shape
        d_u = us.shape[1]
        idx_u = np.arange(d_u)
        du = us - self.sys.u_ref
        l = self.w.control_reg * (du * du).sum(axis=1)
        lu = 2.0 * self.w.control_reg * du
        luu = np.zeros((K, d_u, d_u))
        luu[:, idx_u, idx_u] = 2.0 * self.w.control_reg
        cover = np.maximum(us - self.c_hi, 0.0)
        cunder = np.maximum(self.c_lo - us, 0.0)
        l += self.w.bounds * ((cover * cover).sum(axis=1)
                              + (cunder * cunder).sum(axis=1))
        lu += 2.0 * self.w.bounds * (cover - cunder)
        cactive = ((cover > 0) | (cunder > 0)).astype(float)
        luu[:, idx_u, idx_u] += 2.0 * self.w.bounds * cactive

        lx = np.zeros((K, d_x))
        lxx = np.zeros((K, d_x, d_x))
        lux = np.zeros((K, d_u, d_x))
        if self.w.accel_reg > 0 and len(self.accel_rows):
            if f_jac is None:
                A, B = self.sys.f_jac_many(xs, us)
            else:
                A, B = f_jac
            fv = self.sys.f_many(xs, us) if f_vals is None else f_vals
            acc = fv[:, self.accel_rows]
            Jx = A[:, self.accel_rows, :]
            Ju = B[:, self.accel_rows, :]
            wa = self.w.accel_reg
            l += wa * (acc * acc).sum(axis=1)
            lx += 2.0 * wa * np.einsum("krx,kr->kx", Jx, acc)
            lu += 2.0 * wa * np.einsum("kru,kr->ku", Ju, acc)
            lxx += 2.0 * wa * np.einsum("krx,kry->kxy", Jx, Jx)
            lux += 2.0 * wa * np.einsum("kru,krx->kux", Ju, Jx)
            luu += 2.0 * wa * np.einsum("kru,krv->kuv", Ju, Ju)
        pv, pgx, pHxx = self._state_penalty_derivs(xs)
        return l + pv, lx + pgx, lu, lxx + pHxx, lux, luu

    def terminal_derivs(self, x):
        W = self.spec.distance_weights
        d = state_diff(self.spec, x, self.prob.x_goal)
        v = self.w.goal * float((d * d) @ W)
        lx = 2.0 * self.w.goal * W * d
        lxx = np.diag(2.0 * self.w.goal * W)
        pv, pgx, pHxx = self._state_penalty_derivs(x[None, :])
        return v + float(pv[0]), lx + pgx[0], lxx + pHxx[0]


def running_cost(prob: OcpProblem, x: np.ndarray, u: np.ndarray, k: int):
    """Running cost value, gradient (d_x+d_u,), and Gauss-Newton Hessian."""
    if not 0 <= k < prob.K:
        raise ValueError("stage index k must satisfy 0 <= k < K")
    cost = PenaltyCost(prob)
    xs, us = np.asarray(x, float)[None, :], np.asarray(u, float)[None, :]
    l, lx, lu, lxx, lux, luu = cost.stage_derivs(xs, us)
    grad = np.concatenate([lx[0], lu[0]])
    d_x = xs.shape[1]
    H = np.zeros((len(grad), len(grad)))
    H[:d_x, :d_x] = lxx[0]
    H[d_x:, :d_x] = lux[0]
    H[:d_x, d_x:] = lux[0].T
    H[d_x:, d_x:] = luu[0]
    return float(l[0]), grad, H


def terminal_cost(prob: OcpProblem, x: np.ndarray):
    """Terminal cost value, gradient and Gauss-Newton Hessian."""
    cost = PenaltyCost(prob)
    v, lx, lxx = cost.terminal_derivs(np.asarray(x, float))
    return v, lx, lxx


# -- feasibility-driven DDP ---------------------------------------------------

class FddpSolver:
    """Feasibility-driven DDP over a generic cost model.

    The warm start may violate the dynamics; per-step gaps are tracked
    explicitly and contracted by the factor (1 - alpha) in every accepted
    forward pass, so a full step (alpha = 1) lands on a dynamically feasible
    rollout.  Levenberg-style regularization on Quu globalizes the backward
    pass; the line search accepts steps Crocoddyl-style, comparing realized
    against expected improvement (gap terms included).
    """

    alphas = tuple(0.5 ** i for i in range(11))

    def __init__(self, sys: DynamicalSystem, cost, x_start: np.ndarray, K: int,
                 *, g_tol: float = 1e-4, dyn_tol: float = 1e-5,
                 max_iters: int = 150, reg_init: float = 1e-9,
                 reg_min: float = 1e-9, reg_max: float = 1e7,
                 accept_th: float = 0.1, stall_iters: int = 0,
                 deadline: float | None = None):
        self.sys = sys
        self.spec = sys.spec
        self.cost = cost
        self.x_start = normalize_state(sys.spec, np.asarray(x_start, float))
        self.K = K
        self.g_tol = g_tol
        self.dyn_tol = dyn_tol
        self.max_iters = max_iters
        self.reg_init = reg_init
        self.reg_min = reg_min
        self.reg_max = reg_max
        self.accept_th = accept_th
        # give up after this many consecutive short steps (0 = never);
        # crawling line searches mean the quadratic model has broken down
        self.stall_iters = stall_iters
        self.deadline = deadline

    # gap[k] = amount the rollout overshoots the stored state at node k
    def _gaps(self, xs, us):
        gaps = np.zeros_like(xs)
        gaps[0] = state_diff(self.spec, self.x_start, xs[0])
        if len(us):
            pred = self.sys.step_many(xs[:-1], us)
            gaps[1:] = state_diff(self.spec, pred, xs[1:])
        return gaps

    def _total_cost(self, xs, us):
        return float(self.cost.stage_values(xs[:-1], us).sum()
                     + self.cost.terminal_value(xs[-1]))

    def _backward(self, Fx, Fu, derivs, term, gaps, reg):
        K, d_x = Fx.shape[0], Fx.shape[1]
        d_u = Fu.shape[2]
        _, lx, lu, lxx, lux, luu = derivs
        _, lxK, lxxK = term
        kff = np.empty((K, d_u))
        Kfb = np.empty((K, d_u, d_x))
        Vx = lxK.copy()
        Vxx = 0.5 * (lxxK + lxxK.T)
        d1 = d2 = 0.0
        d1g = float(Vx @ gaps[K])
        d2g = float(gaps[K] @ Vxx @ gaps[K])
        gnorm = 0.0
        eye_u = np.eye(d_u)
        for k in range(K - 1, -1, -1):
            fx, fu = Fx[k], Fu[k]
            Vx_gap = Vx + Vxx @ gaps[k + 1]
            Qx = lx[k] + fx.T @ Vx_gap
            Qu = lu[k] + fu.T @ Vx_gap
            fxTV = fx.T @ Vxx
            fuTV = fu.T @ Vxx
            Qxx = lxx[k] + fxTV @ fx
            Qux = lux[k] + fuTV @ fx
            Quu = luu[k] + fuTV @ fu
            Quu_reg = Quu + reg * eye_u
            try:
                np.linalg.cholesky(Quu_reg)
            except np.linalg.LinAlgError:
                return None
            kf = -np.linalg.solve(Quu_reg, Qu)
            Kf = -np.linalg.solve(Quu_reg, Qux)
            kff[k] = kf
            Kfb[k] = Kf
            d1 += float(kf @ Qu)
            d2 += float(kf @ Quu @ kf)
            Vx = Qx + Kf.T @ Quu @ kf + Kf.T @ Qu + Qux.T @ kf
            Vxx = Qxx + Kf.T @ Quu @ Kf + Kf.T @ Qux + Qux.T @ Kf
            Vxx = 0.5 * (Vxx + Vxx.T)
            d1g += float(Vx @ gaps[k])
            d2g += float(gaps[k] @ Vxx @ gaps[k])
            gnorm = max(gnorm, float(np.abs(Qu).max()))
        return kff, Kfb, d1 + d1g, d2 + d2g, gnorm

    def _forward(self, xs, us, gaps, kff, Kfb, alpha):
        spec = self.spec
        sys = self.sys
        dt = spec.dt
        xs_new = np.empty_like(xs)
        us_new = np.empty_like(us)
        gaps_new = np.empty_like(gaps)
        xs_new[0] = normalize_state(spec, xs[0] + alpha * gaps[0])
        gaps_new[0] = state_diff(spec, self.x_start, xs_new[0])
        shrink = 1.0 - alpha
        with np.errstate(over="ignore", invalid="ignore"):
            for k in range(self.K):
                dx = state_diff(spec, xs_new[k], xs[k])
                us_new[k] = us[k] + alpha * kff[k] + Kfb[k] @ dx
                if not np.all(np.isfinite(us_new[k])):
                    return None
                pred = xs_new[k] + sys.f(xs_new[k], us_new[k]) * dt
                nxt = normalize_state(spec, pred - shrink * gaps[k + 1])
                if not np.all(np.isfinite(nxt)):
                    return None
                xs_new[k + 1] = nxt
                gaps_new[k + 1] = state_diff(spec, normalize_state(spec, pred),
                                             nxt)
        return xs_new, us_new, gaps_new

    def solve(self, init_states: np.ndarray, init_controls: np.ndarray) -> OptResult:
        spec = self.spec
        xs = normalize_state(spec, np.array(init_states, float))
        us = np.array(init_controls, float)
        if xs.shape != (self.K + 1, spec.d_x) or us.shape != (self.K, spec.d_u):
            raise ValueError("warm start must have K+1 states and K controls")
        gaps = self._gaps(xs, us)
        cost = self._total_cost(xs, us)
        if not np.isfinite(cost):
            return OptResult(xs, us, False, 0, cost, np.inf, np.inf,
                             "diverged", [])
        reg = self.reg_init
        history = []
        gnorm = np.inf
        stop_reason = "max_iters"
        iters = 0
        short_steps = 0
        for iters in range(1, self.max_iters + 1):
            if self.deadline is not None and time.monotonic() > self.deadline:
                stop_reason = "deadline"
                break
            Fx, Fu = self.sys.step_jacobians_many(xs[:-1], us)
            A_B = (Fx - np.eye(spec.d_x)) / spec.dt, Fu / spec.dt
            derivs = self.cost.stage_derivs(xs[:-1], us, f_jac=A_B)
            term = self.cost.terminal_derivs(xs[-1])
            back = None
            while back is None:
                back = self._backward(Fx, Fu, derivs, term, gaps, reg)
                if back is None:
                    reg *= 10.0
                    if reg > self.reg_max:
                        stop_reason = "singular_backward_pass"
                        break
            if back is None:
                break
            kff, Kfb, d1, d2, gnorm = back
            max_defect = float(_paired_distance(spec, gaps, np.zeros_like(gaps)).max())
            if gnorm < self.g_tol and max_defect < self.dyn_tol:
                stop_reason = "converged"
                break
            accepted = False
            for alpha in self.alphas:
                trial = self._forward(xs, us, gaps, kff, Kfb, alpha)
                if trial is None:
                    continue
                xs_t, us_t, gaps_t = trial
                cost_t = self._total_cost(xs_t, us_t)
                if not np.isfinite(cost_t):
                    continue
                exp_change = alpha * d1 + 0.5 * alpha * alpha * d2
                d_cost = cost_t - cost
                if exp_change <= 0:
                    ok = d_cost <= self.accept_th * exp_change
                else:
                    ok = d_cost <= 2.0 * exp_change
                if ok:
                    xs, us, gaps, cost = xs_t, us_t, gaps_t, cost_t
                    accepted = True
                    history.append({
                        "cost": cost,
                        "max_defect": float(_paired_distance(
                            spec, gaps, np.zeros_like(gaps)).max()),
                        "alpha": alpha,
                        "reg": reg,
                    })
                    if alpha >= 0.5:
                        reg = max(self.reg_min, reg / 10.0)
                    elif alpha < 0.01:
                        reg = min(self.reg_max, reg * 10.0)
                    short_steps = short_steps + 1 if alpha < 0.25 else 0
                    break
            if not accepted:
                reg *= 10.0
                if reg > self.reg_max:
                    stop_reason = "no_acceptable_step"
                    break
                continue
            if self.stall_iters and short_steps >= self.stall_iters:
                stop_reason = "stalled"
                break
            # stagnation: feasible and no measurable predicted improvement
            if history and len(history) >= 2:
                prev = history[-2]["cost"]
                if (history[-1]["max_defect"] < self.dyn_tol
                        and abs(prev - cost) <= 1e-12 * max(1.0, abs(cost))):
                    stop_reason = "converged"
                    break
        max_defect = float(_paired_distance(spec, gaps, np.zeros_like(gaps)).max())
        converged = (stop_reason == "converged" and max_defect <= self.dyn_tol)
        return OptResult(xs, us, converged, iters, cost, max_defect,
                         float(gnorm), stop_reason, history)


def solve_fddp(prob: OcpProblem, init_states: np.ndarray,
               init_controls: np.ndarray, *, max_iters: int = 150,
               g_tol: float = 1e-4, dyn_tol: float = 1e-5,
               stall_iters: int = 0, deadline: float | None = None) -> OptResult:
    """Solve an `OcpProblem` from a (possibly infeasible) warm start.

    Divergence or failure to find an acceptable step yields a result with
    ``converged=False``; callers (the outer planner) react by shrinking the
    allowed discontinuity rather than by handling exceptions.
    """
    solver = FddpSolver(prob.sys, PenaltyCost(prob), prob.x_start, prob.K,
                        g_tol=g_tol, dyn_tol=dyn_tol, max_iters=max_iters,
                        stall_iters=stall_iters, deadline=deadline)
    result = solver.solve(init_states, init_controls)
    result.report = check_feasible(prob.sys, prob.env, result.states,
                                   result.controls, x_start=prob.x_start,
                                   x_goal=prob.x_goal)
    return result


def check_feasible(sys: DynamicalSystem, env: Environment | None,
                   states: np.ndarray, controls: np.ndarray, *,
                   x_start: np.ndarray | None = None,
                   x_goal: np.ndarray | None = None,
                   spec: SystemSpec | None = None) -> ConstraintReport:
    """Re-validate a trajectory against the problem constraints.

    Uses only `step`, the metric, and the collision queries; shares no
    bookkeeping with the solver.
    """
    spec = spec or sys.spec
    states = np.atleast_2d(np.asarray(states, float))
    controls = np.asarray(controls, float).reshape(-1, spec.d_u)
    if len(states) != len(controls) + 1:
        raise ValueError("need exactly one more state than controls")
    if len(controls):
        pred = sys.step_many(states[:-1], controls)
        max_defect = float(_paired_distance(spec, pred, states[1:]).max())
        c_viol = float(np.maximum(
            np.maximum(controls - spec.control_upper,
                       spec.control_lower - controls), 0.0).max())
    else:
        max_defect = 0.0
        c_viol = 0.0
    free = ~spec.angle_mask
    s_viol = float(np.maximum(
        np.maximum(states[:, free] - spec.state_upper[free],
                   spec.state_lower[free] - states[:, free]), 0.0).max())
    min_sd = (float(states_signed_distance(env, sys, states).min())
              if env is not None else np.inf)
    return ConstraintReport(
        max_defect=max_defect,
        start_distance=(distance(spec, states[0], x_start)
                        if x_start is not None else 0.0),
        goal_distance=(distance(spec, states[-1], x_goal)
                       if x_goal is not None else 0.0),
        min_signed_distance=min_sd,
        max_control_violation=c_viol,
        max_state_violation=s_viol,
    )
