"""Core state-space machinery shared by every dynamical system.

States and controls are plain 1-D numpy arrays; a `SystemSpec` carries the
dimensions, bounds, metric weights and component masks that give those
arrays meaning.  All distance computations wrap angle components, so the
weighted metric stays well behaved near the +/-pi seam.
"""
from __future__ import annotations

from abc import ABC, abstractmethod
from dataclasses import dataclass

import numpy as np


def wrap_to_pi(x):
    """Wrap an angle (array or scalar) to the interval [-pi, pi)."""
    return np.mod(x + np.pi, 2.0 * np.pi) - np.pi


@dataclass(frozen=True)
class SystemSpec:
    """Dimensions, bounds and metric of one dynamical system.

    Attributes
    ----------
    name : str
        System identifier (e.g. ``"unicycle1"``).
    d_x, d_u : int
        State and control dimensions.
    dt : float
        Integration time step in seconds (zero-order hold).
    state_lower, state_upper : ndarray, shape (d_x,)
        Componentwise state bounds; +/-inf allowed.
    control_lower, control_upper : ndarray, shape (d_u,)
        Componentwise control bounds (finite).
    distance_weights : ndarray, shape (d_x,)
        Nonnegative weights of the metric d(a,b) = sqrt(sum_i w_i diff_i^2).
    angle_mask : ndarray of bool, shape (d_x,)
        Components treated as angles (wrapped differences).
    translation_mask : ndarray of bool, shape (d_x,)
        Position components the dynamics are invariant to.
    """

    name: str
    d_x: int
    d_u: int
    dt: float
    state_lower: np.ndarray
    state_upper: np.ndarray
    control_lower: np.ndarray
    control_upper: np.ndarray
    distance_weights: np.ndarray
    angle_mask: np.ndarray
    translation_mask: np.ndarray

    def __post_init__(self):
        for field in ("state_lower", "state_upper", "distance_weights",
                      "angle_mask", "translation_mask"):
            arr = np.asarray(getattr(self, field))
            if arr.shape != (self.d_x,):
                raise ValueError(f"{field} must have shape ({self.d_x},)")
        for field in ("control_lower", "control_upper"):
            arr = np.asarray(getattr(self, field))
            if arr.shape != (self.d_u,):
                raise ValueError(f"{field} must have shape ({self.d_u},)")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if np.any(self.state_lower > self.state_upper):
            raise ValueError("state bounds must satisfy lower <= upper")
        if np.any(self.control_lower > self.control_upper):
            raise ValueError("control bounds must satisfy lower <= upper")
        w = self.distance_weights
        if np.any(w < 0) or not np.any(w > 0):
            raise ValueError("distance_weights must be >= 0 with one > 0")
        if np.any(self.angle_mask & self.translation_mask):
            raise ValueError("a component cannot be both angle and position")
        for field in ("state_lower", "state_upper", "control_lower",
                      "control_upper", "distance_weights"):
            a = np.ascontiguousarray(getattr(self, field), dtype=float)
            a.setflags(write=False)
            object.__setattr__(self, field, a)
        for field in ("angle_mask", "translation_mask"):
            a = np.ascontiguousarray(getattr(self, field), dtype=bool)
            a.setflags(write=False)
            object.__setattr__(self, field, a)

    def replace_bounds(self, state_lower, state_upper) -> "SystemSpec":
        """Copy of this spec with different state bounds."""
        return SystemSpec(self.name, self.d_x, self.d_u, self.dt,
                          np.asarray(state_lower, float),
                          np.asarray(state_upper, float),
                          self.control_lower, self.control_upper,
                          self.distance_weights, self.angle_mask,
                          self.translation_mask)


def _check_vector(v, n, what):
    v = np.asarray(v, dtype=float)
    if v.shape != (n,):
        raise ValueError(f"{what} must have shape ({n},), got {v.shape}")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{what} has non-finite components")
    return v


def normalize_state(spec: SystemSpec, x: np.ndarray) -> np.ndarray:
    """Wrap the angle components of `x` to [-pi, pi)."""
    x = np.array(x, dtype=float, copy=True)
    if spec.angle_mask.any():
        x[..., spec.angle_mask] = wrap_to_pi(x[..., spec.angle_mask])
    return x


def state_diff(spec: SystemSpec, a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Componentwise a - b with angle components wrapped to [-pi, pi).

    Broadcasts over leading axes, so `a` may be an (n, d_x) batch.
    """
    d = np.asarray(a, float) - np.asarray(b, float)
    if spec.angle_mask.any():
        d = np.array(d, copy=True)
        d[..., spec.angle_mask] = wrap_to_pi(d[..., spec.angle_mask])
    return d


def distance(spec: SystemSpec, a: np.ndarray, b: np.ndarray) -> float:
    """Weighted Euclidean distance with wrapped angular differences."""
    d = state_diff(spec, a, b)
    return float(np.sqrt(np.dot(spec.distance_weights, d * d)))


def distance_many(spec: SystemSpec, states: np.ndarray,
                  x: np.ndarray) -> np.ndarray:
    """Distances from each row of `states` (n, d_x) to a single state `x`."""
    d = state_diff(spec, states, x)
    return np.sqrt((d * d) @ spec.distance_weights)


def is_within_bounds(spec: SystemSpec, x: np.ndarray,
                     tol: float = 0.0) -> bool:
    """True if every non-angle component of `x` lies within the state box.

    Angle components are excluded: they live on the circle and are kept
    normalized instead of clamped.
    """
    free = ~spec.angle_mask
    return bool(np.all(x[free] >= spec.state_lower[free] - tol)
                and np.all(x[free] <= spec.state_upper[free] + tol))


def sample_uniform_state(spec: SystemSpec, rng: np.random.Generator) -> np.ndarray:
    """Sample a state uniformly inside the state box.

    Angle components are drawn uniformly from [-pi, pi) regardless of the
    stored bounds.  Every other component must have finite bounds; configure
    a sampling box (see `bench.load_problem`) for physically unbounded ones.
    """
    lo = np.where(spec.angle_mask, -np.pi, spec.state_lower)
    hi = np.where(spec.angle_mask, np.pi, spec.state_upper)
    if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
        bad = np.where(~(np.isfinite(lo) & np.isfinite(hi)))[0]
        raise ValueError(
            f"system '{spec.name}' has unbounded state components {bad.tolist()} "
            "and no sampling box was configured")
    return lo + (hi - lo) * rng.random(spec.d_x)


def sample_uniform_control(spec: SystemSpec, rng: np.random.Generator) -> np.ndarray:
    """Sample a control uniformly inside the control box."""
    lo, hi = spec.control_lower, spec.control_upper
    return lo + (hi - lo) * rng.random(spec.d_u)


def translate_state(spec: SystemSpec, x: np.ndarray,
                    offset: np.ndarray) -> np.ndarray:
    """Add `offset` to the translation-invariant position components of `x`."""
    offset = np.asarray(offset, dtype=float)
    n_pos = int(spec.translation_mask.sum())
    if offset.shape != (n_pos,):
        raise ValueError(f"offset must have shape ({n_pos},)")
    out = np.array(x, dtype=float, copy=True)
    out[..., spec.translation_mask] += offset
    return out


class DynamicalSystem(ABC):
    """Deterministic continuous-time dynamics xdot = f(x, u), Euler-discretized.

    Subclasses provide the vector field, its Jacobians, and the collision
    footprint.  Instances are immutable after construction and safe to share
    across threads.
    """

    spec: SystemSpec

    #: neutral control (hover/rest); also the control-regularization center
    u_ref: np.ndarray

    #: rows of f that are velocity derivatives (regularized as acceleration)
    accel_rows: tuple[int, ...] = ()

    #: radii of the disc bodies making up the collision footprint
    body_radii: np.ndarray

    @abstractmethod
    def f(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """Continuous dynamics f(x, u) for a single state/control pair."""

    @abstractmethod
    def f_many(self, xs: np.ndarray, us: np.ndarray) -> np.ndarray:
        """Vectorized f over matching (n, d_x), (n, d_u) batches."""

    @abstractmethod
    def f_jac_many(self, xs: np.ndarray, us: np.ndarray):
        """Continuous Jacobians (A, B) stacked over a batch.

        Returns arrays of shape (n, d_x, d_x) and (n, d_x, d_u).
        """

    @abstractmethod
    def collision_bodies(self, states: np.ndarray) -> np.ndarray:
        """Workspace positions of the disc bodies, shape (n, n_bodies, 2)."""

    # -- discrete dynamics -------------------------------------------------

    def step(self, x: np.ndarray, u: np.ndarray) -> np.ndarray:
        """One explicit-Euler step x + f(x, u) * dt, angles renormalized."""
        x = _check_vector(x, self.spec.d_x, "state")
        u = _check_vector(u, self.spec.d_u, "control")
        return normalize_state(self.spec, x + self.f(x, u) * self.spec.dt)

    def step_many(self, xs: np.ndarray, us: np.ndarray) -> np.ndarray:
        """Vectorized Euler step over matching batches."""
        xs = np.asarray(xs, float)
        return normalize_state(self.spec, xs + self.f_many(xs, us) * self.spec.dt)

    def step_jacobians(self, x: np.ndarray, u: np.ndarray):
        """Jacobians of `step` w.r.t. x and u: (I + A dt, B dt)."""
        x = _check_vector(x, self.spec.d_x, "state")
        u = _check_vector(u, self.spec.d_u, "control")
        Jx, Ju = self.step_jacobians_many(x[None, :], u[None, :])
        return Jx[0], Ju[0]

    def step_jacobians_many(self, xs: np.ndarray, us: np.ndarray):
        """Vectorized discrete Jacobians over a batch."""
        A, B = self.f_jac_many(np.asarray(xs, float), np.asarray(us, float))
        dt = self.spec.dt
        Jx = A * dt
        Jx[:, np.arange(self.spec.d_x), np.arange(self.spec.d_x)] += 1.0
        return Jx, B * dt

    def rollout(self, x0: np.ndarray, us: np.ndarray) -> np.ndarray:
        """Integrate a control sequence from x0; returns (len(us)+1, d_x)."""
        us = np.atleast_2d(np.asarray(us, float))
        xs = np.empty((len(us) + 1, self.spec.d_x))
        xs[0] = normalize_state(self.spec, np.asarray(x0, float))
        for k, u in enumerate(us):
            xs[k + 1] = self.step(xs[k], u)
        return xs

    # -- boundary-pair sampling for primitive generation --------------------
    #
    # The defaults sample uniformly in the generation box with per-component
    # reach rates from the system config; systems with strong nonholonomic
    # structure override these so that most sampled two-point boundary value
    # problems actually admit a solution.

    def sample_primitive_start(self, box, rng: np.random.Generator) -> np.ndarray:
        lo, hi = box
        spec = self.spec
        start = lo + (hi - lo) * rng.random(spec.d_x)
        start[spec.angle_mask] = -np.pi + 2.0 * np.pi * rng.random(
            int(spec.angle_mask.sum()))
        start[spec.translation_mask] = 0.0
        return start

    def sample_primitive_goal(self, start: np.ndarray, horizon: float, box,
                              rng: np.random.Generator) -> np.ndarray:
        lo, hi = box
        spec = self.spec
        cfg = getattr(self, "config", {}).get("primitives", {})
        reach = float(cfg.get("goal_speed", 1.0)) * horizon
        goal = lo + (hi - lo) * rng.random(spec.d_x)
        goal[spec.translation_mask] = reach * (2.0 * rng.random(
            int(spec.translation_mask.sum())) - 1.0)
        rates = cfg.get("reach_rates")
        if rates is not None:
            free = ~spec.translation_mask
            delta = np.asarray(rates, float) * horizon * (
                2.0 * rng.random(int(free.sum())) - 1.0)
            goal[free] = start[free] + delta
            goal[spec.angle_mask] = wrap_to_pi(goal[spec.angle_mask])
            nb = free & ~spec.angle_mask
            goal[nb] = np.clip(goal[nb], lo[nb], hi[nb])
        else:
            goal[spec.angle_mask] = -np.pi + 2.0 * np.pi * rng.random(
                int(spec.angle_mask.sum()))
        return goal

    def __repr__(self):
        return f"{type(self).__name__}(d_x={self.spec.d_x}, d_u={self.spec.d_u}, dt={self.spec.dt})"
