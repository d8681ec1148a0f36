"""Environments, binary collision checks, and signed-distance queries.

Obstacles are axis-aligned boxes or spheres/discs; robot footprints are
unions of discs whose centers the owning system extracts from the state
(`DynamicalSystem.collision_bodies`).  All queries are pure and vectorized
over batches of states, and an `Environment` never changes after
construction, so it is safe to share across threads.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import yaml


@dataclass(frozen=True)
class Obstacle:
    """Axis-aligned box or sphere/disc obstacle."""

    kind: str                       # "box" | "sphere"
    center: np.ndarray
    half_extents: np.ndarray | None = None
    radius: float | None = None

    def __post_init__(self):
        center = np.ascontiguousarray(self.center, dtype=float)
        center.setflags(write=False)
        object.__setattr__(self, "center", center)
        if self.kind == "box":
            if self.half_extents is None:
                raise ValueError("box obstacle needs half_extents")
            he = np.ascontiguousarray(self.half_extents, dtype=float)
            if he.shape != center.shape or np.any(he <= 0):
                raise ValueError("half_extents must be positive and match center")
            he.setflags(write=False)
            object.__setattr__(self, "half_extents", he)
        elif self.kind == "sphere":
            if self.radius is None or self.radius <= 0:
                raise ValueError("sphere obstacle needs a positive radius")
        else:
            raise ValueError(f"unknown obstacle kind '{self.kind}'")

    def clearance(self, points: np.ndarray) -> np.ndarray:
        """Signed distance from each point (n, dim) to this obstacle surface.

        Positive outside, negative inside.
        """
        d = points - self.center
        if self.kind == "sphere":
            return np.linalg.norm(d, axis=-1) - self.radius
        q = np.abs(d) - self.half_extents
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(np.max(q, axis=-1), 0.0)
        return outside + inside


@dataclass(frozen=True)
class Environment:
    """Rectangular workspace with a list of analytic obstacles."""

    workspace_min: np.ndarray
    workspace_max: np.ndarray
    obstacles: tuple[Obstacle, ...] = field(default_factory=tuple)

    def __post_init__(self):
        lo = np.ascontiguousarray(self.workspace_min, dtype=float)
        hi = np.ascontiguousarray(self.workspace_max, dtype=float)
        if lo.shape != hi.shape or np.any(lo >= hi):
            raise ValueError("workspace_min must be < workspace_max")
        lo.setflags(write=False)
        hi.setflags(write=False)
        object.__setattr__(self, "workspace_min", lo)
        object.__setattr__(self, "workspace_max", hi)
        object.__setattr__(self, "obstacles", tuple(self.obstacles))

    @property
    def workspace_dim(self) -> int:
        return len(self.workspace_min)

    def points_clearance(self, points: np.ndarray) -> np.ndarray:
        """Min signed distance from points (n, dim) to obstacles + walls.

        The workspace boundary counts as an obstacle seen from inside: the
        clearance of a point is also bounded by its distance to the nearest
        wall.
        """
        points = np.asarray(points, dtype=float)
        wall = np.minimum(points - self.workspace_min,
                          self.workspace_max - points).min(axis=-1)
        out = wall
        for obs in self.obstacles:
            out = np.minimum(out, obs.clearance(points))
        return out


def environment_from_dict(data: dict) -> Environment:
    """Build an `Environment` from the documented mapping schema."""
    ws = data["workspace"]
    obstacles = []
    for i, item in enumerate(data.get("obstacles", []) or []):
        try:
            obstacles.append(Obstacle(
                kind=item["kind"],
                center=np.array(item["center"], float),
                half_extents=(np.array(item["half_extents"], float)
                              if "half_extents" in item else None),
                radius=item.get("radius"),
            ))
        except (KeyError, ValueError) as exc:
            raise ValueError(f"obstacle #{i}: {exc}") from exc
    return Environment(np.array(ws["min"], float), np.array(ws["max"], float),
                       tuple(obstacles))


def load_environment(path) -> Environment:
    """Load an environment YAML file (see README for the schema)."""
    with open(path) as fh:
        data = yaml.safe_load(fh)
    return environment_from_dict(data)


# -- robot-level queries ----------------------------------------------------

def states_signed_distance(env: Environment, sys, states: np.ndarray,
                           inflate: float = 0.0) -> np.ndarray:
    """Min signed distance of the robot footprint for each state (n, d_x)."""
    states = np.atleast_2d(np.asarray(states, dtype=float))
    bodies = sys.collision_bodies(states)        # (n, B, dim)
    n, n_bodies, dim = bodies.shape
    clear = env.points_clearance(bodies.reshape(n * n_bodies, dim))
    clear = clear.reshape(n, n_bodies) - (sys.body_radii + inflate)
    return clear.min(axis=1)


def is_state_free(env: Environment, sys, x: np.ndarray,
                  inflate: float = 0.0) -> bool:
    """True iff every robot body at `x` is strictly clear of obstacles/walls."""
    return bool(states_signed_distance(env, sys, x[None, :], inflate)[0] > 0.0)


def is_motion_free(env: Environment, sys, states: np.ndarray,
                   inflate: float = 0.0) -> bool:
    """True iff every state of the sequence is collision-free."""
    states = np.asarray(states, dtype=float)
    if states.ndim != 2 or len(states) == 0:
        raise ValueError("states must be a nonempty (n, d_x) array")
    return bool(np.all(states_signed_distance(env, sys, states, inflate) > 0.0))


def signed_distance(env: Environment, sys, x: np.ndarray,
                    fd_step: float = 1e-6):
    """Signed distance at `x` and its gradient w.r.t. the state.

    The gradient is computed by central finite differences; at states where
    the minimizing (body, obstacle) pair is not unique the function is only
    subdifferentiable and the finite-difference value is returned as-is.
    """
    d, grad = signed_distance_batch(env, sys, np.asarray(x, float)[None, :],
                                    fd_step=fd_step)
    return float(d[0]), grad[0]


def signed_distance_batch(env: Environment, sys, states: np.ndarray,
                          fd_step: float = 1e-6):
    """Vectorized signed distance + finite-difference gradients.

    Returns (d, grad) with shapes (n,) and (n, d_x).
    """
    states = np.atleast_2d(np.asarray(states, dtype=float))
    n, d_x = states.shape
    d = states_signed_distance(env, sys, states)
    # perturbed copies: (n, 2*d_x, d_x), +h then -h for each component
    pert = np.broadcast_to(states[:, None, :], (n, 2 * d_x, d_x)).copy()
    idx = np.arange(d_x)
    pert[:, idx, idx] += fd_step
    pert[:, d_x + idx, idx] -= fd_step
    dp = states_signed_distance(env, sys, pert.reshape(n * 2 * d_x, d_x))
    dp = dp.reshape(n, 2 * d_x)
    grad = (dp[:, :d_x] - dp[:, d_x:]) / (2.0 * fd_step)
    return d, grad
