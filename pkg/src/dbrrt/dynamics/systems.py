"""Concrete dynamical systems and their YAML-backed construction.

Physical parameters, bounds, metric weights and planner defaults live in
per-system config files under ``dbrrt/configs/systems/``; `make_system`
reads one of those (or any file with the same schema) and instantiates the
matching class.  See README for the schema.
"""
from __future__ import annotations

import math
from importlib import resources

import numpy as np
import yaml

from .base import DynamicalSystem, SystemSpec, wrap_to_pi

GRAVITY = 9.81


def _arc_goal(theta0: float, speed: float, turn_rate: float, horizon: float,
              rng) -> tuple[np.ndarray, float]:
    """Endpoint of a near-constant-curvature arc, slightly randomized.

    Driving at `speed` while turning a total of dtheta = turn_rate * horizon
    traverses a circular arc whose chord has bearing dtheta/2 and length
    |speed| * horizon * sinc(dtheta/2).  Sampling goals near such arcs keeps
    most boundary value problems solvable for car-like systems.
    """
    dtheta = turn_rate * horizon
    beta = 0.5 * dtheta
    chord = abs(speed) * horizon * (np.sinc(beta / np.pi))
    chord *= rng.uniform(0.5, 0.95)
    direction = theta0 + beta + (0.0 if speed >= 0 else np.pi)
    dxy = chord * np.array([math.cos(direction), math.sin(direction)])
    theta_g = float(wrap_to_pi(theta0 + dtheta))
    return dxy, theta_g


class Unicycle1(DynamicalSystem):
    """First-order unicycle: state (x, y, theta), controls (v, omega)."""

    accel_rows = ()

    def __init__(self, spec: SystemSpec, params: dict):
        self.spec = spec
        self.u_ref = np.zeros(2)
        self.body_radii = np.array([float(params.get("radius", 0.2))])

    def f(self, x, u):
        c, s = math.cos(x[2]), math.sin(x[2])
        return np.array([u[0] * c, u[0] * s, u[1]])

    def f_many(self, xs, us):
        c, s = np.cos(xs[:, 2]), np.sin(xs[:, 2])
        return np.stack([us[:, 0] * c, us[:, 0] * s, us[:, 1]], axis=1)

    def f_jac_many(self, xs, us):
        n = len(xs)
        c, s = np.cos(xs[:, 2]), np.sin(xs[:, 2])
        v = us[:, 0]
        A = np.zeros((n, 3, 3))
        A[:, 0, 2] = -v * s
        A[:, 1, 2] = v * c
        B = np.zeros((n, 3, 2))
        B[:, 0, 0] = c
        B[:, 1, 0] = s
        B[:, 2, 1] = 1.0
        return A, B

    def collision_bodies(self, states):
        return states[:, None, :2]

    def sample_primitive_goal(self, start, horizon, box, rng):
        v_max = self.spec.control_upper[0]
        w_max = self.spec.control_upper[1]
        speed = rng.uniform(0.25, 1.0) * v_max * (1 if rng.random() < 0.7 else -1)
        turn = rng.uniform(-1.0, 1.0) * w_max
        dxy, theta_g = _arc_goal(start[2], speed, turn, horizon, rng)
        return np.array([start[0] + dxy[0], start[1] + dxy[1], theta_g])


class Unicycle2(DynamicalSystem):
    """Second-order unicycle: state (x, y, theta, v, omega), controls (a, alpha)."""

    accel_rows = (3, 4)

    def __init__(self, spec: SystemSpec, params: dict):
        self.spec = spec
        self.u_ref = np.zeros(2)
        self.body_radii = np.array([float(params.get("radius", 0.2))])

    def f(self, x, u):
        c, s = math.cos(x[2]), math.sin(x[2])
        return np.array([x[3] * c, x[3] * s, x[4], u[0], u[1]])

    def f_many(self, xs, us):
        c, s = np.cos(xs[:, 2]), np.sin(xs[:, 2])
        return np.stack([xs[:, 3] * c, xs[:, 3] * s, xs[:, 4],
                         us[:, 0], us[:, 1]], axis=1)

    def f_jac_many(self, xs, us):
        n = len(xs)
        c, s = np.cos(xs[:, 2]), np.sin(xs[:, 2])
        v = xs[:, 3]
        A = np.zeros((n, 5, 5))
        A[:, 0, 2] = -v * s
        A[:, 0, 3] = c
        A[:, 1, 2] = v * c
        A[:, 1, 3] = s
        A[:, 2, 4] = 1.0
        B = np.zeros((n, 5, 2))
        B[:, 3, 0] = 1.0
        B[:, 4, 1] = 1.0
        return A, B

    def collision_bodies(self, states):
        return states[:, None, :2]

    def sample_primitive_goal(self, start, horizon, box, rng):
        lo, hi = box
        a_max = self.spec.control_upper[0]
        al_max = self.spec.control_upper[1]
        v_g = np.clip(start[3] + rng.uniform(-0.9, 0.9) * a_max * horizon,
                      lo[3], hi[3])
        w_g = np.clip(start[4] + rng.uniform(-0.9, 0.9) * al_max * horizon,
                      lo[4], hi[4])
        dxy, theta_g = _arc_goal(start[2], 0.5 * (start[3] + v_g),
                                 0.5 * (start[4] + w_g), horizon, rng)
        return np.array([start[0] + dxy[0], start[1] + dxy[1], theta_g,
                         v_g, w_g])


class CarWithTrailer(DynamicalSystem):
    """Kinematic car towing one trailer.

    State (x, y, theta_car, theta_trailer), controls (v, steering angle).
    The trailer is hitched at distance `hitch` behind the car reference
    point and drags toward the car heading.
    """

    accel_rows = ()

    def __init__(self, spec: SystemSpec, params: dict):
        self.spec = spec
        self.u_ref = np.zeros(2)
        self.wheelbase = float(params.get("wheelbase", 0.4))
        self.hitch = float(params.get("hitch", 0.5))
        r = float(params.get("radius", 0.18))
        self.body_radii = np.array([r, r])

    def f(self, x, u):
        c0, s0 = math.cos(x[2]), math.sin(x[2])
        v = u[0]
        return np.array([
            v * c0,
            v * s0,
            v * math.tan(u[1]) / self.wheelbase,
            v * math.sin(x[2] - x[3]) / self.hitch,
        ])

    def f_many(self, xs, us):
        c0, s0 = np.cos(xs[:, 2]), np.sin(xs[:, 2])
        v = us[:, 0]
        return np.stack([
            v * c0,
            v * s0,
            v * np.tan(us[:, 1]) / self.wheelbase,
            v * np.sin(xs[:, 2] - xs[:, 3]) / self.hitch,
        ], axis=1)

    def f_jac_many(self, xs, us):
        n = len(xs)
        c0, s0 = np.cos(xs[:, 2]), np.sin(xs[:, 2])
        rel = xs[:, 2] - xs[:, 3]
        crel = np.cos(rel)
        v, phi = us[:, 0], us[:, 1]
        A = np.zeros((n, 4, 4))
        A[:, 0, 2] = -v * s0
        A[:, 1, 2] = v * c0
        A[:, 3, 2] = v * crel / self.hitch
        A[:, 3, 3] = -v * crel / self.hitch
        B = np.zeros((n, 4, 2))
        B[:, 0, 0] = c0
        B[:, 1, 0] = s0
        B[:, 2, 0] = np.tan(phi) / self.wheelbase
        B[:, 2, 1] = v / (self.wheelbase * np.cos(phi) ** 2)
        B[:, 3, 0] = np.sin(rel) / self.hitch
        return A, B

    def collision_bodies(self, states):
        car = states[:, :2]
        trailer = car - self.hitch * np.stack(
            [np.cos(states[:, 3]), np.sin(states[:, 3])], axis=1)
        return np.stack([car, trailer], axis=1)

    def sample_primitive_start(self, box, rng):
        start = super().sample_primitive_start(box, rng)
        # keep the trailer within a recoverable angle of the car
        start[3] = wrap_to_pi(start[2] + rng.uniform(-0.6, 0.6))
        return start

    def sample_primitive_goal(self, start, horizon, box, rng):
        v_lo, v_hi = self.spec.control_lower[0], self.spec.control_upper[0]
        phi_max = self.spec.control_upper[1]
        reverse = rng.random() > 0.85
        speed = (rng.uniform(0.5, 1.0) * v_lo if reverse
                 else rng.uniform(0.4, 1.0) * v_hi)
        turn_frac = rng.uniform(-0.2, 0.2) if reverse else rng.uniform(-0.7, 0.7)
        turn = turn_frac * abs(speed) * math.tan(phi_max) / self.wheelbase
        dxy, theta_g = _arc_goal(start[2], speed, turn, horizon, rng)
        # trailer angle relaxes exponentially toward the arc's steady state
        rel0 = float(wrap_to_pi(start[2] - start[3]))
        rel_ss = math.asin(np.clip(turn * self.hitch / speed, -0.95, 0.95))
        decay = math.exp(-abs(speed) * horizon / self.hitch)
        rel_g = rel_ss + (rel0 - rel_ss) * decay
        theta1_g = wrap_to_pi(theta_g - rel_g + rng.uniform(-0.1, 0.1))
        return np.array([start[0] + dxy[0], start[1] + dxy[1], theta_g,
                         theta1_g])


class Acrobot(DynamicalSystem):
    """Two-link underactuated pendulum with elbow torque.

    State (q1, q2, w1, w2): q1 is the shoulder angle measured from the
    hanging position, q2 the relative elbow angle; the single control is
    the elbow torque.  Standard rigid-link model with uniform rods.
    """

    accel_rows = (2, 3)

    def __init__(self, spec: SystemSpec, params: dict):
        self.spec = spec
        self.u_ref = np.zeros(1)
        self.m1 = float(params.get("m1", 1.0))
        self.m2 = float(params.get("m2", 1.0))
        self.l1 = float(params.get("l1", 1.0))
        self.l2 = float(params.get("l2", 1.0))
        self.lc1 = self.l1 / 2.0
        self.lc2 = self.l2 / 2.0
        self.I1 = self.m1 * self.l1 ** 2 / 12.0
        self.I2 = self.m2 * self.l2 ** 2 / 12.0
        # constant terms of the mass matrix / bias vector
        self._a1 = self.I1 + self.I2 + self.m1 * self.lc1 ** 2 + \
            self.m2 * (self.l1 ** 2 + self.lc2 ** 2)
        self._a2 = self.m2 * self.l1 * self.lc2
        self._a3 = self.I2 + self.m2 * self.lc2 ** 2
        self._g1 = (self.m1 * self.lc1 + self.m2 * self.l1) * GRAVITY
        self._g2 = self.m2 * self.lc2 * GRAVITY
        r = float(params.get("link_radius", 0.15))
        self.body_radii = np.full(4, r)

    def _accel_terms(self, q2, w1, w2, tau):
        a1, a2, a3 = self._a1, self._a2, self._a3
        c2, s2 = np.cos(q2), np.sin(q2)
        m00 = a1 + 2.0 * a2 * c2
        m01 = a3 + a2 * c2
        det = m00 * a3 - m01 * m01
        c_bias1 = -a2 * s2 * w2 * (2.0 * w1 + w2)
        c_bias2 = a2 * s2 * w1 * w1
        return c2, s2, m00, m01, det, c_bias1, c_bias2

    def f(self, x, u):
        out = self.f_many(x[None, :], np.atleast_2d(u))
        return out[0]

    def f_many(self, xs, us):
        q1, q2, w1, w2 = xs[:, 0], xs[:, 1], xs[:, 2], xs[:, 3]
        tau = us[:, 0]
        c2, s2, m00, m01, det, cb1, cb2 = self._accel_terms(q2, w1, w2, tau)
        g1 = self._g1 * np.sin(q1) + self._g2 * np.sin(q1 + q2)
        g2 = self._g2 * np.sin(q1 + q2)
        r1 = -cb1 - g1
        r2 = tau - cb2 - g2
        a3 = self._a3
        wd1 = (a3 * r1 - m01 * r2) / det
        wd2 = (-m01 * r1 + m00 * r2) / det
        return np.stack([w1, w2, wd1, wd2], axis=1)

    def f_jac_many(self, xs, us):
        n = len(xs)
        q1, q2, w1, w2 = xs[:, 0], xs[:, 1], xs[:, 2], xs[:, 3]
        tau = us[:, 0]
        a2, a3 = self._a2, self._a3
        c2, s2, m00, m01, det, cb1, cb2 = self._accel_terms(q2, w1, w2, tau)
        s1, c1 = np.sin(q1), np.cos(q1)
        s12, c12 = np.sin(q1 + q2), np.cos(q1 + q2)
        g1 = self._g1 * s1 + self._g2 * s12
        g2 = self._g2 * s12
        rhs = np.stack([-cb1 - g1, tau - cb2 - g2], axis=1)
        # inverse mass matrix rows (2x2 symmetric)
        inv00, inv01, inv11 = a3 / det, -m01 / det, m00 / det
        w_acc1 = inv00 * rhs[:, 0] + inv01 * rhs[:, 1]
        w_acc2 = inv01 * rhs[:, 0] + inv11 * rhs[:, 1]

        def apply_inv(v1, v2):
            return inv00 * v1 + inv01 * v2, inv01 * v1 + inv11 * v2

        # d rhs / d q1  (only gravity depends on q1)
        dg1_q1 = self._g1 * c1 + self._g2 * c12
        dg2_q1 = self._g2 * c12
        dq1_1, dq1_2 = apply_inv(-dg1_q1, -dg2_q1)
        # d rhs / d q2 plus the mass-matrix variation term
        dc1_q2 = -a2 * c2 * w2 * (2.0 * w1 + w2)
        dc2_q2 = a2 * c2 * w1 * w1
        dg_q2 = self._g2 * c12
        dM_w1 = -2.0 * a2 * s2 * w_acc1 - a2 * s2 * w_acc2
        dM_w2 = -a2 * s2 * w_acc1
        dq2_1, dq2_2 = apply_inv(-dc1_q2 - dg_q2 - dM_w1,
                                 -dc2_q2 - dg_q2 - dM_w2)
        # d rhs / d omega
        dc1_w1 = -2.0 * a2 * s2 * w2
        dc2_w1 = 2.0 * a2 * s2 * w1
        dw1_1, dw1_2 = apply_inv(-dc1_w1, -dc2_w1)
        dc1_w2 = -2.0 * a2 * s2 * (w1 + w2)
        dw2_1, dw2_2 = apply_inv(-dc1_w2, np.zeros(n))

        A = np.zeros((n, 4, 4))
        A[:, 0, 2] = 1.0
        A[:, 1, 3] = 1.0
        A[:, 2, 0], A[:, 3, 0] = dq1_1, dq1_2
        A[:, 2, 1], A[:, 3, 1] = dq2_1, dq2_2
        A[:, 2, 2], A[:, 3, 2] = dw1_1, dw1_2
        A[:, 2, 3], A[:, 3, 3] = dw2_1, dw2_2
        B = np.zeros((n, 4, 1))
        B[:, 2, 0] = inv01
        B[:, 3, 0] = inv11
        return A, B

    def collision_bodies(self, states):
        q1 = states[:, 0]
        q12 = states[:, 0] + states[:, 1]
        dir1 = np.stack([np.sin(q1), -np.cos(q1)], axis=1)
        dir2 = np.stack([np.sin(q12), -np.cos(q12)], axis=1)
        elbow = self.l1 * dir1
        return np.stack([
            0.5 * self.l1 * dir1,
            elbow,
            elbow + 0.5 * self.l2 * dir2,
            elbow + self.l2 * dir2,
        ], axis=1)

    def sample_primitive_goal(self, start, horizon, box, rng):
        lo, hi = box
        # joints drift with their rates; deviations bounded by what the
        # elbow torque can do against the passive shoulder
        alpha = np.array([3.0, 10.0])
        dq = start[2:] * horizon * rng.uniform(0.3, 1.0) + \
            alpha * horizon ** 2 * 0.5 * rng.uniform(-1.0, 1.0, 2)
        q_g = wrap_to_pi(start[:2] + dq)
        w_g = np.clip(start[2:] + alpha * horizon * rng.uniform(-0.8, 0.8, 2),
                      lo[2:], hi[2:])
        return np.concatenate([q_g, w_g])


class PlanarRotor(DynamicalSystem):
    """Planar birotor: state (x, z, theta, vx, vz, omega), controls (f1, f2).

    World-frame velocities; thrust acts along the body z-axis and gravity
    pulls straight down.  The per-motor thrust bound comes from the
    configured thrust-to-weight ratio.
    """

    accel_rows = (3, 4, 5)

    def __init__(self, spec: SystemSpec, params: dict):
        self.spec = spec
        self.mass = float(params.get("mass", 0.5))
        self.arm = float(params.get("arm", 0.25))
        self.inertia = float(params.get("inertia", 0.01))
        self.u_ref = np.full(2, self.mass * GRAVITY / 2.0)
        self.body_radii = np.array([float(params.get("radius", 0.25))])

    def f(self, x, u):
        c, s = math.cos(x[2]), math.sin(x[2])
        thrust = (u[0] + u[1]) / self.mass
        return np.array([x[3], x[4], x[5],
                         -thrust * s,
                         thrust * c - GRAVITY,
                         self.arm * (u[0] - u[1]) / self.inertia])

    def f_many(self, xs, us):
        c, s = np.cos(xs[:, 2]), np.sin(xs[:, 2])
        thrust = (us[:, 0] + us[:, 1]) / self.mass
        return np.stack([xs[:, 3], xs[:, 4], xs[:, 5],
                         -thrust * s,
                         thrust * c - GRAVITY,
                         self.arm * (us[:, 0] - us[:, 1]) / self.inertia],
                        axis=1)

    def f_jac_many(self, xs, us):
        n = len(xs)
        c, s = np.cos(xs[:, 2]), np.sin(xs[:, 2])
        thrust = (us[:, 0] + us[:, 1]) / self.mass
        A = np.zeros((n, 6, 6))
        A[:, 0, 3] = 1.0
        A[:, 1, 4] = 1.0
        A[:, 2, 5] = 1.0
        A[:, 3, 2] = -thrust * c
        A[:, 4, 2] = -thrust * s
        B = np.zeros((n, 6, 2))
        B[:, 3, 0] = B[:, 3, 1] = -s / self.mass
        B[:, 4, 0] = B[:, 4, 1] = c / self.mass
        B[:, 5, 0] = self.arm / self.inertia
        B[:, 5, 1] = -self.arm / self.inertia
        return A, B

    def collision_bodies(self, states):
        return states[:, None, :2]

    def sample_primitive_goal(self, start, horizon, box, rng):
        lo, hi = box
        # available accelerations at moderate tilt: lateral ~ g tan(theta),
        # vertical between -g and +(t/w - 1) g
        a_lat = 2.5
        a_up, a_down = 2.0, 4.0
        drift = start[3:5] * horizon * rng.uniform(0.5, 1.0)
        dxy = drift + 0.5 * horizon ** 2 * np.array([
            a_lat * rng.uniform(-1.0, 1.0),
            rng.uniform(-a_down, a_up)])
        v_g = np.clip(start[3:5] + np.array([a_lat, a_up + a_down]) *
                      horizon * rng.uniform(-0.6, 0.6, 2), lo[3:5], hi[3:5])
        theta_g = rng.uniform(-0.5, 0.5)
        w_g = rng.uniform(-1.5, 1.5)
        return np.array([start[0] + dxy[0], start[1] + dxy[1], theta_g,
                         v_g[0], v_g[1], w_g])


class DoubleIntegrator(DynamicalSystem):
    """1-D double integrator (p, v) with acceleration control; test system."""

    accel_rows = (1,)

    def __init__(self, spec: SystemSpec, params: dict):
        self.spec = spec
        self.u_ref = np.zeros(1)
        self.body_radii = np.array([float(params.get("radius", 0.1))])

    def f(self, x, u):
        return np.array([x[1], u[0]])

    def f_many(self, xs, us):
        return np.stack([xs[:, 1], us[:, 0]], axis=1)

    def f_jac_many(self, xs, us):
        n = len(xs)
        A = np.zeros((n, 2, 2))
        A[:, 0, 1] = 1.0
        B = np.zeros((n, 2, 1))
        B[:, 1, 0] = 1.0
        return A, B

    def collision_bodies(self, states):
        pos = np.zeros((len(states), 1, 2))
        pos[:, 0, 0] = states[:, 0]
        return pos


REGISTRY = {
    "unicycle1": Unicycle1,
    "unicycle2": Unicycle2,
    "car_trailer": CarWithTrailer,
    "acrobot": Acrobot,
    "planar_rotor": PlanarRotor,
    "double_integrator": DoubleIntegrator,
}

_cache: dict[str, DynamicalSystem] = {}


def _config_text(name: str) -> str:
    return (resources.files("dbrrt") / "configs" / "systems" /
            f"{name}.yaml").read_text()


def system_names() -> list[str]:
    """Names of the systems shipped with the package."""
    return sorted(REGISTRY)


def make_system(name: str, config_path=None) -> DynamicalSystem:
    """Build a system from its packaged config, or from `config_path`.

    The returned instance carries the full parsed config dict as
    ``system.config`` (planner defaults, primitive-generation settings).
    """
    if config_path is None:
        if name in _cache:
            return _cache[name]
        raw = yaml.safe_load(_config_text(name))
    else:
        raw = yaml.safe_load(open(config_path))
    if raw["name"] not in REGISTRY:
        raise ValueError(f"unknown system '{raw['name']}'")
    d_x = len(raw["distance_weights"])
    spec = SystemSpec(
        name=raw["name"],
        d_x=d_x,
        d_u=len(raw["control_bounds"]["lower"]),
        dt=float(raw["dt"]),
        state_lower=np.array(raw["state_bounds"]["lower"], float),
        state_upper=np.array(raw["state_bounds"]["upper"], float),
        control_lower=np.array(raw["control_bounds"]["lower"], float),
        control_upper=np.array(raw["control_bounds"]["upper"], float),
        distance_weights=np.array(raw["distance_weights"], float),
        angle_mask=np.array(raw["angle_mask"], bool),
        translation_mask=np.array(raw["translation_mask"], bool),
    )
    sys_obj = REGISTRY[raw["name"]](spec, raw.get("params", {}))
    sys_obj.config = raw
    if config_path is None:
        _cache[name] = sys_obj
    return sys_obj
