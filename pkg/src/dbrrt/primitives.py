"""Motion primitives: offline generation, storage, adaptation, and query.

A primitive is a short, exactly dynamically feasible state/control segment
of randomized length.  Primitives are generated environment-free by sampling
random boundary states and connecting them with the penalty optimizer, then
re-rolling the optimized controls through `step` so the stored states
satisfy the dynamics to machine precision.  Libraries store primitives in
canonical form (start position translated to the origin) and answer
radius queries after on-the-fly translation to the query state.
"""
from __future__ import annotations

import hashlib
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .dynamics.base import (DynamicalSystem, SystemSpec, distance_many,
                            state_diff, translate_state, wrap_to_pi)
from .nnindex import WeightedStateIndex
from .trajopt import OcpProblem, PenaltyWeights, solve_fddp

FORMAT_MAGIC = "dbprims"
FORMAT_VERSION = 1
REPLAY_TOL = 1e-9


class LibraryError(RuntimeError):
    """Raised when a primitive library file fails validation."""


@dataclass(frozen=True)
class MotionPrimitive:
    """Dynamically feasible segment (states, controls) with time cost."""

    states: np.ndarray      # (N+1, d_x)
    controls: np.ndarray    # (N, d_u)
    cost: float             # seconds, N * dt

    def __post_init__(self):
        states = np.ascontiguousarray(self.states, dtype=float)
        controls = np.ascontiguousarray(self.controls, dtype=float)
        if len(states) != len(controls) + 1 or len(controls) < 1:
            raise ValueError("primitive needs N>=1 controls and N+1 states")
        states.setflags(write=False)
        controls.setflags(write=False)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "controls", controls)

    @property
    def x_s(self) -> np.ndarray:
        return self.states[0]

    @property
    def x_f(self) -> np.ndarray:
        return self.states[-1]

    @property
    def length(self) -> int:
        return len(self.controls)


def replay_defect(sys: DynamicalSystem, m: MotionPrimitive) -> float:
    """Max weighted gap between stored states and a `step` replay."""
    pred = sys.step_many(m.states[:-1], m.controls)
    d = state_diff(sys.spec, pred, m.states[1:])
    return float(np.sqrt((d * d) @ sys.spec.distance_weights).max())


def canonicalize(spec: SystemSpec, m: MotionPrimitive) -> MotionPrimitive:
    """Translate so the position components of the start state are zero."""
    offset = -m.states[0][spec.translation_mask]
    if not offset.any():
        return m
    return MotionPrimitive(translate_state(spec, m.states, offset),
                           m.controls, m.cost)


def translate_primitive(spec: SystemSpec, m: MotionPrimitive,
                        offset: np.ndarray) -> MotionPrimitive:
    """Shift all states by `offset` on the translation components."""
    return MotionPrimitive(translate_state(spec, m.states, offset),
                           m.controls, m.cost)


def reverse(sys: DynamicalSystem, m: MotionPrimitive) -> MotionPrimitive:
    """Reverse state and control order, for backward-tree expansion.

    The result is not forward-feasible; it encodes "replaying the original
    primitive forward from `result.x_f` reaches `result.x_s`".
    """
    return MotionPrimitive(np.ascontiguousarray(m.states[::-1]),
                           np.ascontiguousarray(m.controls[::-1]), m.cost)


# -- generation ----------------------------------------------------------------

def _sample_boundary_pair(sys: DynamicalSystem, box, rng, n_steps: int):
    """Sample (start, goal) states for one two-point boundary value problem."""
    start = sys.sample_primitive_start(box, rng)
    goal = sys.sample_primitive_goal(start, n_steps * sys.spec.dt, box, rng)
    return start, goal


def _interp_warm_start(spec: SystemSpec, x_s, x_g, n_steps: int):
    frac = np.linspace(0.0, 1.0, n_steps + 1)[:, None]
    return x_s + frac * state_diff(spec, x_g, x_s)


def default_generation_box(sys: DynamicalSystem):
    """Sampling box for boundary states.

    Defaults to the state bounds slightly shrunk; a system config may narrow
    it further (``primitives.gen_bounds``), e.g. to keep thrust-limited
    vehicles near recoverable attitudes.  Position components get zero
    extent (starts are canonical); translation happens at query time.
    """
    spec = sys.spec
    rng_ = spec.state_upper - spec.state_lower
    margin = np.where(np.isfinite(rng_), 0.05 * rng_, 0.0)
    lo = np.where(np.isfinite(spec.state_lower), spec.state_lower + margin, 0.0)
    hi = np.where(np.isfinite(spec.state_upper), spec.state_upper - margin, 0.0)
    gen = getattr(sys, "config", {}).get("primitives", {}).get("gen_bounds")
    if gen is not None:
        lo = np.maximum(lo, np.asarray(gen["lower"], float))
        hi = np.minimum(hi, np.asarray(gen["upper"], float))
    lo[spec.translation_mask] = 0.0
    hi[spec.translation_mask] = 0.0
    return lo, hi


def generate_primitive(sys: DynamicalSystem, box, rng: np.random.Generator,
                       length_range: tuple[int, int], *,
                       weights: PenaltyWeights | None = None,
                       goal_tol: float = 0.05) -> MotionPrimitive | None:
    """Attempt one primitive: sample a boundary pair and solve the BVP.

    Returns None when the optimizer fails to connect the pair; failures are
    expected and simply counted by callers (many random boundary pairs have
    no dynamically feasible connection).
    """
    spec = sys.spec
    n_min, n_max = length_range
    if n_min < 1:
        raise ValueError("length_range must start at >= 1")
    n_steps = int(rng.integers(n_min, n_max + 1))
    x_s, x_g = _sample_boundary_pair(sys, box, rng, n_steps)
    prob = OcpProblem(sys, n_steps, x_s, x_g, env=None,
                      weights=weights or PenaltyWeights())
    xs0 = _interp_warm_start(spec, x_s, x_g, n_steps)
    us0 = np.tile(sys.u_ref, (n_steps, 1))
    res = solve_fddp(prob, xs0, us0, max_iters=80, stall_iters=8)
    if not res.converged or res.report.goal_distance > goal_tol:
        return None
    # re-roll the controls so stored states satisfy step() exactly
    states = sys.rollout(res.states[0], res.controls)
    free = ~spec.angle_mask
    if np.any(states[:, free] < spec.state_lower[free]) or \
            np.any(states[:, free] > spec.state_upper[free]):
        return None
    if np.any(res.controls < spec.control_lower) or \
            np.any(res.controls > spec.control_upper):
        return None
    m = MotionPrimitive(states, np.array(res.controls), n_steps * spec.dt)
    return canonicalize(spec, m)


def _generation_batch(args):
    from .dynamics.systems import make_system
    name, seed, attempts, length_range, goal_tol = args
    sys = make_system(name)
    box = default_generation_box(sys)
    out = []
    for i in attempts:
        rng = np.random.default_rng([seed, i])
        m = generate_primitive(sys, box, rng, length_range, goal_tol=goal_tol)
        out.append((i, m))
    return out


def generate_library(sys: DynamicalSystem, count: int, seed: int, *,
                     length_range: tuple[int, int] | None = None,
                     goal_tol: float = 0.05, workers: int | None = None,
                     max_attempts: int | None = None) -> list[MotionPrimitive]:
    """Generate `count` primitives; deterministic for a given seed.

    Attempts are independently seeded by index, so results do not depend on
    worker scheduling.
    """
    if length_range is None:
        length_range = tuple(sys.config["primitives"]["length_range"])
    max_attempts = max_attempts or count * 40
    accepted: dict[int, MotionPrimitive] = {}
    chunk = 32
    next_attempt = 0

    def batches():
        nonlocal next_attempt
        while next_attempt < max_attempts:
            rng_ids = range(next_attempt, min(next_attempt + chunk, max_attempts))
            next_attempt += chunk
            yield (sys.spec.name, seed, list(rng_ids), length_range, goal_tol)

    gen = batches()
    if workers and workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            pending = []
            for _ in range(workers * 2):
                args = next(gen, None)
                if args is not None:
                    pending.append(pool.submit(_generation_batch, args))
            while pending and len(accepted) < count:
                fut = pending.pop(0)
                for i, m in fut.result():
                    if m is not None:
                        accepted[i] = m
                args = next(gen, None)
                if args is not None:
                    pending.append(pool.submit(_generation_batch, args))
    else:
        for args in gen:
            for i, m in _generation_batch(args):
                if m is not None:
                    accepted[i] = m
            if len(accepted) >= count:
                break
    if len(accepted) < count:
        raise LibraryError(
            f"generated only {len(accepted)}/{count} primitives in "
            f"{max_attempts} attempts")
    ordered = [accepted[i] for i in sorted(accepted)[:count]]
    return ordered


# -- storage --------------------------------------------------------------------

def _payload_checksum(lengths, states, controls) -> str:
    h = hashlib.sha256()
    h.update(lengths.tobytes())
    h.update(states.tobytes())
    h.update(controls.tobytes())
    return h.hexdigest()


def save_library(path, sys: DynamicalSystem,
                 primitives: list[MotionPrimitive]) -> None:
    """Write the versioned binary library format (see README)."""
    lengths = np.array([m.length for m in primitives], dtype=np.int64)
    states = np.concatenate([m.states for m in primitives], axis=0)
    controls = np.concatenate([m.controls for m in primitives], axis=0)
    checksum = _payload_checksum(lengths, states, controls)
    header = (f"{FORMAT_MAGIC} {FORMAT_VERSION} {sys.spec.name} "
              f"{len(primitives)} {sys.spec.dt!r} {checksum}\n")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as fh:
        fh.write(header.encode("ascii"))
        np.save(fh, lengths)
        np.save(fh, states)
        np.save(fh, controls)


def load_library(path, sys: DynamicalSystem, *,
                 validate: bool = True) -> list[MotionPrimitive]:
    """Read a library file; validation of every invariant is mandatory.

    Checks the header, the payload checksum, exact replay feasibility
    (defect <= 1e-9), and state/control bounds; raises `LibraryError` on
    any mismatch.
    """
    spec = sys.spec
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").split()
        if len(header) != 6 or header[0] != FORMAT_MAGIC:
            raise LibraryError(f"{path}: not a primitive library file")
        if int(header[1]) != FORMAT_VERSION:
            raise LibraryError(f"{path}: unsupported version {header[1]}")
        if header[2] != spec.name:
            raise LibraryError(
                f"{path}: library is for system '{header[2]}', not '{spec.name}'")
        count = int(header[3])
        if float(header[4]) != spec.dt:
            raise LibraryError(f"{path}: dt mismatch ({header[4]} != {spec.dt})")
        lengths = np.load(fh)
        states = np.load(fh)
        controls = np.load(fh)
    if header[5] != _payload_checksum(lengths, states, controls):
        raise LibraryError(f"{path}: checksum mismatch (corrupt payload)")
    if len(lengths) != count:
        raise LibraryError(f"{path}: header count disagrees with payload")
    prims = []
    s_off = c_off = 0
    for n in lengths:
        n = int(n)
        prims.append(MotionPrimitive(states[s_off:s_off + n + 1],
                                     controls[c_off:c_off + n],
                                     n * spec.dt))
        s_off += n + 1
        c_off += n
    if s_off != len(states) or c_off != len(controls):
        raise LibraryError(f"{path}: payload sizes disagree with lengths")
    if validate:
        validate_primitives(sys, prims)
    return prims


def validate_primitives(sys: DynamicalSystem,
                        prims: list[MotionPrimitive]) -> None:
    """Re-check feasibility invariants of every primitive; raise on failure."""
    spec = sys.spec
    if not prims:
        raise LibraryError("empty primitive list")
    all_prev = np.concatenate([m.states[:-1] for m in prims])
    all_next = np.concatenate([m.states[1:] for m in prims])
    all_u = np.concatenate([m.controls for m in prims])
    pred = sys.step_many(all_prev, all_u)
    d = state_diff(spec, pred, all_next)
    defect = float(np.sqrt((d * d) @ spec.distance_weights).max())
    if defect > REPLAY_TOL:
        raise LibraryError(f"replay defect {defect:.2e} exceeds {REPLAY_TOL}")
    if np.any(all_u < spec.control_lower) or np.any(all_u > spec.control_upper):
        raise LibraryError("controls outside bounds")
    free = ~spec.angle_mask
    all_states = np.concatenate([m.states for m in prims])
    if np.any(all_states[:, free] < spec.state_lower[free]) or \
            np.any(all_states[:, free] > spec.state_upper[free]):
        raise LibraryError("states outside bounds")


# -- library with query index -----------------------------------------------------

class PrimitiveLibrary:
    """Indexed, canonical set of primitives for one system.

    `nearest_r` returns translated copies whose start state lies within the
    query radius of the query state under the weighted wrapped metric; the
    spatial index is conservative and results match a brute-force scan
    exactly.
    """

    def __init__(self, sys: DynamicalSystem, primitives: list[MotionPrimitive],
                 *, subset_order: np.ndarray | None = None):
        self.sys = sys
        self.spec = sys.spec
        self.primitives = [canonicalize(sys.spec, m) for m in primitives]
        # order used by choose/increase so growth yields supersets
        self.subset_order = subset_order
        mask = ~self.spec.translation_mask
        self._free_mask = mask
        self._index = WeightedStateIndex(self.spec.distance_weights[mask],
                                         self.spec.angle_mask[mask])
        if self.primitives:
            starts = np.stack([m.x_s for m in self.primitives])
            self._index.add_many(starts[:, mask])

    def __len__(self) -> int:
        return len(self.primitives)

    def nearest_r(self, x: np.ndarray, delta: float) -> list[MotionPrimitive]:
        """All primitives within `delta` of `x` after translation to `x`.

        Translation makes the position components match exactly, so the
        threshold acts on the remaining components.
        """
        if delta <= 0:
            raise ValueError("delta must be positive")
        x = np.asarray(x, dtype=float)
        ids = self._index.radius(x[self._free_mask], delta)
        offset = x[self.spec.translation_mask]
        return [translate_primitive(self.spec, self.primitives[i], offset)
                for i in ids]

    def candidate_ids(self, x: np.ndarray, delta: float) -> np.ndarray:
        """Indices of applicable primitives (used by the search internals)."""
        return self._index.radius(np.asarray(x, float)[self._free_mask], delta)

    def translated(self, i: int, x: np.ndarray) -> MotionPrimitive:
        return translate_primitive(self.spec, self.primitives[i],
                                   np.asarray(x, float)[self.spec.translation_mask])


def reverse_library(lib: PrimitiveLibrary) -> PrimitiveLibrary:
    """Library of reversed primitives for backward-tree expansion."""
    rev = [reverse(lib.sys, m) for m in lib.primitives]
    return PrimitiveLibrary(lib.sys, rev)


def choose_primitives(full: PrimitiveLibrary, n: int,
                      rng: np.random.Generator) -> PrimitiveLibrary:
    """Random subset of size n; deterministic under the caller's rng."""
    total = len(full)
    if n > total:
        warnings.warn(f"requested {n} primitives but library has {total}; "
                      "using all of them")
        n = total
    order = rng.permutation(total)
    prims = [full.primitives[i] for i in order[:n]]
    return PrimitiveLibrary(full.sys, prims, subset_order=order)


def increase_primitives(current: PrimitiveLibrary, full: PrimitiveLibrary,
                        rate: float) -> PrimitiveLibrary:
    """Grow the subset geometrically; returns a superset of `current`."""
    if rate <= 1.0:
        raise ValueError("growth rate must be > 1")
    order = current.subset_order
    if order is None:
        order = np.arange(len(full))
    n_new = min(len(full), int(np.ceil(len(current) * rate)))
    prims = [full.primitives[i] for i in order[:n_new]]
    return PrimitiveLibrary(full.sys, prims, subset_order=order)


def ensure_library(sys: DynamicalSystem, count: int, seed: int,
                   cache_dir, *, workers: int | None = None) -> list[MotionPrimitive]:
    """Load a cached library file, generating (and caching) it if missing."""
    cache_dir = Path(cache_dir)
    path = cache_dir / f"{sys.spec.name}_n{count}_s{seed}.prims"
    if path.exists():
        return load_library(path, sys)
    prims = generate_library(sys, count, seed, workers=workers)
    save_library(path, sys, prims)
    return prims
