"""Discontinuity-bounded RRT over motion primitives.

The tree grows by appending precomputed primitives whose (translated) start
state lies within `delta` of the expanded node under the weighted metric;
the resulting trajectory violates the dynamics by at most `delta` at each
primitive junction and at both endpoints, which the trajectory optimizer
later repairs.  Expansion toward the goal picks the applicable primitive
ending closest to the target (focused); expansion toward random samples
picks a random collision-free one.  A bidirectional variant grows a second
tree from the goal using reversed primitives and joins the trees when two
nodes come within `delta`.
"""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from .collision import Environment, is_motion_free, is_state_free
from .dynamics.base import (SystemSpec, distance, normalize_state,
                            sample_uniform_state, state_diff)
from .nnindex import WeightedStateIndex
from .primitives import MotionPrimitive, PrimitiveLibrary, reverse


@dataclass
class SearchParams:
    """Knobs of one Db-RRT invocation."""

    goal_bias: float = 0.1
    max_iters: int = 2_000_000
    time_budget: float = float("inf")   # seconds
    goal_tolerance: float | None = None  # defaults to delta
    inflation: float = 0.0               # extra body radius during search


@dataclass
class DbSolution:
    """Discontinuity-bounded trajectory: K+1 states, K controls.

    ``defects[k]`` is the weighted metric gap d(x_{k+1}, step(x_k, u_k));
    within a primitive it is ~0 and at junctions it is at most
    ``delta_used``.
    """

    states: np.ndarray
    controls: np.ndarray
    delta_used: float
    defects: np.ndarray
    start_distance: float
    goal_distance: float

    @property
    def max_defect(self) -> float:
        return float(self.defects.max()) if len(self.defects) else 0.0


@dataclass
class SearchResult:
    """Outcome of a search: a solution or a timeout, plus tree statistics."""

    solution: DbSolution | None
    iterations: int
    expansions: int
    n_nodes: int
    wall_time: float

    @property
    def solved(self) -> bool:
        return self.solution is not None


class SearchTree:
    """Append-only RRT tree with an exact weighted-metric node index."""

    def __init__(self, spec: SystemSpec, root: np.ndarray,
                 direction: str = "forward"):
        self.spec = spec
        self.direction = direction
        self.states: list[np.ndarray] = []
        self.parents: list[int] = []
        self.primitives: list[MotionPrimitive | None] = []
        self._index = WeightedStateIndex(spec.distance_weights, spec.angle_mask)
        self.add(normalize_state(spec, np.asarray(root, float)), -1, None)

    def __len__(self) -> int:
        return len(self.states)

    def add(self, state, parent: int, primitive: MotionPrimitive | None) -> int:
        self.states.append(np.asarray(state, float))
        self.parents.append(parent)
        self.primitives.append(primitive)
        return self._index.add(state)

    def nearest(self, x) -> tuple[int, float]:
        return self._index.nearest(x)

    def nearest_distance(self, x) -> float:
        return self._index.nearest(x)[1]

    def chain(self, leaf: int) -> list[MotionPrimitive]:
        """Incoming primitives from the root to `leaf`, in root-first order."""
        prims = []
        i = leaf
        while self.parents[i] != -1:
            prims.append(self.primitives[i])
            i = self.parents[i]
        prims.reverse()
        return prims


def traceback(tree: SearchTree, leaf: int):
    """Concatenate the primitives along the root -> leaf branch.

    Every primitive contributes its full state sequence, so both junction
    states are kept (the <= delta discontinuities are preserved, not
    smoothed).  A root leaf yields its single state and no controls.
    """
    prims = tree.chain(leaf)
    if not prims:
        return tree.states[leaf][None, :].copy(), np.zeros((0, 0))
    states = np.concatenate([m.states for m in prims], axis=0)
    controls = np.concatenate([m.controls for m in prims], axis=0)
    return states, controls


# -- expansion ----------------------------------------------------------------

def expand_db_focused(x_o, x_t, env: Environment, lib: PrimitiveLibrary,
                      delta: float, rng: np.random.Generator,
                      inflate: float = 0.0):
    """Best applicable primitive: collision-free, end state closest to x_t.

    Candidates are scanned in ascending end-state distance so the first
    collision-free one is exactly the argmin.  Returns (x_new, primitive)
    or None when no applicable primitive is collision-free.
    """
    sys = lib.sys
    spec = lib.spec
    ids = lib.candidate_ids(x_o, delta)
    if not len(ids):
        return None
    x_o = np.asarray(x_o, float)
    offset = x_o[spec.translation_mask]
    ends = np.stack([lib.primitives[i].x_f for i in ids])
    ends[:, spec.translation_mask] += offset
    d = state_diff(spec, ends, np.asarray(x_t, float))
    dists = np.sqrt((d * d) @ spec.distance_weights)
    for j in np.argsort(dists, kind="stable"):
        m = lib.translated(int(ids[j]), x_o)
        if is_motion_free(env, sys, m.states, inflate):
            return m.x_f.copy(), m
    return None


def expand_db_randomized(x_o, x_t, env: Environment, lib: PrimitiveLibrary,
                         delta: float, rng: np.random.Generator,
                         inflate: float = 0.0):
    """First collision-free primitive in a uniformly random candidate order.

    The target `x_t` is ignored; the signature mirrors the focused variant.
    """
    sys = lib.sys
    ids = lib.candidate_ids(x_o, delta)
    if not len(ids):
        return None
    x_o = np.asarray(x_o, float)
    for j in rng.permutation(len(ids)):
        m = lib.translated(int(ids[j]), x_o)
        if is_motion_free(env, sys, m.states, inflate):
            return m.x_f.copy(), m
    return None


# -- solution assembly ----------------------------------------------------------

def _solution_from_chain(sys, env, prims: list[MotionPrimitive],
                         x_s, x_g, delta: float,
                         fallback_state=None) -> DbSolution:
    """Merge a primitive chain into the (K+1, K) discontinuity-bounded form.

    At each junction the earlier primitive's final state is dropped: the
    step from its second-to-last state under its last control lands exactly
    on that dropped state, so the recorded defect equals the junction
    discontinuity, which the expansion bounded by delta.
    """
    spec = sys.spec
    if not prims:
        states = np.asarray(fallback_state, float)[None, :].copy()
        controls = np.zeros((0, spec.d_u))
        defects = np.zeros(0)
    else:
        parts = [m.states[:-1] for m in prims[:-1]] + [prims[-1].states]
        states = np.concatenate(parts, axis=0)
        controls = np.concatenate([m.controls for m in prims], axis=0)
        pred = sys.step_many(states[:-1], controls)
        d = state_diff(spec, pred, states[1:])
        defects = np.sqrt((d * d) @ spec.distance_weights)
    return DbSolution(
        states=states,
        controls=controls,
        delta_used=delta,
        defects=defects,
        start_distance=distance(spec, states[0], x_s),
        goal_distance=distance(spec, states[-1], x_g),
    )


def _sample_free(spec, env, sys, rng, inflate, tries: int = 100):
    for _ in range(tries):
        x = sample_uniform_state(spec, rng)
        if is_state_free(env, sys, x, inflate):
            return x
    return x


# -- planners -------------------------------------------------------------------

def db_rrt(x_s, x_g, env: Environment, lib: PrimitiveLibrary, delta: float,
           params: SearchParams, rng: np.random.Generator,
           spec: SystemSpec | None = None) -> SearchResult:
    """Forward Db-RRT; returns a solution or a timeout with statistics.

    `spec` may carry problem-specific sampling bounds (positions boxed to
    the workspace); it defaults to the system spec.
    """
    sys = lib.sys
    spec = spec or sys.spec
    t0 = time.monotonic()
    deadline = t0 + params.time_budget
    goal_tol = params.goal_tolerance if params.goal_tolerance is not None else delta
    x_s = normalize_state(spec, np.asarray(x_s, float))
    x_g = normalize_state(spec, np.asarray(x_g, float))
    tree = SearchTree(spec, x_s)
    if distance(spec, x_s, x_g) < goal_tol:
        sol = _solution_from_chain(sys, env, [], x_s, x_g, delta,
                                   fallback_state=x_s)
        return SearchResult(sol, 0, 0, 1, time.monotonic() - t0)
    iters = expansions = 0
    while iters < params.max_iters and time.monotonic() < deadline:
        iters += 1
        to_goal = rng.random() < params.goal_bias
        x_rand = x_g if to_goal else _sample_free(spec, env, sys, rng,
                                                  params.inflation)
        near, _ = tree.nearest(x_rand)
        expand = expand_db_focused if to_goal else expand_db_randomized
        got = expand(tree.states[near], x_rand, env, lib, delta, rng,
                     params.inflation)
        if got is None:
            continue
        x_new, m = got
        expansions += 1
        if distance(spec, x_new, x_g) < goal_tol:
            leaf = tree.add(x_new, near, m)
            sol = _solution_from_chain(sys, env, tree.chain(leaf), x_s, x_g,
                                       delta)
            return SearchResult(sol, iters, expansions, len(tree),
                                time.monotonic() - t0)
        if tree.nearest_distance(x_new) > delta:
            tree.add(x_new, near, m)
    return SearchResult(None, iters, expansions, len(tree),
                        time.monotonic() - t0)


def db_rrt_connect(x_s, x_g, env: Environment, lib_fwd: PrimitiveLibrary,
                   lib_bwd: PrimitiveLibrary, delta: float,
                   params: SearchParams, rng: np.random.Generator,
                   spec: SystemSpec | None = None) -> SearchResult:
    """Bidirectional Db-RRT: forward tree from the start, backward tree from
    the goal on reversed primitives, joined when two nodes are within delta.

    Trees alternate strictly; a connection is attempted after every
    successful extension against the other tree's nearest node.
    """
    sys = lib_fwd.sys
    spec = spec or sys.spec
    t0 = time.monotonic()
    deadline = t0 + params.time_budget
    goal_tol = params.goal_tolerance if params.goal_tolerance is not None else delta
    x_s = normalize_state(spec, np.asarray(x_s, float))
    x_g = normalize_state(spec, np.asarray(x_g, float))
    if distance(spec, x_s, x_g) < goal_tol:
        sol = _solution_from_chain(sys, env, [], x_s, x_g, delta,
                                   fallback_state=x_s)
        return SearchResult(sol, 0, 0, 2, time.monotonic() - t0)
    fwd = SearchTree(spec, x_s, "forward")
    bwd = SearchTree(spec, x_g, "backward")
    libs = {id(fwd): lib_fwd, id(bwd): lib_bwd}
    roots = {id(fwd): x_g, id(bwd): x_s}   # expansion targets under goal bias
    iters = expansions = 0
    while iters < params.max_iters and time.monotonic() < deadline:
        iters += 1
        active, other = (fwd, bwd) if iters % 2 else (bwd, fwd)
        to_root = rng.random() < params.goal_bias
        x_rand = roots[id(active)] if to_root else _sample_free(
            spec, env, sys, rng, params.inflation)
        near, _ = active.nearest(x_rand)
        expand = expand_db_focused if to_root else expand_db_randomized
        got = expand(active.states[near], x_rand, env, libs[id(active)],
                     delta, rng, params.inflation)
        if got is None:
            continue
        x_new, m = got
        expansions += 1
        j, dj = other.nearest(x_new)
        if dj <= goal_tol:
            leaf = active.add(x_new, near, m)
            if active is fwd:
                fwd_chain, bwd_chain = fwd.chain(leaf), bwd.chain(j)
            else:
                fwd_chain, bwd_chain = fwd.chain(j), bwd.chain(leaf)
            segments = fwd_chain + [reverse(sys, r) for r in reversed(bwd_chain)]
            sol = _solution_from_chain(sys, env, segments, x_s, x_g, delta,
                                       fallback_state=x_s)
            return SearchResult(sol, iters, expansions, len(fwd) + len(bwd),
                                time.monotonic() - t0)
        if active.nearest_distance(x_new) > delta:
            active.add(x_new, near, m)
    return SearchResult(None, iters, expansions, len(fwd) + len(bwd),
                        time.monotonic() - t0)
