"""Exact nearest-neighbor queries under the weighted wrapped metric.

A k-d tree cannot index the wrapped angular metric directly, so states are
embedded into Euclidean space with each angle component mapped to its
weighted (cos, sin) pair.  Chord length never exceeds arc length, so the
embedded distance lower-bounds the true metric: a ball query in embedded
space returns a superset of the true ball, which is then filtered with the
exact metric.  Results are therefore identical to a brute-force scan.

The index is incremental: freshly added points are scanned linearly and the
tree is rebuilt once the pending buffer outgrows it.
"""
from __future__ import annotations

import numpy as np
from scipy.spatial import cKDTree


class WeightedStateIndex:
    """Incremental exact index over states (or a component subset thereof).

    Parameters
    ----------
    weights, angle_mask : arrays over the indexed components
        Metric weights and angle flags for the components passed to `add`.
    """

    def __init__(self, weights: np.ndarray, angle_mask: np.ndarray):
        self.weights = np.asarray(weights, dtype=float)
        self.angle_mask = np.asarray(angle_mask, dtype=bool)
        self._sqrt_w = np.sqrt(self.weights)
        self._points: list[np.ndarray] = []
        self._tree: cKDTree | None = None
        self._tree_size = 0
        self._pending: list[np.ndarray] = []

    def __len__(self) -> int:
        return len(self._points)

    @property
    def points(self) -> np.ndarray:
        return np.asarray(self._points)

    def _embed(self, pts: np.ndarray) -> np.ndarray:
        pts = np.atleast_2d(pts)
        cols = []
        for i in range(pts.shape[1]):
            if self.angle_mask[i]:
                cols.append(self._sqrt_w[i] * np.cos(pts[:, i]))
                cols.append(self._sqrt_w[i] * np.sin(pts[:, i]))
            else:
                cols.append(self._sqrt_w[i] * pts[:, i])
        return np.stack(cols, axis=1)

    def _true_dist(self, pts: np.ndarray, q: np.ndarray) -> np.ndarray:
        d = np.atleast_2d(pts) - q
        am = self.angle_mask
        if am.any():
            d[:, am] = np.mod(d[:, am] + np.pi, 2.0 * np.pi) - np.pi
        return np.sqrt((d * d) @ self.weights)

    def add(self, x: np.ndarray) -> int:
        """Insert one point; returns its index."""
        x = np.array(x, dtype=float, copy=True)
        self._points.append(x)
        self._pending.append(x)
        if len(self._pending) > max(32, self._tree_size):
            self._rebuild()
        return len(self._points) - 1

    def add_many(self, xs: np.ndarray) -> None:
        for x in np.atleast_2d(xs):
            self._points.append(np.array(x, dtype=float))
        self._rebuild()

    def _rebuild(self) -> None:
        self._tree = cKDTree(self._embed(np.asarray(self._points)))
        self._tree_size = len(self._points)
        self._pending = []

    def radius(self, x: np.ndarray, r: float) -> np.ndarray:
        """Indices of all points with true distance <= r, ascending order."""
        if not self._points:
            return np.empty(0, dtype=int)
        x = np.asarray(x, dtype=float)
        hits: list[int] = []
        if self._tree is not None:
            e = self._embed(x[None, :])[0]
            cand = self._tree.query_ball_point(e, r * (1.0 + 1e-12) + 1e-12)
            if cand:
                cand = np.asarray(cand, dtype=int)
                pts = np.asarray(self._points)[cand]
                keep = self._true_dist(pts, x) <= r
                hits.extend(cand[keep].tolist())
        if self._pending:
            base = self._tree_size
            pend = np.asarray(self._pending)
            keep = self._true_dist(pend, x) <= r
            hits.extend((base + np.nonzero(keep)[0]).tolist())
        return np.sort(np.asarray(hits, dtype=int))

    def nearest(self, x: np.ndarray):
        """Exact nearest point: returns (index, true distance)."""
        if not self._points:
            return None, np.inf
        x = np.asarray(x, dtype=float)
        best_idx, best_d = -1, np.inf
        if self._pending:
            pend = np.asarray(self._pending)
            d = self._true_dist(pend, x)
            j = int(np.argmin(d))
            best_idx, best_d = self._tree_size + j, float(d[j])
        if self._tree is not None:
            e = self._embed(x[None, :])[0]
            _, i = self._tree.query(e)
            d_i = float(self._true_dist(self._points[i][None, :], x)[0])
            if d_i < best_d:
                best_idx, best_d = int(i), d_i
            # anything truly closer must lie within this embedded radius
            cand = self._tree.query_ball_point(e, best_d * (1.0 + 1e-12) + 1e-12)
            if cand:
                cand = np.asarray(cand, dtype=int)
                dists = self._true_dist(np.asarray(self._points)[cand], x)
                j = int(np.argmin(dists))
                if dists[j] < best_d:
                    best_idx, best_d = int(cand[j]), float(dists[j])
        return best_idx, best_d
