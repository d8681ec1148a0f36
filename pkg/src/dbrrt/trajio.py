"""Trajectory dump format shared by the search, optimizer, CLI and plots.

A dump is a YAML mapping with the trajectory arrays plus enough metadata to
re-validate it.  `wall_time` is a timing field: reruns with the same seed
reproduce every other field bit-for-bit.
"""
from __future__ import annotations

import numpy as np
import yaml

FORMAT = "dbrrt-trajectory"
VERSION = 1
TIMING_FIELDS = ("wall_time",)


def write_trajectory(path, *, system: str, dt: float, states, controls,
                     defects=None, delta: float | None = None,
                     seed: int | None = None, wall_time: float | None = None,
                     solved: bool | None = None, extra: dict | None = None):
    """Write a trajectory dump; see README for the schema."""
    states = np.asarray(states, float)
    controls = np.asarray(controls, float)
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "system": system,
        "dt": float(dt),
        "delta": None if delta is None else float(delta),
        "seed": seed,
        "solved": solved,
        "cost": float(len(controls) * dt),
        "wall_time": None if wall_time is None else float(wall_time),
        "states": [[float(v) for v in row] for row in states],
        "controls": [[float(v) for v in row] for row in controls],
        "defects": (None if defects is None
                    else [float(v) for v in np.asarray(defects)]),
    }
    if extra:
        doc.update(extra)
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=True)


def read_trajectory(path) -> dict:
    """Read a dump; states/controls/defects come back as numpy arrays."""
    with open(path) as fh:
        doc = yaml.safe_load(fh)
    if doc.get("format") != FORMAT:
        raise ValueError(f"{path}: not a trajectory dump")
    doc["states"] = np.asarray(doc["states"], float)
    controls = doc.get("controls") or []
    d_u = len(controls[0]) if controls else 0
    doc["controls"] = np.asarray(controls, float).reshape(len(controls), d_u)
    if doc.get("defects") is not None:
        doc["defects"] = np.asarray(doc["defects"], float)
    return doc


def strip_timing(doc: dict) -> dict:
    """Copy of a parsed dump without its timing fields (for comparisons)."""
    return {k: v for k, v in doc.items() if k not in TIMING_FIELDS}
