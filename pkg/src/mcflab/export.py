"""Trajectory export: numbered OFF snapshots, a JSON manifest, and a CSV time series.

Layout of a trajectory directory::

    snap_00000.off  snap_00001.off  ...
    trajectory.json   {"times": [...], "K_used": ..., "ambient": {...},
                       "termination": {...}, "config": {...}, "files": [...]}
    series.csv        t,area,diameter,max_A,diameter_ratio

``diameter_ratio`` is diam / sqrt(t_est - t) and is left empty when the flow
has no extinction estimate or the snapshot is at or past it. Floats are
written with ``repr`` so files are byte-stable across runs.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .ambient import ambient_from_spec
from .errors import MeshFormatError
from .flow import FlowConfig, FlowTrajectory, Termination
from .geometry import diameter
from .meshio import read_off, write_off


def series_rows(traj: FlowTrajectory) -> list[list]:
    t_est = traj.termination.t_est if traj.termination is not None else None
    rows = []
    for t, m in zip(traj.times, traj.meshes):
        d = diameter(m.vertices)
        ratio = ""
        if t_est is not None and math.isfinite(t_est) and t < t_est:
            ratio = repr(d / math.sqrt(t_est - t))
        rows.append([repr(float(t)), repr(m.area), repr(d), repr(float(m.second_fundamental_norm.max())), ratio])
    return rows


def write_series_csv(traj: FlowTrajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["t", "area", "diameter", "max_A", "diameter_ratio"])
        wr.writerows(series_rows(traj))


def save_trajectory(traj: FlowTrajectory, directory) -> Path:
    out = Path(directory)
    out.mkdir(parents=True, exist_ok=True)
    files = []
    for i, m in enumerate(traj.meshes):
        name = f"snap_{i:05d}.off"
        write_off(m, out / name)
        files.append(name)
    manifest = {
        "times": [float(t) for t in traj.times],
        "K_used": float(traj.K_used),
        "ambient": traj.ambient.describe(),
        "termination": None if traj.termination is None else traj.termination.as_dict(),
        "config": None if traj.config is None else asdict(traj.config),
        "files": files,
    }
    (out / "trajectory.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    write_series_csv(traj, out / "series.csv")
    return out


def load_trajectory(directory) -> FlowTrajectory:
    src = Path(directory)
    try:
        manifest = json.loads((src / "trajectory.json").read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise MeshFormatError(f"{src}: unreadable trajectory manifest ({exc})") from exc
    meshes = [read_off(src / name) for name in manifest["files"]]
    # share one topology cache across snapshots
    meshes = [meshes[0]] + [meshes[0].with_vertices(m.vertices) for m in meshes[1:]]
    term = None
    if manifest.get("termination"):
        d = manifest["termination"]
        point = None if d.get("point") is None else np.array(d["point"])
        term = Termination(d["cause"], d.get("t_est"), point, error=d.get("error"))
    config = FlowConfig(**manifest["config"]) if manifest.get("config") else None
    return FlowTrajectory(
        manifest["times"], meshes, ambient_from_spec(manifest["ambient"]), manifest["K_used"], term, config
    )
