"""Config-driven command line driver.

    mcflab <command> --config <path> [--out <dir>] [--seed <n>]

Commands: flow, entropy, verify, rescale, piecewise. The config is a YAML
mapping; every section and key is checked and unknown keys are fatal.
Exit codes: 0 success, 2 input error, 3 numerical failure, 4 a selected
verification failed.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import json
import logging
import math
import sys
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np
import yaml

from . import __version__
from .ambient import Euclidean, ambient_from_spec
from .errors import InputError, MCFLabError, NumericalError, ParseError, ValidationError
from .export import load_trajectory, save_trajectory, write_series_csv
from .flow import FlowConfig, rescale_trajectory, run_flow
from .functionals import EntropyOptions, entropy, export_F_grid
from .geometry import TriMesh
from .harness import (
    ClassifierThresholds,
    PiecewiseBudget,
    classify_extinction,
    piecewise_flow,
    verify_almost_mono_u,
    verify_entropy_almost_mono,
    verify_huisken,
    verify_J_monotone,
    volume_ratio_bound,
    write_summary_csv,
)
from .meshio import read_mesh
from .shapes import make_mesh

logger = logging.getLogger("mcflab")

COMMANDS = ("flow", "entropy", "verify", "rescale", "piecewise")
EXIT_OK, EXIT_INPUT, EXIT_NUMERICAL, EXIT_VERIFY = 0, 2, 3, 4

_TOP_KEYS = {
    "command", "mesh", "ambient", "flow", "entropy", "verify", "rescale",
    "piecewise", "functional_grid", "trajectory", "output", "seed",
}
_MESH_KINDS = {
    "icosphere": {"subdivisions", "radius", "center", "dim"},
    "ellipsoid": {"subdivisions", "axes", "center"},
    "torus": {"major", "minor", "n_major", "n_minor"},
    "geodesic_sphere_s3": {"geodesic_radius", "subdivisions", "rho"},
    "clifford_torus": {"r1", "r2", "n1", "n2"},
}
_VERIFY_KEYS = {
    "huisken": {"centers", "times", "rel_tol"},
    "J_monotone": {"points", "rel_tol", "K"},
    "almost_mono_u": {"points", "C", "tau", "tol", "pairs"},
    "entropy_almost_mono": {"epsilon0", "tau", "max_snapshots"},
    "volume_ratio": {"radii", "centers", "n_centers", "S", "T"},
    "classify": {"window", "residual", "fit"},
}
_RESCALE_KEYS = {"x0", "t0", "c", "s_window"}
_PIECEWISE_KEYS = {"epsilon", "max_replacements", "window", "provider"}
_PROVIDER_KEYS = {"kind", "amplitude"}
_GRID_KEYS = {"centers", "t0"}


@dataclass
class RunConfig:
    command: str
    mesh: dict | None = None
    ambient: dict = field(default_factory=lambda: {"kind": "euclidean"})
    flow: FlowConfig = field(default_factory=FlowConfig)
    entropy: EntropyOptions = field(default_factory=EntropyOptions)
    verify: dict = field(default_factory=dict)
    rescale: dict = field(default_factory=dict)
    piecewise: dict = field(default_factory=dict)
    functional_grid: dict | None = None
    trajectory: str | None = None
    output: str = "mcflab_out"
    seed: int = 0
    base_dir: str = "."

    def as_dict(self):
        d = asdict(self)
        d.pop("base_dir")
        return d


# parsing -------------------------------------------------------------------


def _unknown(section: dict, allowed: set, where: str):
    extra = sorted(set(section) - allowed)
    if extra:
        raise ParseError(f"unknown key(s) {extra} in {where}")


def _mapping(value, where: str) -> dict:
    if value is None:
        return {}
    if not isinstance(value, dict):
        raise ValidationError(where, "must be a mapping")
    return value


def _number(value, where: str, positive: bool = False, integer: bool = False):
    if isinstance(value, str):
        # YAML 1.1 reads exponent literals without a dot, like 1e-3, as strings
        try:
            value = float(value)
        except ValueError:
            pass
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ValidationError(where, f"expected a number, got {value!r}")
    if integer and int(value) != value:
        raise ValidationError(where, "expected an integer")
    if not math.isfinite(value):
        raise ValidationError(where, "must be finite")
    if positive and value <= 0:
        raise ValidationError(where, f"must be positive, got {value}")
    return int(value) if integer else float(value)


def _points(value, where: str) -> list:
    if not isinstance(value, list) or not value:
        raise ValidationError(where, "expected a non-empty list")
    out = []
    for i, item in enumerate(value):
        if not isinstance(item, list):
            raise ValidationError(f"{where}[{i}]", "expected a coordinate list")
        out.append([_number(c, f"{where}[{i}]") for c in item])
    return out


def _dataclass_section(cls, raw: dict, where: str, overrides: dict | None = None):
    names = {f.name for f in fields(cls)}
    _unknown(raw, names, where)
    kwargs = dict(raw)
    kwargs.update(overrides or {})
    for f in fields(cls):
        if f.name in kwargs and f.type in ("float", "int"):
            kwargs[f.name] = _number(kwargs[f.name], f"{where}.{f.name}", integer=f.type == "int")
    try:
        return cls(**kwargs)
    except InputError as exc:
        raise ValidationError(where, str(exc)) from exc


def _spacetime_list(value, where: str) -> list:
    if not isinstance(value, list) or not value:
        raise ValidationError(where, "expected a non-empty list of {x0, t0}")
    out = []
    for i, item in enumerate(value):
        item = _mapping(item, f"{where}[{i}]")
        _unknown(item, {"x0", "t0"}, f"{where}[{i}]")
        if "x0" not in item or "t0" not in item:
            raise ValidationError(f"{where}[{i}]", "needs x0 and t0")
        out.append({"x0": _points([item["x0"]], f"{where}[{i}].x0")[0], "t0": _number(item["t0"], f"{where}[{i}].t0", positive=True)})
    return out


def parse_config(text: str, base_dir=".", command: str | None = None, seed: int | None = None) -> RunConfig:
    """Parse and validate a YAML run configuration.

    ``command`` and ``seed`` come from the command line and take part in
    validation; a config naming a different command is rejected.
    """
    try:
        raw = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        pos = f" at line {mark.line + 1}, column {mark.column + 1}" if mark is not None else ""
        raise ParseError(f"malformed config{pos}: {getattr(exc, 'problem', exc)}") from exc
    if raw is None:
        raw = {}
    if not isinstance(raw, dict):
        raise ParseError("config must be a mapping at the top level")
    _unknown(raw, _TOP_KEYS, "config")
    named = raw.get("command")
    if named is not None and command is not None and named != command:
        raise ValidationError("command", f"config says {named!r} but the command line says {command!r}")
    command = command or named
    if command not in COMMANDS:
        raise ValidationError("command", f"must be one of {COMMANDS}")
    cfg = RunConfig(command=command, base_dir=str(base_dir))

    if "mesh" in raw:
        mesh = _mapping(raw["mesh"], "mesh")
        if "path" in mesh:
            _unknown(mesh, {"path"}, "mesh")
            path = Path(base_dir) / str(mesh["path"])
            if not path.exists():
                raise ValidationError("mesh.path", f"file not found: {path}")
        else:
            kind = mesh.get("kind")
            if kind not in _MESH_KINDS:
                raise ValidationError("mesh.kind", f"must be one of {sorted(_MESH_KINDS)} or give mesh.path")
            _unknown(mesh, _MESH_KINDS[kind] | {"kind"}, "mesh")
        cfg.mesh = mesh

    if "ambient" in raw:
        amb = _mapping(raw["ambient"], "ambient")
        try:
            ambient_from_spec(amb)
        except InputError as exc:
            if "unknown ambient parameters" in str(exc):
                raise ParseError(f"ambient: {exc}") from exc
            raise ValidationError("ambient", str(exc)) from exc
        cfg.ambient = amb

    cfg.flow = _dataclass_section(FlowConfig, _mapping(raw.get("flow"), "flow"), "flow")

    if seed is not None:
        cfg.seed = int(seed)
    elif "seed" in raw:
        cfg.seed = _number(raw["seed"], "seed", integer=True)
    ent_raw = _mapping(raw.get("entropy"), "entropy")
    if "seed" in ent_raw:
        raise ParseError("entropy.seed is set by the top-level seed")
    cfg.entropy = _dataclass_section(EntropyOptions, ent_raw, "entropy", {"seed": cfg.seed})

    ver = _mapping(raw.get("verify"), "verify")
    _unknown(ver, set(_VERIFY_KEYS), "verify")
    checks = {}
    for name, params in ver.items():
        params = _mapping(params, f"verify.{name}")
        _unknown(params, _VERIFY_KEYS[name], f"verify.{name}")
        clean = {}
        for key, value in params.items():
            where = f"verify.{name}.{key}"
            if key in ("centers",):
                clean[key] = _points(value, where)
            elif key == "points":
                clean[key] = _spacetime_list(value, where)
            elif key in ("times", "radii"):
                if not isinstance(value, list) or not value:
                    raise ValidationError(where, "expected a non-empty list")
                clean[key] = [_number(v, where, positive=True) for v in value]
            elif key == "pairs":
                if value not in ("all", "adjacent"):
                    raise ValidationError(where, "must be 'all' or 'adjacent'")
                clean[key] = value
            elif key in ("window", "max_snapshots", "n_centers"):
                clean[key] = _number(value, where, positive=True, integer=True)
            elif key in ("K", "epsilon0"):
                clean[key] = _number(value, where)
                if clean[key] < 0:
                    raise ValidationError(where, "must be nonnegative")
            else:
                clean[key] = _number(value, where, positive=True)
        checks[name] = clean
    cfg.verify = checks

    resc = _mapping(raw.get("rescale"), "rescale")
    _unknown(resc, _RESCALE_KEYS, "rescale")
    if "c" in resc:
        resc["c"] = _number(resc["c"], "rescale.c", positive=True)
    if "t0" in resc:
        resc["t0"] = _number(resc["t0"], "rescale.t0")
    if "x0" in resc:
        resc["x0"] = _points([resc["x0"]], "rescale.x0")[0]
    if "s_window" in resc:
        w = resc["s_window"]
        if not isinstance(w, list) or len(w) != 2:
            raise ValidationError("rescale.s_window", "expected [lo, hi]")
        resc["s_window"] = [_number(v, "rescale.s_window") for v in w]
    cfg.rescale = resc

    pw = _mapping(raw.get("piecewise"), "piecewise")
    _unknown(pw, _PIECEWISE_KEYS, "piecewise")
    if "provider" in pw:
        prov = _mapping(pw["provider"], "piecewise.provider")
        _unknown(prov, _PROVIDER_KEYS, "piecewise.provider")
        if prov.get("kind", "dilation") not in ("dilation", "zero"):
            raise ValidationError("piecewise.provider.kind", "must be 'dilation' or 'zero'")
        if "amplitude" in prov:
            prov["amplitude"] = _number(prov["amplitude"], "piecewise.provider.amplitude")
    for key in ("epsilon",):
        if key in pw:
            pw[key] = _number(pw[key], f"piecewise.{key}", positive=True)
    for key in ("max_replacements", "window"):
        if key in pw:
            pw[key] = _number(pw[key], f"piecewise.{key}", integer=True)
    cfg.piecewise = pw

    if "functional_grid" in raw:
        grid = _mapping(raw["functional_grid"], "functional_grid")
        _unknown(grid, _GRID_KEYS, "functional_grid")
        if "centers" not in grid or "t0" not in grid:
            raise ValidationError("functional_grid", "needs centers and t0")
        centers = _points(grid["centers"], "functional_grid.centers")
        if not isinstance(grid["t0"], list) or not grid["t0"]:
            raise ValidationError("functional_grid.t0", "expected a non-empty list")
        t0 = [_number(v, "functional_grid.t0") for v in grid["t0"]]
        if any(v <= 0 for v in t0):
            raise ValidationError("functional_grid.t0", "every t0 must be positive")
        cfg.functional_grid = {"centers": centers, "t0": t0}

    if "trajectory" in raw:
        path = Path(base_dir) / str(raw["trajectory"])
        if not (path / "trajectory.json").exists():
            raise ValidationError("trajectory", f"no trajectory manifest in {path}")
        cfg.trajectory = str(raw["trajectory"])
    if "output" in raw:
        cfg.output = str(raw["output"])
    return cfg


# execution -----------------------------------------------------------------


class _Manifest:
    """manifest.json; written before any long computation and updated at the end."""

    def __init__(self, out: Path, cfg: RunConfig):
        self.path = out / "manifest.json"
        self.data = {
            "command": cfg.command,
            "config": cfg.as_dict(),
            "version": __version__,
            "complete": False,
            "artifacts": [],
            "exit_code": None,
            "error": None,
            "metadata": {"started": _dt.datetime.now(_dt.timezone.utc).isoformat()},
        }
        self.write()

    def add(self, *paths):
        self.data["artifacts"] += [str(p) for p in paths]

    def write(self):
        self.path.write_text(json.dumps(self.data, indent=2, sort_keys=True, default=_json_default) + "\n")

    def finish(self, code: int, error: str | None = None):
        self.data.update(complete=error is None, exit_code=code, error=error)
        self.data["metadata"]["finished"] = _dt.datetime.now(_dt.timezone.utc).isoformat()
        self.write()


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    raise TypeError(f"not serializable: {type(obj).__name__}")


def _load_mesh(cfg: RunConfig) -> TriMesh:
    if cfg.mesh is None:
        raise ValidationError("mesh", "this command needs a mesh")
    if "path" in cfg.mesh:
        return read_mesh(Path(cfg.base_dir) / cfg.mesh["path"])
    try:
        return make_mesh(cfg.mesh)
    except TypeError as exc:
        raise ValidationError("mesh", str(exc)) from exc


def _trajectory(cfg: RunConfig):
    if cfg.trajectory is not None:
        return load_trajectory(Path(cfg.base_dir) / cfg.trajectory)
    mesh = _load_mesh(cfg)
    ambient = ambient_from_spec(cfg.ambient)
    if ambient.dim != mesh.dim_ambient:
        raise ValidationError("ambient", f"ambient dimension {ambient.dim} differs from mesh dimension {mesh.dim_ambient}")
    traj = run_flow(mesh, ambient, cfg.flow)
    if traj.termination.cause == "Failed":
        raise NumericalError(traj.termination.error or "flow failed")
    return traj


def _dump(path: Path, data) -> Path:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_json_default) + "\n")
    return path


def _run_flow_cmd(cfg, out, manifest):
    traj = _trajectory(cfg)
    tdir = save_trajectory(traj, out / "trajectory")
    write_series_csv(traj, out / "series.csv")
    summary = _dump(out / "flow_summary.json", {"termination": traj.termination.as_dict(), "steps": traj.metadata.get("steps"), "snapshots": len(traj)})
    manifest.add(tdir, out / "series.csv", summary)
    return EXIT_OK


def _run_entropy_cmd(cfg, out, manifest):
    mesh = _load_mesh(cfg)
    res = entropy(mesh, cfg.entropy)
    path = out / "entropy.json"
    res.to_json(path)
    manifest.add(path)
    if cfg.functional_grid is not None:
        grid_path = out / "F_grid.csv"
        export_F_grid(mesh, cfg.functional_grid["centers"], cfg.functional_grid["t0"], grid_path)
        manifest.add(grid_path)
    return EXIT_OK


def _end_time(traj):
    t_est = traj.termination.t_est if traj.termination is not None else None
    return t_est if t_est is not None and math.isfinite(t_est) else traj.times[-1]


def _anchor(traj):
    term = traj.termination
    if term is not None and term.point is not None:
        return np.asarray(term.point, dtype=float)
    m = traj.meshes[0]
    w = m.vertex_areas
    return (w[:, None] * m.vertices).sum(0) / w.sum()


def _default_points(traj, factors=(1.0, 2.0)):
    y = _anchor(traj)
    T = _end_time(traj)
    # keep the first snapshot resolvable on coarse meshes
    floor = 4.04 * traj.meshes[0].mean_edge_length ** 2
    return [{"x0": y.tolist(), "t0": max(f * T, floor)} for f in factors]


def _run_checks(cfg, traj, out, manifest):
    selected = dict(cfg.verify)
    if not selected:
        selected = {"J_monotone": {}, "almost_mono_u": {}, "volume_ratio": {}}
        if isinstance(traj.ambient, Euclidean):
            selected["huisken"] = {}
        if traj.termination is not None and traj.termination.cause == "Extinct":
            selected["classify"] = {}
    rng = np.random.default_rng(cfg.seed)
    reports, extras = [], {}
    diam0 = traj.metadata.get("diameter0") or traj.meshes[0].diameter()
    for name in sorted(selected):
        p = selected[name]
        if name == "huisken":
            y = _anchor(traj)
            if "centers" in p:
                centers = [np.array(c) for c in p["centers"]]
            else:
                e1 = np.zeros(len(y))
                e1[0] = 1.0
                centers = [y + f * diam0 / 2 * e1 for f in (0.0, 0.1, 0.25, 0.5, 1.0)]
            T = _end_time(traj)
            times = p.get("times", [T * f for f in (1.0, 1.2, 2.0, 4.0, 8.0)])
            grid = [(c, s) for c in centers for s in times]
            reports.append(verify_huisken(traj, grid, rel_tol=p.get("rel_tol", 1e-3)))
        elif name == "J_monotone":
            for pt in p.get("points", _default_points(traj)):
                reports.append(verify_J_monotone(traj, (pt["x0"], pt["t0"]), K=p.get("K"), rel_tol=p.get("rel_tol", 1e-3)))
        elif name == "almost_mono_u":
            for pt in p.get("points", _default_points(traj)):
                reports.append(
                    verify_almost_mono_u(
                        traj, (pt["x0"], pt["t0"]), C=p.get("C", 2.0), tau=p.get("tau"), tol=p.get("tol", 1e-3), pairs=p.get("pairs", "all")
                    )
                )
        elif name == "entropy_almost_mono":
            reports.append(
                verify_entropy_almost_mono(traj, p.get("epsilon0", 0.05), p.get("tau"), cfg.entropy, p.get("max_snapshots", 10))
            )
        elif name == "volume_ratio":
            radii = p.get("radii", [0.05 * diam0, 0.15 * diam0])
            S = p.get("S", max(1.0, (2.0 * max(radii)) ** 2))
            if "centers" in p:
                centers = np.array(p["centers"])
            else:
                verts = traj.meshes[0].vertices
                centers = verts[rng.choice(len(verts), size=p.get("n_centers", 5), replace=False)]
            T = p.get("T", _end_time(traj) / 4.0)
            reports.append(volume_ratio_bound(traj, radii, centers, S, T))
        elif name == "classify":
            th = ClassifierThresholds(p.get("residual", 0.1), p.get("fit", 0.02))
            cls = classify_extinction(traj, min(p.get("window", 20), len(traj)), th)
            extras["classification"] = cls.as_dict()
    rdir = out / "reports"
    rdir.mkdir(exist_ok=True)
    for i, r in enumerate(reports):
        path = rdir / f"{i:02d}_{r.check_name}.json"
        r.to_json(path)
        manifest.add(path)
    write_summary_csv(reports, out / "summary.csv")
    manifest.add(out / "summary.csv")
    ok = all(r.passed for r in reports)
    for r in reports:
        if r.check_name == "huisken" and not r.extra.get("dissipation_ok", True):
            ok = False
    if "classification" in extras:
        _dump(out / "classification.json", extras["classification"])
        manifest.add(out / "classification.json")
        ok = ok and extras["classification"]["verdict"] == "RoundPoint"
    return EXIT_OK if ok else EXIT_VERIFY


def _run_verify_cmd(cfg, out, manifest):
    traj = _trajectory(cfg)
    if cfg.trajectory is None:
        manifest.add(save_trajectory(traj, out / "trajectory"))
    return _run_checks(cfg, traj, out, manifest)


def _run_rescale_cmd(cfg, out, manifest):
    traj = _trajectory(cfg)
    p = cfg.rescale
    x0 = np.array(p["x0"]) if "x0" in p else _anchor(traj)
    t0 = p.get("t0", _end_time(traj))
    c = p.get("c", 10.0)
    window = tuple(p["s_window"]) if "s_window" in p else None
    res = rescale_trajectory(traj, x0, t0, c, window)
    manifest.add(save_trajectory(res, out / "rescaled"))
    return EXIT_OK


def _provider(spec: dict):
    kind = spec.get("kind", "dilation")
    amp = spec.get("amplitude", 0.1)

    def provide(gamma: TriMesh) -> np.ndarray:
        if kind == "zero":
            return np.zeros_like(gamma.vertices)
        # radial graph about the slice centroid; a pure dilation on round slices
        w = gamma.vertex_areas
        c = (w[:, None] * gamma.vertices).sum(0) / w.sum()
        return amp * gamma.normal_part(gamma.vertices - c)

    return provide


def _run_piecewise_cmd(cfg, out, manifest):
    mesh = _load_mesh(cfg)
    ambient = ambient_from_spec(cfg.ambient)
    p = cfg.piecewise
    budget = PiecewiseBudget(p.get("epsilon", 0.05), p.get("max_replacements", 5))
    log = piecewise_flow(mesh, ambient, _provider(p.get("provider", {})), budget, cfg.flow, cfg.entropy, p.get("window", 20))
    path = _dump(out / "piecewise.json", log.as_dict())
    manifest.add(path)
    for i, seg in enumerate(log.segments):
        write_series_csv(seg, out / f"segment_{i:02d}.csv")
        manifest.add(out / f"segment_{i:02d}.csv")
    return EXIT_OK


_RUNNERS = {
    "flow": _run_flow_cmd,
    "entropy": _run_entropy_cmd,
    "verify": _run_verify_cmd,
    "rescale": _run_rescale_cmd,
    "piecewise": _run_piecewise_cmd,
}


def execute(cfg: RunConfig) -> int:
    """Run a validated config; returns the process exit code."""
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    manifest = _Manifest(out, cfg)
    try:
        code = _RUNNERS[cfg.command](cfg, out, manifest)
    except InputError as exc:
        logger.error("input error: %s", exc)
        manifest.finish(EXIT_INPUT, f"{type(exc).__name__}: {exc}")
        return EXIT_INPUT
    except NumericalError as exc:
        logger.error("numerical failure: %s", exc)
        manifest.finish(EXIT_NUMERICAL, f"{type(exc).__name__}: {exc}")
        return EXIT_NUMERICAL
    except MCFLabError as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        manifest.finish(EXIT_NUMERICAL, f"{type(exc).__name__}: {exc}")
        return EXIT_NUMERICAL
    manifest.finish(code)
    return code


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="mcflab", description="Mean curvature flow laboratory")
    parser.add_argument("command", choices=COMMANDS)
    parser.add_argument("--config", required=True, type=Path)
    parser.add_argument("--out", type=Path)
    parser.add_argument("--seed", type=int)
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        text = args.config.read_text()
        cfg = parse_config(text, base_dir=args.config.parent, command=args.command, seed=args.seed)
    except OSError as exc:
        print(f"mcflab: cannot read config: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ValidationError as exc:
        print(f"mcflab: invalid config field {exc}", file=sys.stderr)
        return EXIT_INPUT
    except ParseError as exc:
        print(f"mcflab: {exc}", file=sys.stderr)
        return EXIT_INPUT
    if args.out is not None:
        cfg.output = str(args.out)
    return execute(cfg)


if __name__ == "__main__":
    sys.exit(main())
