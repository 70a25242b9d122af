"""Verification suites for the monotone and almost-monotone quantities of a flow,
extinction classification, entropy continuity, and the piecewise flow with
entropy-decreasing replacements.
"""
from __future__ import annotations

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .ambient import AmbientSpace, Euclidean
from .errors import (
    ConnectivityMismatch,
    DegenerateResult,
    InputError,
    NotExtinct,
    OutsideTube,
    PerturbationRejected,
    TimeOrder,
    WrongAmbient,
)
from .flow import FlowConfig, FlowTrajectory, run_flow
from .functionals import (
    EntropyOptions,
    J_quantity,
    SpacetimePoint,
    _kernel_sums,
    _point,
    entropy,
    quadrature,
    shrinker_residual,
)
from .geometry import TriMesh, apply_normal_graph, diameter

logger = logging.getLogger(__name__)


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else repr(v)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, SpacetimePoint):
        return obj.as_dict()
    return obj


@dataclass
class VerificationReport:
    check_name: str
    params: dict
    series: list
    worst_violation: float
    tolerance: float
    extra: dict = field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return bool(self.worst_violation <= self.tolerance)

    def params_hash(self) -> str:
        blob = json.dumps(_jsonable(self.params), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    def as_dict(self):
        return _jsonable(
            {
                "check_name": self.check_name,
                "params": self.params,
                "series": self.series,
                "worst_violation": self.worst_violation,
                "tolerance": self.tolerance,
                "passed": self.passed,
                "extra": self.extra,
            }
        )

    def to_json(self, path=None) -> str:
        text = json.dumps(self.as_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


def write_summary_csv(reports: Sequence[VerificationReport], path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["check", "params_hash", "worst_violation", "tolerance", "passed"])
        for r in reports:
            wr.writerow([r.check_name, r.params_hash(), repr(float(r.worst_violation)), repr(float(r.tolerance)), r.passed])


# Gaussian densities along a trajectory -----------------------------------


def density_table(traj: FlowTrajectory, points, min_scale_factor: float = 4.0) -> np.ndarray:
    """u_{y,s}(t) for every snapshot (rows) and spacetime point (columns).

    Entries with t >= s, or with s - t below ``min_scale_factor`` times the
    squared mean edge length, are NaN: there the kernel is narrower than the
    triangles and the quadrature no longer resolves it.
    """
    pts = [_point(p) for p in points]
    ys = np.array([p.x0 for p in pts])
    ss = np.array([p.t0 for p in pts])
    out = np.full((len(traj), len(pts)), np.nan)
    for i, (t, m) in enumerate(zip(traj.times, traj.meshes)):
        scale = ss - t
        ok = scale >= min_scale_factor * m.mean_edge_length**2
        if not ok.any():
            continue
        nodes, w = quadrature(m, 3)
        out[i, ok] = _kernel_sums(nodes, w, ys[ok], scale[ok], 2)[0]
    return out


def _max_increase(series: np.ndarray) -> float:
    v = series[np.isfinite(series)]
    if len(v) < 2:
        return 0.0
    return float(max(np.max(np.diff(v)), 0.0))


def huisken_dissipation(mesh: TriMesh, y, s: float, t: float) -> float:
    """Vertex quadrature of Phi |H + (x - y)^perp / (2 (s - t))|^2."""
    tau = s - t
    x = mesh.vertices
    phi = np.exp(-((x - y) ** 2).sum(1) / (4 * tau)) / (4 * math.pi * tau)
    res = mesh.normal_part(mesh.mean_curvature + (x - y) / (2 * tau))
    return float((mesh.vertex_areas * phi * (res**2).sum(1)).sum())


def verify_huisken(
    traj: FlowTrajectory, grid, tol: float | None = None, rel_tol: float = 1e-3
) -> VerificationReport:
    """No positive increment of u along the flow, and increments matching the dissipation.

    Default tolerance is ``rel_tol`` times the largest u in the table. The
    dissipation cross-check integrates the weighted shrinker residual in time
    by the trapezoid rule and must match each increment within 10 tol.
    """
    if not isinstance(traj.ambient, Euclidean):
        raise WrongAmbient("the Huisken check needs a Euclidean trajectory")
    pts = [_point(p) for p in grid]
    table = density_table(traj, pts)
    finite = table[np.isfinite(table)]
    umax = float(finite.max()) if finite.size else 0.0
    tol = rel_tol * umax if tol is None else tol
    times = np.asarray(traj.times)
    worst, gap = 0.0, 0.0
    series = []
    for j, p in enumerate(pts):
        col = table[:, j]
        worst = max(worst, _max_increase(col))
        idx = np.flatnonzero(np.isfinite(col))
        series.append([(float(times[i]), float(col[i])) for i in idx])
        if len(idx) < 2:
            continue
        diss = np.array([huisken_dissipation(traj.meshes[i], p.x0, p.t0, times[i]) for i in idx])
        for a, b in zip(range(len(idx) - 1), range(1, len(idx))):
            if idx[b] != idx[a] + 1:
                continue
            predicted = -0.5 * (diss[a] + diss[b]) * (times[idx[b]] - times[idx[a]])
            gap = max(gap, abs(col[idx[b]] - col[idx[a]] - predicted))
    return VerificationReport(
        "huisken",
        {"grid": [p.as_dict() for p in pts], "rel_tol": rel_tol},
        series,
        worst,
        tol,
        extra={"dissipation_gap": gap, "dissipation_tolerance": 10 * tol, "dissipation_ok": bool(gap <= 10 * tol)},
    )


def _single_series(traj, y_s):
    p = _point(y_s)
    col = density_table(traj, [p])[:, 0]
    idx = np.flatnonzero(np.isfinite(col))
    if len(idx) == 0:
        raise TimeOrder("no snapshot precedes s by a resolvable scale")
    return p, np.asarray(traj.times)[idx], col[idx]


def verify_J_monotone(
    traj: FlowTrajectory, y_s, tol: float | None = None, K: float | None = None, rel_tol: float = 1e-3
) -> VerificationReport:
    """J(t) = exp(K^2 (s - t) / 2) u(t) is non-increasing; K defaults to traj.K_used."""
    p, t, u = _single_series(traj, y_s)
    K = traj.K_used if K is None else K
    J = np.array([J_quantity(v, K, p.t0, tt) for v, tt in zip(u, t)])
    tol = rel_tol * float(J.max()) if tol is None else tol
    return VerificationReport(
        "J_monotone",
        {"y_s": p.as_dict(), "K": K, "rel_tol": rel_tol},
        list(zip(t.tolist(), J.tolist())),
        _max_increase(J),
        tol,
        extra={"u": u.tolist()},
    )


def default_tau(traj: FlowTrajectory) -> float:
    """Comparison-sphere horizon: a sphere of radius D dies by D^2/4; doubled."""
    d = traj.metadata.get("diameter0") or diameter(traj.meshes[0].vertices)
    return d * d / 2.0


def verify_almost_mono_u(
    traj: FlowTrajectory,
    y_s,
    C: float = 2.0,
    tau: float | None = None,
    tol: float = 1e-3,
    K: float | None = None,
    pairs: str = "all",
) -> VerificationReport:
    """u(t2) <= u(t1) + C K^2 (t2 - t1) for snapshot pairs closer than tau."""
    if C <= 1:
        raise InputError("C must exceed 1")
    if pairs not in ("all", "adjacent"):
        raise InputError("pairs must be 'all' or 'adjacent'")
    p, t, u = _single_series(traj, y_s)
    K = traj.K_used if K is None else K
    tau = default_tau(traj) if tau is None else tau
    worst = -math.inf
    for a in range(len(t)):
        stop = min(a + 2, len(t)) if pairs == "adjacent" else len(t)
        for b in range(a + 1, stop):
            if t[b] - t[a] >= tau:
                break
            worst = max(worst, u[b] - u[a] - C * K * K * (t[b] - t[a]))
    worst = 0.0 if worst == -math.inf else float(worst)
    return VerificationReport(
        "almost_mono_u",
        {"y_s": p.as_dict(), "C": C, "tau": tau, "K": K, "pairs": pairs},
        list(zip(t.tolist(), u.tolist())),
        worst,
        tol,
    )


def verify_entropy_almost_mono(
    traj: FlowTrajectory,
    epsilon0: float = 0.05,
    tau: float | None = None,
    opt: EntropyOptions | None = None,
    max_snapshots: int = 25,
) -> VerificationReport:
    """lambda(M_t2) < lambda(M_t1) + epsilon0 for t1 < t2 within tau.

    Entropies are computed on at most ``max_snapshots`` evenly spaced
    snapshots; OptimizerDiverged from any snapshot propagates.
    """
    tau = default_tau(traj) if tau is None else tau
    idx = np.unique(np.linspace(0, len(traj) - 1, min(max_snapshots, len(traj))).round().astype(int))
    lam = np.array([entropy(traj.meshes[i], opt).lam for i in idx])
    t = np.asarray(traj.times)[idx]
    worst = -math.inf
    for a in range(len(t)):
        for b in range(a + 1, len(t)):
            if t[b] - t[a] < tau:
                worst = max(worst, lam[b] - lam[a] - epsilon0)
    worst = 0.0 if worst == -math.inf else float(worst)
    return VerificationReport(
        "entropy_almost_mono",
        {"epsilon0": epsilon0, "tau": tau, "max_snapshots": max_snapshots},
        list(zip(t.tolist(), lam.tolist())),
        worst,
        0.0,
    )


def ball_area(mesh: TriMesh, center, r: float) -> float:
    nodes, w = quadrature(mesh, 3)
    inside = ((nodes - np.asarray(center, dtype=float)) ** 2).sum(1) <= r * r
    return float(w[inside].sum())


def volume_ratio_bound(traj: FlowTrajectory, radii, centers, S: float, T: float) -> VerificationReport:
    """Area in balls against (V + 2S) r^2 with V = e^(1/4) Area(M_0) / T."""
    radii = [float(r) for r in radii]
    if T <= 0 or S <= 0:
        raise InputError("S and T must be positive")
    if any(r >= math.sqrt(S) for r in radii):
        raise InputError("every radius must be below sqrt(S)")
    n = 2
    V = (4 * math.pi * T) ** (-n / 2) * traj.meshes[0].area * math.exp(0.25) * (4 * math.pi) ** (n / 2)
    bound = V + 2 * S
    worst = -math.inf
    series = []
    for t, m in zip(traj.times, traj.meshes):
        if t <= T:
            continue
        ratio = max(ball_area(m, c, r) / r**2 for r in radii for c in centers)
        series.append((t, ratio))
        worst = max(worst, ratio - bound)
    worst = -bound if worst == -math.inf else float(worst)
    return VerificationReport(
        "volume_ratio",
        {"radii": radii, "centers": np.asarray(centers, dtype=float), "S": S, "T": T},
        series,
        worst,
        0.0,
        extra={"V": V, "bound": bound},
    )


# extinction --------------------------------------------------------------


def sphere_fit(points: np.ndarray) -> tuple[np.ndarray, float, float]:
    """Algebraic least-squares sphere; returns (center, radius, rms radial error)."""
    a = np.concatenate([2 * points, np.ones((len(points), 1))], 1)
    b = (points**2).sum(1)
    sol, *_ = np.linalg.lstsq(a, b, rcond=None)
    c = sol[:-1]
    r = math.sqrt(max(sol[-1] + c @ c, 0.0))
    err = math.sqrt(float(np.mean((np.linalg.norm(points - c, axis=1) - r) ** 2)))
    return c, r, err


@dataclass(frozen=True)
class ClassifierThresholds:
    residual: float = 0.1
    fit: float = 0.02  # relative to the fitted radius


@dataclass
class ExtinctionClass:
    verdict: str  # RoundPoint | NonRound | Inconclusive
    times: list
    residuals: list
    sphere_fit_error: list
    radii: list

    def as_dict(self):
        return _jsonable(self.__dict__)


def classify_extinction(
    traj: FlowTrajectory, window: int = 20, thresholds: ClassifierThresholds | None = None
) -> ExtinctionClass:
    """Rescale the last snapshots about the extinction point and look for a round shrinker."""
    th = ClassifierThresholds() if thresholds is None else thresholds
    term = traj.termination
    if term is None or term.cause not in ("Extinct", "Blowup") or term.t_est is None:
        raise NotExtinct(f"trajectory ended with {None if term is None else term.cause}")
    if window < 2 or window > len(traj):
        raise InputError("window must lie in [2, snapshot count]")
    t_est, x0 = term.t_est, term.point
    times, res, fit, radii = [], [], [], []
    for t, m in list(zip(traj.times, traj.meshes))[-window:]:
        if t >= t_est:
            continue
        c = 1.0 / math.sqrt(t_est - t)
        scaled = m.with_vertices(c * (m.vertices - x0))
        times.append(float(t))
        res.append(shrinker_residual(scaled, (np.zeros(m.dim_ambient), 1.0)).l2)
        _, r, err = sphere_fit(scaled.vertices)
        fit.append(err / r)
        radii.append(r)
    if len(times) < 2:
        return ExtinctionClass("Inconclusive", times, res, fit, radii)
    half = max(1, len(times) // 2)
    r_tail, f_tail = np.array(res[-half:]), np.array(fit[-half:])
    if np.all(r_tail < th.residual) and np.all(f_tail < th.fit):
        verdict = "RoundPoint"
    elif np.all(r_tail > 2 * th.residual):
        verdict = "NonRound"
    else:
        verdict = "Inconclusive"
    return ExtinctionClass(verdict, times, res, fit, radii)


# entropy continuity --------------------------------------------------------


@dataclass
class ContinuityProbe:
    s_values: list
    lambda_series: list
    lipschitz_estimate: float
    coarse_estimate: float
    refinement_stable: bool

    def as_dict(self):
        return _jsonable(self.__dict__)


def _lipschitz(s, lam):
    ds = np.diff(s)
    return float(np.max(np.abs(np.diff(lam)) / ds)) if len(ds) else 0.0


def entropy_continuity_probe(
    family: Sequence[TriMesh], s_values=None, opt: EntropyOptions | None = None, growth: float = 1.5
) -> ContinuityProbe:
    """Entropy along a one-parameter family; compares the slope bound with the every-other-sample grid."""
    if len(family) < 3:
        raise InputError("the probe needs at least three family members")
    s = np.linspace(0.0, 1.0, len(family)) if s_values is None else np.asarray(s_values, dtype=float)
    if any(not family[0].same_connectivity(m) for m in family[1:]):
        raise ConnectivityMismatch("family members must share connectivity")
    lam = np.array([entropy(m, opt).lam for m in family])
    fine = _lipschitz(s, lam)
    coarse = _lipschitz(s[::2], lam[::2])
    # a flat family has zero slope on both grids; treat rounding noise as flat
    stable = fine <= growth * coarse + 1e-9
    return ContinuityProbe(s.tolist(), lam.tolist(), fine, coarse, bool(stable))


def normal_graph_family(base: TriMesh, graph: np.ndarray, n: int = 11) -> list[TriMesh]:
    return [apply_normal_graph(base, graph, float(s)) for s in np.linspace(0.0, 1.0, n)]


# piecewise flow --------------------------------------------------------------

PerturbationProvider = Callable[[TriMesh], np.ndarray]


@dataclass(frozen=True)
class PiecewiseBudget:
    epsilon: float = 0.05
    max_replacements: int = 5
    sigma: float = 0.05  # observed entropy gap above 1 for closed surfaces

    def __post_init__(self):
        if not self.epsilon > 0 or self.max_replacements < 0:
            raise InputError("epsilon > 0 and max_replacements >= 0 required")


@dataclass
class PiecewiseFlowLog:
    segments: list = field(default_factory=list)
    replacements: list = field(default_factory=list)  # (time, before, after, perturbation_id)
    rejections: list = field(default_factory=list)
    classifications: list = field(default_factory=list)
    initial_entropy: float = math.nan
    final_classification: str = "Incomplete"

    def replacement_bound(self, budget: PiecewiseBudget) -> float:
        return (self.initial_entropy - 1.0 - budget.sigma) / (budget.epsilon / 4.0) + 1.0

    def as_dict(self):
        return _jsonable(
            {
                "segments": [
                    {"t_end": seg.times[-1], "snapshots": len(seg), "termination": seg.termination.as_dict()}
                    for seg in self.segments
                ],
                "replacements": self.replacements,
                "rejections": self.rejections,
                "classifications": self.classifications,
                "initial_entropy": self.initial_entropy,
                "final_classification": self.final_classification,
            }
        )


def attempt_replacement(
    slice_mesh: TriMesh,
    x0,
    s_j: float,
    ambient: AmbientSpace,
    provider: PerturbationProvider,
    epsilon: float,
    opt: EntropyOptions | None = None,
    log: PiecewiseFlowLog | None = None,
    time: float = math.nan,
    perturbation_id: str = "provider",
) -> TriMesh:
    """Perturb a flow slice by the provider's graph and accept only an entropy drop of epsilon/2.

    The provider sees the slice rescaled to unit parabolic scale
    ((M - x0) / sqrt(s_j)); its graph is scaled back by sqrt(s_j). A rejected
    graph is retried once at half amplitude before PerturbationRejected.
    """
    x0 = np.asarray(x0, dtype=float)
    root = math.sqrt(s_j)
    gamma = slice_mesh.with_vertices((slice_mesh.vertices - x0) / root)
    graph = np.asarray(provider(gamma), dtype=float) * root
    before = entropy(slice_mesh, opt).lam
    after = math.nan
    for amplitude in (1.0, 0.5):
        try:
            cand = apply_normal_graph(slice_mesh, graph, amplitude)
            if not ambient.is_flat:
                cand = cand.with_vertices(ambient.project(cand.vertices))
        except (DegenerateResult, OutsideTube) as exc:
            reason = f"{type(exc).__name__}: {exc}"
            if log is not None:
                log.rejections.append((time, before, math.nan, perturbation_id, amplitude, reason))
            continue
        after = entropy(cand, opt).lam
        if after <= before - epsilon / 2.0:
            if log is not None:
                log.replacements.append((time, before, after, perturbation_id))
            return cand
        if log is not None:
            log.rejections.append((time, before, after, perturbation_id, amplitude, "entropy drop below epsilon/2"))
        logger.info("replacement rejected at amplitude %g: %.6f -> %.6f", amplitude, before, after)
    raise PerturbationRejected(f"entropy {before:.6f} -> {after:.6f} misses the epsilon/2 = {epsilon / 2} gate")


def piecewise_flow(
    mesh: TriMesh,
    ambient: AmbientSpace | None,
    provider: PerturbationProvider,
    budget: PiecewiseBudget | None = None,
    config: FlowConfig | None = None,
    opt: EntropyOptions | None = None,
    window: int = 20,
    thresholds: ClassifierThresholds | None = None,
) -> PiecewiseFlowLog:
    """Flow, classify each singularity, and replace the surface before non-round ones."""
    budget = PiecewiseBudget() if budget is None else budget
    ambient = Euclidean(mesh.dim_ambient) if ambient is None else ambient
    log = PiecewiseFlowLog(initial_entropy=entropy(mesh, opt).lam)
    current, t_offset = mesh, 0.0
    while True:
        seg = run_flow(current, ambient, config)
        log.segments.append(seg)
        cause = seg.termination.cause
        if cause not in ("Extinct", "Blowup"):
            log.final_classification = "Incomplete"
            break
        w = min(window, len(seg))
        cls = classify_extinction(seg, w, thresholds)
        log.classifications.append(cls.verdict)
        if cls.verdict == "RoundPoint":
            log.final_classification = "RoundPoint"
            break
        lam_now = entropy(current, opt).lam
        if len(log.replacements) >= budget.max_replacements or lam_now - budget.epsilon / 2.0 < 1.0:
            log.final_classification = "Budget-Exhausted"
            break
        # the slice at the start of the classification window plays the role of M_{t_sing - s_j}
        i = len(seg) - w
        t_slice = seg.times[i]
        s_j = seg.termination.t_est - t_slice
        try:
            current = attempt_replacement(
                seg.meshes[i],
                seg.termination.point,
                s_j,
                ambient,
                provider,
                budget.epsilon,
                opt,
                log,
                t_offset + t_slice,
                f"replacement-{len(log.replacements)}",
            )
        except PerturbationRejected:
            log.final_classification = "NonRound"
            break
        t_offset += t_slice
    return log
