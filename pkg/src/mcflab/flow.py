"""Time integration of (forced) mean curvature flow on triangle meshes."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.sparse as sp

from .ambient import AmbientSpace, Euclidean
from .errors import (
    BoundarySnapshot,
    DegenerateTriangle,
    EmptyWindow,
    InputError,
    LinearSolveFailure,
    NumericalError,
    OutsideTube,
    ProjectionFailure,
    QualityCollapse,
)
from .geometry import TriMesh, diameter

logger = logging.getLogger(__name__)

SCHEMES = ("explicit", "semi_implicit")


@dataclass(frozen=True)
class FlowConfig:
    dt_initial: float = 5e-4
    c_stab: float = 5e-3
    max_steps: int = 200_000
    stop_area: float = 1e-3
    stop_quality: float = 1e-3
    scheme: str = "semi_implicit"
    snapshot_stride: int = 10
    blowup_factor: float = 1e3
    extinction_fit: int = 20
    projection_tol: float = 1e-10
    tangential_relaxation: float = 0.1

    def __post_init__(self):
        if not self.dt_initial > 0:
            raise InputError("dt_initial must be positive")
        if not 0 < self.c_stab <= 1:
            raise InputError("c_stab must lie in (0, 1]")
        if not self.stop_area > 0:
            raise InputError("stop_area must be positive")
        if self.scheme not in SCHEMES:
            raise InputError(f"scheme must be one of {SCHEMES}")
        if not 0 <= self.tangential_relaxation <= 1:
            raise InputError("tangential_relaxation must lie in [0, 1]")
        if self.max_steps < 0 or self.snapshot_stride < 1 or self.extinction_fit < 2:
            raise InputError("max_steps >= 0, snapshot_stride >= 1, extinction_fit >= 2 required")


@dataclass
class Termination:
    cause: str  # Extinct | QualityStop | StepLimit | Blowup | Failed
    t_est: float | None = None
    point: np.ndarray | None = None
    max_A_series: list | None = None
    error: str | None = None

    def as_dict(self):
        return {
            "cause": self.cause,
            "t_est": self.t_est,
            "point": None if self.point is None else [float(v) for v in self.point],
            "error": self.error,
        }


@dataclass
class FlowTrajectory:
    times: list
    meshes: list
    ambient: AmbientSpace
    K_used: float
    termination: Termination | None = None
    config: FlowConfig | None = None
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if len(self.times) != len(self.meshes):
            raise InputError("times and meshes differ in length")
        if any(b <= a for a, b in zip(self.times, self.times[1:])):
            raise InputError("snapshot times must be strictly increasing")

    def __len__(self):
        return len(self.times)

    @property
    def snapshots(self):
        return list(zip(self.times, self.meshes))

    def index_of(self, t: float) -> int:
        return int(np.argmin(np.abs(np.asarray(self.times) - t)))

    def slice_at(self, t: float) -> tuple[float, TriMesh]:
        """Nearest-time snapshot."""
        i = self.index_of(t)
        return self.times[i], self.meshes[i]


def _solve_semi_implicit(
    mesh: TriMesh, rhs: np.ndarray, dt: float, rtol: float = 1e-12, maxiter: int = 2000
) -> np.ndarray:
    """Solve (M - dt C) x = M rhs for all columns at once by Jacobi-preconditioned CG.

    M - dt C is symmetric positive definite because C is negative semidefinite.
    The columns share the matrix, so they are iterated together; scipy's cg
    handles one right-hand side per call and its per-call overhead dominated.
    """
    mass = mesh.vertex_areas
    system = (sp.diags(mass) - dt * mesh.cotan_matrix).tocsr()
    inv_diag = (1.0 / system.diagonal())[:, None]
    b = mass[:, None] * rhs
    x = mesh.vertices.copy()
    r = b - system @ x
    tol = rtol * np.linalg.norm(b, axis=0)
    z = inv_diag * r
    d = z.copy()
    rz = np.einsum("ij,ij->j", r, z)
    for _ in range(maxiter):
        active = np.sqrt(np.einsum("ij,ij->j", r, r)) > tol
        if not active.any():
            break
        q = system @ d
        dq = np.einsum("ij,ij->j", d, q)
        alpha = np.where(active, rz / np.where(dq > 0, dq, 1.0), 0.0)
        x += alpha * d
        r -= alpha * q
        z = inv_diag * r
        rz_new = np.einsum("ij,ij->j", r, z)
        beta = np.where(active, rz_new / np.where(rz > 0, rz, 1.0), 0.0)
        d = z + beta * d
        rz = rz_new
    else:
        raise LinearSolveFailure("CG did not converge")
    if not np.all(np.isfinite(x)):
        raise LinearSolveFailure("non-finite solution")
    return x


def velocity(mesh: TriMesh, ambient: AmbientSpace) -> tuple[np.ndarray, np.ndarray]:
    """(H, P) at every vertex."""
    h = mesh.mean_curvature
    if ambient.is_flat:
        return h, np.zeros_like(h)
    return h, ambient.forcing(mesh.vertices, mesh.tangent_frames)


def step(
    mesh: TriMesh,
    ambient: AmbientSpace,
    dt: float,
    scheme: str = "semi_implicit",
    quality_floor: float = 1e-3,
    relax: float = 0.0,
) -> TriMesh:
    """One time step of the flow with velocity H + P.

    explicit: x += dt (H + P). semi_implicit: (I - dt L) x_new = x + dt P with
    the cotangent Laplacian L frozen at the current mesh. ``relax`` > 0 then
    slides each vertex by that fraction of the tangential part of its
    umbrella vector, which only reparametrizes the surface but keeps
    triangles from collapsing on anisotropic shapes. Curved ambients are
    followed by a projection of every vertex back onto N.
    """
    if scheme not in SCHEMES:
        raise InputError(f"unknown scheme {scheme!r}")
    if dt < 0:
        raise InputError("dt must be nonnegative")
    if dt == 0:
        return mesh
    h, p = velocity(mesh, ambient)
    x = mesh.vertices
    if scheme == "explicit":
        new = x + dt * (h + p)
    else:
        new = _solve_semi_implicit(mesh, x + dt * p, dt)
    if relax > 0:
        u = mesh.umbrella @ x
        new = new + relax * (u - mesh.normal_part(u))
    if not ambient.is_flat:
        try:
            new = ambient.project(new)
        except OutsideTube as exc:
            raise ProjectionFailure(str(exc)) from exc
    try:
        out = mesh.with_vertices(new)
    except DegenerateTriangle as exc:
        raise QualityCollapse(str(exc)) from exc
    if out.face_quality.min() < quality_floor:
        raise QualityCollapse(f"triangle quality {out.face_quality.min():.2e} below {quality_floor}")
    return out


def extinction_estimate(times, areas) -> float:
    """Zero of the least-squares line through (t, area)."""
    t = np.asarray(times, dtype=float)
    a = np.asarray(areas, dtype=float)
    slope, intercept = np.polyfit(t - t[-1], a, 1)
    if slope >= 0:
        return math.nan
    return float(t[-1] - intercept / slope)


def _centroid(mesh: TriMesh) -> np.ndarray:
    w = mesh.vertex_areas
    return (w[:, None] * mesh.vertices).sum(0) / w.sum()


def run_flow(mesh: TriMesh, ambient: AmbientSpace | None = None, config: FlowConfig | None = None) -> FlowTrajectory:
    """Integrate until extinction, quality loss, curvature blowup, or the step limit."""
    ambient = Euclidean(mesh.dim_ambient) if ambient is None else ambient
    config = FlowConfig() if config is None else config
    if ambient.dim != mesh.dim_ambient:
        raise InputError("mesh and ambient live in different R^l")
    if not ambient.is_flat and ambient.on_surface_error(mesh.vertices).max() > 1e-6:
        raise InputError("initial mesh does not lie on the ambient")
    diam0 = mesh.diameter()
    blowup = config.blowup_factor / diam0
    times, meshes = [0.0], [mesh]
    step_t, step_area, max_a = [0.0], [mesh.area], [float(mesh.second_fundamental_norm.max())]
    t = 0.0
    current = mesh
    cause, err = "StepLimit", None
    n = 0
    while True:
        if current.area < config.stop_area:
            cause = "Extinct"
            break
        if current.face_quality.min() < config.stop_quality:
            cause = "QualityStop"
            break
        if max_a[-1] > blowup:
            cause = "Blowup"
            break
        if n >= config.max_steps:
            break
        dt = min(config.dt_initial, config.c_stab / max(max_a[-1] ** 2, 1e-300))
        try:
            current = step(current, ambient, dt, config.scheme, quality_floor=0.0, relax=config.tangential_relaxation)
        except QualityCollapse as exc:
            cause, err = "QualityStop", str(exc)
            break
        except NumericalError as exc:
            cause, err = "Failed", f"{type(exc).__name__}: {exc}"
            break
        n += 1
        t += dt
        step_t.append(t)
        step_area.append(current.area)
        max_a.append(float(current.second_fundamental_norm.max()))
        if n % config.snapshot_stride == 0:
            times.append(t)
            meshes.append(current)
    if times[-1] != t:
        times.append(t)
        meshes.append(current)
    term = Termination(cause, error=err, max_A_series=max_a if cause == "Blowup" else None)
    if cause in ("Extinct", "Blowup"):
        k = min(config.extinction_fit, len(times))
        term.t_est = extinction_estimate(times[-k:], [m.area for m in meshes[-k:]])
        term.point = _centroid(current)
    logger.info("flow stopped: %s after %d steps at t=%.6g", cause, n, t)
    traj = FlowTrajectory(times, meshes, ambient, ambient.forcing_bound_K, term, config)
    traj.metadata.update(
        steps=n,
        diameter0=diam0,
        step_times=np.asarray(step_t),
        step_areas=np.asarray(step_area),
        step_max_A=np.asarray(max_a),
    )
    return traj


def rescale_trajectory(
    traj: FlowTrajectory, x0, t0: float, c: float, s_window: tuple | None = None
) -> FlowTrajectory:
    """Parabolic rescaling: (t, M) -> (c^2 (t - t0), c (M - x0)), K -> K / c."""
    if c <= 0:
        raise InputError("c must be positive")
    x0 = np.asarray(x0, dtype=float)
    times, meshes = [], []
    for t, m in zip(traj.times, traj.meshes):
        s = c * c * (t - t0)
        if s_window is not None and not (s_window[0] <= s <= s_window[1]):
            continue
        times.append(s)
        meshes.append(m.with_vertices(c * (m.vertices - x0)))
    if not times:
        raise EmptyWindow("no snapshots in the rescaled time range")
    term = None
    if traj.termination is not None:
        term = replace(traj.termination)
        if term.t_est is not None:
            term.t_est = c * c * (term.t_est - t0)
        if term.point is not None:
            term.point = c * (term.point - x0)
    out = FlowTrajectory(times, meshes, traj.ambient.dilated(c, x0), traj.K_used / c, term, traj.config)
    out.metadata.update(rescaled_from={"x0": x0.tolist(), "t0": t0, "c": c})
    return out


def diameter_ratio_series(traj: FlowTrajectory, t_sing: float | None = None) -> np.ndarray:
    """(t, diam M_t / sqrt(t_sing - t)) for snapshots before t_sing."""
    if t_sing is None:
        t_sing = traj.termination.t_est
    rows = [(t, diameter(m.vertices) / math.sqrt(t_sing - t)) for t, m in zip(traj.times, traj.meshes) if t < t_sing]
    return np.array(rows).reshape(-1, 2)


@dataclass(frozen=True)
class DerivativeCheck:
    lhs: float
    rhs: float
    gap: float


def flow_derivative_check(traj: FlowTrajectory, x0, t0: float, t: float, n: int = 2) -> DerivativeCheck:
    """Compare d/dt of a weighted area with the forced first-variation integrand.

    The weight is the backward heat kernel centered at (x0, t0), frozen at the
    snapshot time ``t`` so that it is a fixed function of space.
    """
    i = traj.index_of(t)
    if i == 0 or i == len(traj) - 1:
        raise BoundarySnapshot("derivative check needs neighbours on both sides")
    tm = traj.times[i]
    if t0 <= tm:
        raise InputError("t0 must exceed the snapshot time")
    x0 = np.asarray(x0, dtype=float)
    tau = t0 - tm

    def psi(pts):
        r2 = ((pts - x0) ** 2).sum(1)
        return np.exp(-r2 / (4 * tau)) / (4 * math.pi * tau) ** (n / 2)

    def weighted_area(m):
        return float((m.vertex_areas * psi(m.vertices)).sum())

    lhs = (weighted_area(traj.meshes[i + 1]) - weighted_area(traj.meshes[i - 1])) / (
        traj.times[i + 1] - traj.times[i - 1]
    )
    m = traj.meshes[i]
    h, p = velocity(m, traj.ambient)
    ps = psi(m.vertices)
    grad = -ps[:, None] * (m.vertices - x0) / (2 * tau)
    integrand = -ps * (h**2).sum(1) + (grad * h).sum(1) + ((grad - ps[:, None] * h) * p).sum(1)
    rhs = float((m.vertex_areas * integrand).sum())
    return DerivativeCheck(lhs, rhs, abs(lhs - rhs))
