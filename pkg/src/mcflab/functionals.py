"""Gaussian-weighted functionals of surfaces: F, u, J, the entropy and shrinker residuals.

Every integral is a triangle quadrature of the kernel

    (4 pi t0)^(-k/2) exp(-|x - x0|^2 / (4 t0))

with k = 2 for surfaces. The entropy maximizes F over centers and scales in
coordinates normalized by the mesh bounding box, so the optimizer sees an
identical problem for every dilated or translated copy of a surface.
"""
from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from .errors import InputError, OptimizerDiverged, TimeNonPositive, TimeOrder
from .geometry import TriMesh

logger = logging.getLogger(__name__)

# barycentric 3-point rule, exact for quadratics
_Q3 = np.array([[2 / 3, 1 / 6, 1 / 6], [1 / 6, 2 / 3, 1 / 6], [1 / 6, 1 / 6, 2 / 3]])
_Q1 = np.array([[1 / 3, 1 / 3, 1 / 3]])


@dataclass(frozen=True)
class SpacetimePoint:
    x0: np.ndarray
    t0: float

    def __post_init__(self):
        object.__setattr__(self, "x0", np.asarray(self.x0, dtype=float))
        if not self.t0 > 0:
            raise TimeNonPositive(f"t0 must be positive, got {self.t0}")

    def as_dict(self):
        return {"x0": [float(v) for v in self.x0], "t0": float(self.t0)}


def _point(p) -> SpacetimePoint:
    if isinstance(p, SpacetimePoint):
        return p
    x0, t0 = p
    return SpacetimePoint(x0, t0)


def quadrature(mesh: TriMesh, order: int = 3) -> tuple[np.ndarray, np.ndarray]:
    """Quadrature nodes (q, l) and weights (q,) over the mesh surface."""
    if order not in (1, 3):
        raise InputError("quadrature order must be 1 or 3")
    rule = _Q3 if order == 3 else _Q1
    p = mesh.vertices[mesh.faces]  # (m, 3, l)
    nodes = np.einsum("qk,mkl->mql", rule, p).reshape(-1, mesh.dim_ambient)
    weights = np.repeat(mesh.face_areas / len(rule), len(rule))
    return nodes, weights


def _kernel_sums(nodes, weights, x0s, t0s, k, want_grad=False, chunk=256):
    """F (and optionally its gradient) for many spacetime points at once."""
    x0s = np.atleast_2d(x0s)
    t0s = np.atleast_1d(np.asarray(t0s, dtype=float))
    out_f = np.empty(len(t0s))
    out_gx = np.empty_like(x0s) if want_grad else None
    out_gt = np.empty(len(t0s)) if want_grad else None
    sq = (nodes**2).sum(1)
    for a in range(0, len(t0s), chunk):
        xs, ts = x0s[a : a + chunk], t0s[a : a + chunk]
        r2 = np.maximum(sq[None, :] + (xs**2).sum(1)[:, None] - 2.0 * xs @ nodes.T, 0.0)
        norm = (4.0 * math.pi * ts) ** (-k / 2.0)
        g = np.exp(-r2 / (4.0 * ts[:, None])) * weights[None, :]
        out_f[a : a + chunk] = norm * g.sum(1)
        if want_grad:
            # d/dx0 exp(-r^2/4t) = exp * (x - x0) / (2t)
            gx = (g @ nodes - g.sum(1)[:, None] * xs) / (2.0 * ts[:, None])
            out_gx[a : a + chunk] = norm[:, None] * gx
            # the normalization contributes -k/(2t)
            gt = (g * (r2 / (4.0 * ts[:, None] ** 2))).sum(1) - k / (2.0 * ts) * g.sum(1)
            out_gt[a : a + chunk] = norm * gt
    return out_f, out_gx, out_gt


def F_functional(mesh: TriMesh, p, order: int = 3, k: int = 2) -> float:
    """Gaussian-weighted area at center x0 and scale t0."""
    p = _point(p)
    nodes, w = quadrature(mesh, order)
    return float(_kernel_sums(nodes, w, p.x0[None, :], [p.t0], k)[0][0])


def F_batch(mesh: TriMesh, x0s, t0s, order: int = 3, k: int = 2) -> np.ndarray:
    t0s = np.atleast_1d(np.asarray(t0s, dtype=float))
    if np.any(t0s <= 0):
        raise TimeNonPositive("every t0 must be positive")
    nodes, w = quadrature(mesh, order)
    return _kernel_sums(nodes, w, x0s, t0s, k)[0]


@dataclass(frozen=True)
class FGradient:
    d_x0: np.ndarray
    d_t0: float


def F_gradient(mesh: TriMesh, p, order: int = 3, k: int = 2) -> FGradient:
    """Exact derivative of the discrete F in x0 and t0 (same quadrature as F)."""
    p = _point(p)
    nodes, w = quadrature(mesh, order)
    _, gx, gt = _kernel_sums(nodes, w, p.x0[None, :], [p.t0], k, want_grad=True)
    return FGradient(gx[0], float(gt[0]))


def gaussian_density_u(traj, p, t: float, order: int = 3) -> float:
    """u_{y,s}(t): F of the snapshot at time t with scale s - t."""
    p = _point(p)
    i = traj.index_of(t)
    tt = traj.times[i]
    if not math.isclose(tt, t, rel_tol=1e-9, abs_tol=1e-12):
        raise InputError(f"t = {t} is not a snapshot time")
    if tt >= p.t0:
        raise TimeOrder(f"t = {tt} must precede s = {p.t0}")
    return F_functional(traj.meshes[i], SpacetimePoint(p.x0, p.t0 - tt), order)


def J_quantity(u_value: float, K: float, s: float, t: float) -> float:
    """exp(K^2 (s - t) / 2) * u."""
    if t >= s:
        raise TimeOrder(f"t = {t} must precede s = {s}")
    if K < 0:
        raise InputError("K must be nonnegative")
    return math.exp(K * K * (s - t) / 2.0) * u_value


# entropy -----------------------------------------------------------------


@dataclass(frozen=True)
class EntropyOptions:
    grid_nx: int = 7
    grid_nt: int = 12
    n_starts: int = 4
    ascent_tol: float = 1e-12
    max_iters: int = 200
    seed: int = 0
    jitter: float = 1e-3

    def __post_init__(self):
        if self.grid_nx < 1 or self.grid_nt < 2 or self.n_starts < 1 or self.max_iters < 1:
            raise InputError("grid_nx >= 1, grid_nt >= 2, n_starts >= 1, max_iters >= 1 required")
        if not self.ascent_tol > 0:
            raise InputError("ascent_tol must be positive")


@dataclass
class EntropyResult:
    lam: float
    argmax: SpacetimePoint
    starts_tried: int
    converged: bool
    search_box: dict
    grid_max: float = math.nan

    def as_dict(self):
        return {
            "lambda": self.lam,
            "argmax": self.argmax.as_dict(),
            "starts_tried": self.starts_tried,
            "converged": self.converged,
            "search_box": self.search_box,
            "grid_max": self.grid_max,
        }

    def to_json(self, path=None) -> str:
        text = json.dumps(self.as_dict(), indent=2, sort_keys=True)
        if path is not None:
            Path(path).write_text(text + "\n")
        return text


def search_box(mesh: TriMesh) -> dict:
    lo, hi = mesh.vertices.min(0), mesh.vertices.max(0)
    pad = 0.1 * (hi - lo)
    diam = mesh.diameter()
    h = mesh.mean_edge_length
    return {
        "lo": (lo - pad).tolist(),
        "hi": (hi + pad).tolist(),
        "T1": max(4.0 * h * h, 1e-4 * diam * diam),
        "T2": 4.0 * diam * diam,
    }


def entropy(mesh: TriMesh, opt: EntropyOptions | None = None) -> EntropyResult:
    """Multistart maximization of F over the search box.

    A coarse grid (1-point quadrature) seeds bounded quasi-Newton ascents on
    the 3-point functional. Variables are the center in box-normalized
    coordinates and log t0 relative to the squared diameter.
    """
    opt = EntropyOptions() if opt is None else opt
    if not mesh.closed:
        raise InputError("entropy needs a closed mesh")
    box = search_box(mesh)
    lo, hi = np.array(box["lo"]), np.array(box["hi"])
    mid, half = (lo + hi) / 2.0, np.maximum((hi - lo) / 2.0, 1e-12)
    scale = float(np.max(half)) ** 2
    lt_lo, lt_hi = math.log(box["T1"] / scale), math.log(box["T2"] / scale)
    l = mesh.dim_ambient

    def decode(z):
        return mid + half * z[:l], scale * math.exp(z[l])

    # grid phase
    axis = np.linspace(-1.0, 1.0, opt.grid_nx) if opt.grid_nx > 1 else np.zeros(1)
    zx = np.stack(np.meshgrid(*([axis] * l), indexing="ij"), -1).reshape(-1, l)
    zt = np.linspace(lt_lo, lt_hi, opt.grid_nt)
    cand = np.concatenate([np.repeat(zx, len(zt), 0), np.tile(zt, len(zx))[:, None]], 1)
    nodes1, w1 = quadrature(mesh, 1)
    vals = _kernel_sums(nodes1, w1, mid + half * cand[:, :l], scale * np.exp(cand[:, l]), 2)[0]
    order = np.lexsort((-cand[:, l], -vals))  # larger F first, then larger scale
    starts = cand[order[: opt.n_starts]]
    rng = np.random.default_rng(opt.seed)
    starts = starts + opt.jitter * rng.standard_normal(starts.shape)
    bounds = [(-1.0, 1.0)] * l + [(lt_lo, lt_hi)]
    starts = np.clip(starts, [b[0] for b in bounds], [b[1] for b in bounds])

    nodes, w = quadrature(mesh, 3)

    def objective(z):
        x0, t0 = decode(z)
        f, gx, gt = _kernel_sums(nodes, w, x0[None, :], [t0], 2, want_grad=True)
        grad = np.concatenate([-gx[0] * half, [-gt[0] * t0]])
        return -f[0], grad

    results = []
    for z0 in starts:
        res = minimize(
            objective,
            z0,
            jac=True,
            method="L-BFGS-B",
            bounds=bounds,
            options={"maxiter": opt.max_iters, "ftol": opt.ascent_tol, "gtol": 1e-10},
        )
        if np.isfinite(res.fun):
            x0, t0 = decode(res.x)
            results.append((-float(res.fun), t0, tuple(x0), bool(res.success)))
    grid_max = float(vals.max())
    if not results:
        logger.warning("entropy ascent diverged from every start; reporting the grid maximum")
        i = int(np.argmax(vals))
        x0, t0 = decode(cand[i])
        return EntropyResult(grid_max, SpacetimePoint(x0, t0), len(starts), False, box, grid_max)
    # deterministic merge: value, then smaller t0, then lexicographic x0
    results.sort(key=lambda r: (-round(r[0], 12), r[1], r[2]))
    lam, t0, x0, ok = results[0]
    if not np.isfinite(lam):
        raise OptimizerDiverged("non-finite entropy value")
    return EntropyResult(lam, SpacetimePoint(np.array(x0), t0), len(starts), ok, box, grid_max)


# shrinkers ---------------------------------------------------------------


@dataclass
class ShrinkerResidual:
    field: np.ndarray
    l2: float

    def as_dict(self):
        return {"l2": self.l2, "max": float(np.linalg.norm(self.field, axis=1).max())}


def shrinker_residual(mesh: TriMesh, p) -> ShrinkerResidual:
    """(H + (x - x0) / (2 t0)) projected onto the discrete normal spaces.

    ``l2`` is the root-mean-square over the surface (area weighted, divided by
    total area) so it reads as a typical pointwise residual.
    """
    p = _point(p)
    raw = mesh.mean_curvature + (mesh.vertices - p.x0) / (2.0 * p.t0)
    res = mesh.normal_part(raw)
    a = mesh.vertex_areas
    l2 = math.sqrt(float((a * (res**2).sum(1)).sum() / a.sum()))
    return ShrinkerResidual(res, l2)


def export_F_grid(mesh: TriMesh, x0s, t0s, path, order: int = 3) -> np.ndarray:
    """Evaluate F on every (x0, t0) pair of the product grid and write a CSV."""
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    t0s = np.atleast_1d(np.asarray(t0s, dtype=float))
    xs = np.repeat(x0s, len(t0s), 0)
    ts = np.tile(t0s, len(x0s))
    vals = F_batch(mesh, xs, ts, order)
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow([f"x0_{i}" for i in range(x0s.shape[1])] + ["t0", "F"])
        for x, t, v in zip(xs, ts, vals):
            wr.writerow([repr(float(c)) for c in x] + [repr(float(t)), repr(float(v))])
    return vals
