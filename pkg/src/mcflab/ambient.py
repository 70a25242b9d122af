"""Analytically embedded ambient spaces N in R^l.

Each ambient supplies nearest-point projection, orthonormal normal frames,
the second fundamental form ``B`` of N in R^l, and the forcing term
``P = -trace(B | T_x M)`` that turns intrinsic mean curvature flow in N into a
forced flow in R^l with velocity ``H + P``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Callable

import numpy as np

from .errors import (
    BasisNotTangent,
    EmptyRegion,
    GraphDoesNotExist,
    InputError,
    NotOnSurface,
    OutsideTube,
)

ON_SURFACE_TOL = 1e-8


def _as_points(x) -> tuple[np.ndarray, bool]:
    arr = np.asarray(x, dtype=float)
    return (arr[None, :], True) if arr.ndim == 1 else (arr, False)


def _box(region, dim):
    lo, hi = (np.asarray(r, dtype=float) for r in region)
    if lo.shape != (dim,) or hi.shape != (dim,) or np.any(hi < lo):
        raise EmptyRegion("region must be a (lo, hi) box in R^l with lo <= hi")
    return lo, hi


class AmbientSpace:
    """Base class. Subclasses fill in the geometry of one catalog kind."""

    kind = "abstract"
    dim: int
    codim: int

    # -- geometry hooks ----------------------------------------------------
    def _project(self, pts: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def constraints(self, pts: np.ndarray) -> np.ndarray:
        """(n, codim) defining equations, zero on N."""
        raise NotImplementedError

    def constraint_gradients(self, pts: np.ndarray) -> np.ndarray:
        """(n, codim, l) gradients of :meth:`constraints`."""
        raise NotImplementedError

    def normal_frames(self, pts: np.ndarray) -> np.ndarray:
        """(n, codim, l) orthonormal bases of the normal spaces of N."""
        raise NotImplementedError

    def second_fundamental_form(self, pts, v, w) -> np.ndarray:
        """B(v, w) at each point, normal to N; v and w are (n, l) tangent vectors."""
        raise NotImplementedError

    def curvature_radius(self, x) -> float:
        raise NotImplementedError

    def _sup_B(self, region) -> float:
        raise NotImplementedError

    def dilated(self, c: float, about=None) -> "AmbientSpace":
        """The image of N under x -> c * (x - about)."""
        raise NotImplementedError

    def describe(self) -> dict:
        raise NotImplementedError

    # -- shared behaviour --------------------------------------------------
    @property
    def is_flat(self) -> bool:
        return False

    @property
    def scale(self) -> float:
        return 1.0

    def project(self, x) -> np.ndarray:
        pts, single = _as_points(x)
        out = self._project(pts)
        return out[0] if single else out

    def on_surface_error(self, x) -> np.ndarray:
        pts, _ = _as_points(x)
        return np.linalg.norm(self.constraints(pts), axis=1) / self._constraint_scale()

    def _constraint_scale(self) -> float:
        return 1.0

    def tangent_projector(self, x) -> np.ndarray:
        pts, single = _as_points(x)
        nf = self.normal_frames(pts)
        proj = np.eye(self.dim)[None] - np.einsum("nki,nkj->nij", nf, nf)
        return proj[0] if single else proj

    def tangent_frames(self, pts: np.ndarray, frames: np.ndarray) -> np.ndarray:
        """Project (n, k, l) frames into T_x N and re-orthonormalize them."""
        nf = self.normal_frames(pts)
        f = frames - np.einsum("nmi,nki,nkj->nmj", frames, nf, nf)
        q, _ = np.linalg.qr(np.transpose(f, (0, 2, 1)))
        return np.transpose(q, (0, 2, 1))

    def forcing(self, pts: np.ndarray, frames: np.ndarray) -> np.ndarray:
        """Vectorized P = -sum_i B(e_i, e_i) after moving ``frames`` into T_x N."""
        if self.is_flat:
            return np.zeros_like(pts)
        e = self.tangent_frames(pts, frames)
        out = np.zeros_like(pts)
        for i in range(e.shape[1]):
            out -= self.second_fundamental_form(pts, e[:, i], e[:, i])
        return out

    def forcing_term(self, x, tangent_basis) -> np.ndarray:
        """Checked single-point forcing term for an orthonormal basis of a plane in T_x N."""
        x = np.asarray(x, dtype=float)
        basis = np.atleast_2d(np.asarray(tangent_basis, dtype=float))
        if self.on_surface_error(x)[0] > ON_SURFACE_TOL:
            raise NotOnSurface("point is not on the ambient")
        gram = basis @ basis.T
        if np.abs(gram - np.eye(len(basis))).max() > ON_SURFACE_TOL:
            raise BasisNotTangent("basis is not orthonormal")
        if self.is_flat:
            return np.zeros_like(x)
        nf = self.normal_frames(x[None])[0]
        if np.abs(basis @ nf.T).max() > ON_SURFACE_TOL:
            raise BasisNotTangent("basis is not tangent to the ambient")
        out = np.zeros_like(x)
        for e in basis:
            out -= self.second_fundamental_form(x[None], e[None], e[None])[0]
        return out

    def curvature_bound_K(self, region=None, surface_dim: int = 2) -> float:
        """Upper bound for |P| over surface_dim-planes at points of N inside ``region``."""
        return surface_dim * self._sup_B(region)

    @cached_property
    def forcing_bound_K(self) -> float:
        return self.curvature_bound_K(None, 2)

    # -- graph of the dilated ambient over a tangent space ------------------
    def _graph_heights(self, x: np.ndarray, tang: np.ndarray, nrm: np.ndarray, u: np.ndarray, xi: float):
        """Normal offsets f(u) with x + u + f(u) on xi*(N - x) + x, for u in T_x N."""
        base = x[None] + u / xi
        g = np.zeros((len(u), self.codim))
        for _ in range(60):
            y = base + g @ nrm
            c = self.constraints(y)
            jac = np.einsum("nki,mi->nkm", self.constraint_gradients(y), nrm)
            step = np.linalg.solve(jac, c[..., None])[..., 0]
            g -= step
            if np.abs(step).max() < 1e-15 * max(1.0, self.scale):
                break
        else:
            raise GraphDoesNotExist("normal-graph solve did not converge")
        y = base + g @ nrm
        if np.abs(self.constraints(y)).max() > 1e-9 * max(1.0, self.scale) ** 2:
            raise GraphDoesNotExist("dilated ambient is not a graph over the tangent space")
        return xi * g

    def flatness_profile(self, x, xi: float, D: float, n_per_axis: int = 5) -> dict:
        """Sampled sup norms of the graph f of xi*(N - x) + x over T_x N inside B_D.

        Derivatives are central differences; ``c3_probe`` is the largest
        Hessian difference quotient and only indicates third-order size.
        """
        x = np.asarray(x, dtype=float)
        if xi < 1:
            raise InputError("dilation factor must be >= 1")
        if self.is_flat:
            return {"c0": 0.0, "c1": 0.0, "c2": 0.0, "c2_norm": 0.0, "c3_probe": 0.0}
        if xi * self.curvature_radius(x) <= 2 * D:
            raise GraphDoesNotExist("xi * curvature radius must exceed 2D")
        if self.on_surface_error(x)[0] > ON_SURFACE_TOL:
            raise NotOnSurface("point is not on the ambient")
        nrm = self.normal_frames(x[None])[0]
        proj = np.eye(self.dim) - nrm.T @ nrm
        w, vecs = np.linalg.eigh(proj)
        tang = vecs[:, w > 0.5].T  # (d, l)
        d = len(tang)
        axis = np.linspace(-D, D, n_per_axis)
        grid = np.stack(np.meshgrid(*([axis] * d), indexing="ij"), -1).reshape(-1, d)
        grid = grid[np.linalg.norm(grid, axis=1) <= D * (1 + 1e-12)]
        h = 1e-3 * D

        def f_at(coords):
            return self._graph_heights(x, tang, nrm, coords @ tang, xi)

        f0 = f_at(grid)
        eye = np.eye(d) * h
        grad = np.stack([(f_at(grid + e) - f_at(grid - e)) / (2 * h) for e in eye], 1)
        hess = np.empty((len(grid), d, d, self.codim))
        for i in range(d):
            for j in range(i, d):
                if i == j:
                    val = (f_at(grid + eye[i]) - 2 * f0 + f_at(grid - eye[i])) / h**2
                else:
                    val = (
                        f_at(grid + eye[i] + eye[j])
                        - f_at(grid + eye[i] - eye[j])
                        - f_at(grid - eye[i] + eye[j])
                        + f_at(grid - eye[i] - eye[j])
                    ) / (4 * h**2)
                hess[:, i, j] = hess[:, j, i] = val
        c0 = float(np.linalg.norm(f0, axis=1).max())
        c1 = float(np.sqrt((grad**2).sum((1, 2))).max())
        c2 = float(np.sqrt((hess**2).sum((1, 2, 3))).max())
        # third-order probe: Hessian change across one sample spacing
        step = axis[1] - axis[0] if n_per_axis > 1 else D
        c3 = 0.0
        if len(grid) > 1:
            diffs = hess[:, None] - hess[None]
            dist = np.linalg.norm(grid[:, None] - grid[None], axis=2)
            near = (dist > 0) & (dist <= step * (1 + 1e-9))
            if near.any():
                c3 = float((np.sqrt((diffs**2).sum((2, 3, 4)))[near] / dist[near]).max())
        return {"c0": c0, "c1": c1, "c2": c2, "c2_norm": max(c0, c1, c2), "c3_probe": c3}

    def rescaled_flatness(self, x, xi: float, D: float) -> float:
        """C^2 size of the dilated ambient as a graph over T_x N inside B_D(x)."""
        return self.flatness_profile(x, xi, D)["c2_norm"]


@dataclass(frozen=True, eq=False)
class Euclidean(AmbientSpace):
    dim: int = 3
    kind = "euclidean"
    codim = 0

    @property
    def is_flat(self):
        return True

    def _project(self, pts):
        return pts.copy()

    def constraints(self, pts):
        return np.zeros((len(pts), 0))

    def constraint_gradients(self, pts):
        return np.zeros((len(pts), 0, self.dim))

    def normal_frames(self, pts):
        return np.zeros((len(pts), 0, self.dim))

    def second_fundamental_form(self, pts, v, w):
        return np.zeros_like(np.asarray(pts, dtype=float))

    def curvature_radius(self, x):
        return math.inf

    def _sup_B(self, region):
        if region is not None:
            _box(region, self.dim)
        return 0.0

    def dilated(self, c, about=None):
        return self

    def describe(self):
        return {"kind": "euclidean", "dim": self.dim}


@dataclass(frozen=True, eq=False)
class RoundSphere(AmbientSpace):
    """Sphere of radius ``radius`` about ``center`` in R^dim (a hypersurface)."""

    dim: int = 4
    radius: float = 1.0
    center: tuple = None
    kind = "round_sphere"
    codim = 1

    def __post_init__(self):
        if self.radius <= 0:
            raise InputError("sphere radius must be positive")
        c = np.zeros(self.dim) if self.center is None else np.asarray(self.center, dtype=float)
        if c.shape != (self.dim,):
            raise InputError("center has the wrong dimension")
        object.__setattr__(self, "center", tuple(float(t) for t in c))

    @property
    def _c(self):
        return np.asarray(self.center)

    @property
    def scale(self):
        return self.radius

    def _constraint_scale(self):
        return self.radius

    def _project(self, pts):
        rel = pts - self._c
        r = np.linalg.norm(rel, axis=1)
        # radial projection is the nearest point everywhere except the center
        if np.any(r < 1e-12 * self.radius):
            raise OutsideTube("the center has no nearest point on the sphere")
        return self._c + self.radius * rel / r[:, None]

    def constraints(self, pts):
        rel = pts - self._c
        return (np.sqrt((rel**2).sum(1)) - self.radius)[:, None]

    def constraint_gradients(self, pts):
        rel = pts - self._c
        return (rel / np.linalg.norm(rel, axis=1)[:, None])[:, None, :]

    def normal_frames(self, pts):
        return self.constraint_gradients(pts)

    def second_fundamental_form(self, pts, v, w):
        rel = np.asarray(pts, dtype=float) - self._c
        return -((v * w).sum(1) / self.radius**2)[:, None] * rel

    def curvature_radius(self, x):
        return self.radius

    def _sup_B(self, region):
        if region is not None:
            lo, hi = _box(region, self.dim)
            nearest = np.clip(self._c, lo, hi)
            far = np.where(np.abs(lo - self._c) > np.abs(hi - self._c), lo, hi)
            if np.linalg.norm(nearest - self._c) > self.radius or np.linalg.norm(far - self._c) < self.radius:
                raise EmptyRegion("region does not meet the sphere")
        return 1.0 / self.radius

    def dilated(self, c, about=None):
        about = np.zeros(self.dim) if about is None else np.asarray(about, dtype=float)
        return RoundSphere(self.dim, self.radius * c, tuple(c * (self._c - about)))

    def describe(self):
        return {"kind": "round_sphere", "dim": self.dim, "radius": self.radius, "center": list(self.center)}


@dataclass(frozen=True, eq=False)
class CliffordTorus(AmbientSpace):
    """Product torus S^1(r1) x S^1(r2) in R^4, codimension 2."""

    r1: float = 1.0
    r2: float = 1.0
    center: tuple = None
    kind = "clifford_torus"
    dim = 4
    codim = 2

    def __post_init__(self):
        if self.r1 <= 0 or self.r2 <= 0:
            raise InputError("torus radii must be positive")
        c = np.zeros(4) if self.center is None else np.asarray(self.center, dtype=float)
        object.__setattr__(self, "center", tuple(float(t) for t in c))

    @property
    def _c(self):
        return np.asarray(self.center)

    @property
    def scale(self):
        return max(self.r1, self.r2)

    def _constraint_scale(self):
        return self.scale

    def _split(self, pts):
        rel = np.asarray(pts, dtype=float) - self._c
        return rel[:, :2], rel[:, 2:]

    def _project(self, pts):
        a, b = self._split(pts)
        ra, rb = np.linalg.norm(a, axis=1), np.linalg.norm(b, axis=1)
        if np.any(ra < 1e-12 * self.r1) or np.any(rb < 1e-12 * self.r2):
            raise OutsideTube("point on the focal set of the torus")
        return self._c + np.concatenate([self.r1 * a / ra[:, None], self.r2 * b / rb[:, None]], 1)

    def constraints(self, pts):
        a, b = self._split(pts)
        return np.stack([np.linalg.norm(a, axis=1) - self.r1, np.linalg.norm(b, axis=1) - self.r2], 1)

    def constraint_gradients(self, pts):
        a, b = self._split(pts)
        n = len(a)
        g = np.zeros((n, 2, 4))
        g[:, 0, :2] = a / np.linalg.norm(a, axis=1)[:, None]
        g[:, 1, 2:] = b / np.linalg.norm(b, axis=1)[:, None]
        return g

    def normal_frames(self, pts):
        return self.constraint_gradients(pts)

    def second_fundamental_form(self, pts, v, w):
        a, b = self._split(pts)
        out = np.zeros((len(a), 4))
        out[:, :2] = -((v[:, :2] * w[:, :2]).sum(1) / self.r1**2)[:, None] * a
        out[:, 2:] = -((v[:, 2:] * w[:, 2:]).sum(1) / self.r2**2)[:, None] * b
        return out

    def curvature_radius(self, x):
        return min(self.r1, self.r2)

    def _sup_B(self, region):
        if region is not None:
            lo, hi = _box(region, 4)
            t = np.linspace(0, 2 * math.pi, 64, endpoint=False)
            uu, vv = np.meshgrid(t, t)
            pts = self._c + np.stack(
                [self.r1 * np.cos(uu), self.r1 * np.sin(uu), self.r2 * np.cos(vv), self.r2 * np.sin(vv)], -1
            ).reshape(-1, 4)
            if not np.any(np.all((pts >= lo) & (pts <= hi), axis=1)):
                raise EmptyRegion("region does not meet the torus")
        return max(1.0 / self.r1, 1.0 / self.r2)

    def dilated(self, c, about=None):
        about = np.zeros(4) if about is None else np.asarray(about, dtype=float)
        return CliffordTorus(self.r1 * c, self.r2 * c, tuple(c * (self._c - about)))

    def describe(self):
        return {"kind": "clifford_torus", "r1": self.r1, "r2": self.r2, "center": list(self.center)}


@dataclass(frozen=True, eq=False)
class ImplicitHypersurface(AmbientSpace):
    """Zero level set of ``phi`` with vectorized gradient and Hessian evaluators.

    ``box`` is the (lo, hi) region sampled for the cached forcing bound.
    """

    dim: int
    phi: Callable
    grad: Callable
    hess: Callable
    box: tuple = None
    expression: str = None
    length_scale: float = 1.0
    kind = "implicit"
    codim = 1
    _bound_cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.box is None:
            s = 2.0 * self.length_scale
            object.__setattr__(self, "box", (tuple([-s] * self.dim), tuple([s] * self.dim)))

    @classmethod
    def from_expression(cls, expression: str, dim: int, box=None) -> "ImplicitHypersurface":
        """Polynomial level function in x1..x_dim, e.g. ``"x1**2 + x2**2 + x3**2 + x4**2 - 1"``."""
        import sympy

        syms = sympy.symbols(f"x1:{dim + 1}")
        local = {str(s): s for s in syms}
        try:
            expr = sympy.sympify(expression, locals=local, convert_xor=True)
        except (sympy.SympifyError, SyntaxError, TypeError) as exc:
            raise InputError(f"cannot parse level function {expression!r}: {exc}") from exc
        if not expr.free_symbols <= set(syms) or not expr.is_polynomial(*syms):
            raise InputError(f"level function must be a polynomial in x1..x{dim}")
        grad_e = [sympy.diff(expr, s) for s in syms]
        hess_e = [[sympy.diff(g, s) for s in syms] for g in grad_e]
        f_phi = sympy.lambdify(syms, expr, "numpy")
        f_grad = sympy.lambdify(syms, grad_e, "numpy")
        f_hess = sympy.lambdify(syms, hess_e, "numpy")

        def _bcast(val, n):
            return np.broadcast_to(np.asarray(val, dtype=float), (n,))

        def phi(p):
            return _bcast(f_phi(*p.T), len(p))

        def grad(p):
            return np.stack([_bcast(g, len(p)) for g in f_grad(*p.T)], 1)

        def hess(p):
            rows = f_hess(*p.T)
            return np.stack([np.stack([_bcast(h, len(p)) for h in r], 1) for r in rows], 1)

        return cls(dim, phi, grad, hess, box=box, expression=expression)

    @property
    def scale(self):
        return self.length_scale

    def _constraint_scale(self):
        return 1.0

    def _project(self, pts):
        y = pts.copy()
        tol = 1e-12 * self.length_scale
        for _ in range(50):
            g = self.grad(y)
            gg = (g**2).sum(1)
            if np.any(gg < 1e-300):
                raise OutsideTube("vanishing gradient during projection")
            step = (self.phi(y) / gg)[:, None] * g
            y = y - step
            if np.abs(step).max() < tol:
                break
        else:
            raise OutsideTube("Newton projection did not converge in 50 iterations")
        if np.any(np.linalg.norm(y - pts, axis=1) > 0.5 * self._min_radius(y)):
            raise OutsideTube("point outside the projection tube")
        return y

    def constraints(self, pts):
        g = self.grad(pts)
        return (self.phi(pts) / np.linalg.norm(g, axis=1))[:, None]

    def constraint_gradients(self, pts):
        return self.normal_frames(pts)

    def normal_frames(self, pts):
        g = self.grad(np.asarray(pts, dtype=float))
        return (g / np.linalg.norm(g, axis=1)[:, None])[:, None, :]

    def second_fundamental_form(self, pts, v, w):
        pts = np.asarray(pts, dtype=float)
        g = self.grad(pts)
        gn = np.linalg.norm(g, axis=1)
        hw = np.einsum("nij,nj->ni", self.hess(pts), w)
        return -((v * hw).sum(1) / gn)[:, None] * (g / gn[:, None])

    def _principal_abs_max(self, pts):
        g = self.grad(pts)
        gn = np.linalg.norm(g, axis=1)
        n = g / gn[:, None]
        proj = np.eye(self.dim)[None] - n[:, :, None] * n[:, None, :]
        shape = proj @ self.hess(pts) @ proj / gn[:, None, None]
        return np.abs(np.linalg.eigvalsh(shape)).max(1)

    def _min_radius(self, pts):
        k = self._principal_abs_max(pts)
        return np.where(k > 0, 1.0 / np.maximum(k, 1e-300), np.inf)

    def curvature_radius(self, x):
        return float(self._min_radius(np.asarray(x, dtype=float)[None])[0])

    def _sup_B(self, region, n_samples: int = 4096):
        region = self.box if region is None else region
        key = tuple(map(tuple, region))
        if key in self._bound_cache:
            return self._bound_cache[key]
        lo, hi = _box(region, self.dim)
        rng = np.random.default_rng(0)
        pts = lo + (hi - lo) * rng.random((n_samples, self.dim))
        keep = []
        for p in pts:  # projection is per point so one failure does not poison the batch
            try:
                q = self._project(p[None])[0]
            except OutsideTube:
                continue
            if np.all(q >= lo - 1e-12) and np.all(q <= hi + 1e-12):
                keep.append(q)
        if not keep:
            raise EmptyRegion("no sampled point of the level set lies in the region")
        val = 1.5 * float(self._principal_abs_max(np.array(keep)).max())
        self._bound_cache[key] = val
        return val

    def dilated(self, c, about=None):
        about = np.zeros(self.dim) if about is None else np.asarray(about, dtype=float)
        phi, grad, hess = self.phi, self.grad, self.hess

        def back(y):
            return about + np.asarray(y, dtype=float) / c

        lo, hi = (np.asarray(b, dtype=float) for b in self.box)
        return ImplicitHypersurface(
            self.dim,
            lambda y: phi(back(y)),
            lambda y: grad(back(y)) / c,
            lambda y: hess(back(y)) / c**2,
            box=(tuple(c * (lo - about)), tuple(c * (hi - about))),
            expression=None,
            length_scale=self.length_scale * c,
        )

    def describe(self):
        return {
            "kind": "implicit",
            "dim": self.dim,
            "expression": self.expression,
            "box": [list(self.box[0]), list(self.box[1])],
        }


_AMBIENT_KEYS = {
    "euclidean": {"dim"},
    "round_sphere": {"dim", "radius", "center"},
    "clifford_torus": {"r1", "r2", "center"},
    "implicit": {"dim", "expression", "box"},
}


def ambient_from_spec(spec: dict) -> AmbientSpace:
    """Build an ambient from a config descriptor (``kind`` plus parameters)."""
    spec = dict(spec)
    kind = spec.pop("kind", None)
    if kind not in _AMBIENT_KEYS:
        raise InputError(f"unknown ambient kind {kind!r}")
    extra = set(spec) - _AMBIENT_KEYS[kind]
    if extra:
        raise InputError(f"unknown ambient parameters {sorted(extra)}")
    if kind == "euclidean":
        return Euclidean(int(spec.get("dim", 3)))
    if kind == "round_sphere":
        return RoundSphere(int(spec.get("dim", 4)), float(spec.get("radius", 1.0)), spec.get("center"))
    if kind == "clifford_torus":
        return CliffordTorus(float(spec.get("r1", 1.0)), float(spec.get("r2", 1.0)), spec.get("center"))
    if "expression" not in spec or "dim" not in spec:
        raise InputError("implicit ambient needs 'expression' and 'dim'")
    return ImplicitHypersurface.from_expression(spec["expression"], int(spec["dim"]), box=spec.get("box"))
