"""Catalog meshes: icospheres, ellipsoids, tori, and spheres placed inside S^3."""
from __future__ import annotations

import math

import numpy as np

from .geometry import TriMesh

_PHI = (1.0 + math.sqrt(5.0)) / 2.0
_ICO_V = np.array(
    [
        [-1, _PHI, 0], [1, _PHI, 0], [-1, -_PHI, 0], [1, -_PHI, 0],
        [0, -1, _PHI], [0, 1, _PHI], [0, -1, -_PHI], [0, 1, -_PHI],
        [_PHI, 0, -1], [_PHI, 0, 1], [-_PHI, 0, -1], [-_PHI, 0, 1],
    ],
    dtype=float,
)
_ICO_F = np.array(
    [
        [0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
        [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
        [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
        [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1],
    ]
)

_UNIT_ICO_CACHE: dict[int, tuple[np.ndarray, np.ndarray]] = {}


def _unit_icosphere(subdivisions: int):
    if subdivisions in _UNIT_ICO_CACHE:
        return _UNIT_ICO_CACHE[subdivisions]
    verts = _ICO_V / np.linalg.norm(_ICO_V, axis=1)[:, None]
    faces = _ICO_F
    for _ in range(subdivisions):
        edges = np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])
        key = np.sort(edges, axis=1)
        uniq, inv = np.unique(key, axis=0, return_inverse=True)
        inv = inv.ravel()
        mids = verts[uniq[:, 0]] + verts[uniq[:, 1]]
        mids /= np.linalg.norm(mids, axis=1)[:, None]
        base = len(verts)
        m = inv.reshape(3, -1).T + base  # columns: mid(01), mid(12), mid(20)
        a, b, c = faces[:, 0], faces[:, 1], faces[:, 2]
        ab, bc, ca = m[:, 0], m[:, 1], m[:, 2]
        faces = np.concatenate(
            [
                np.stack([a, ab, ca], 1),
                np.stack([b, bc, ab], 1),
                np.stack([c, ca, bc], 1),
                np.stack([ab, bc, ca], 1),
            ]
        )
        verts = np.concatenate([verts, mids])
    _UNIT_ICO_CACHE[subdivisions] = (verts, faces)
    return verts, faces


def icosphere(subdivisions: int = 3, radius: float = 1.0, center=None, dim: int = 3) -> TriMesh:
    """Round sphere in the first three coordinates of R^dim."""
    v, f = _unit_icosphere(subdivisions)
    pts = np.zeros((len(v), dim))
    pts[:, :3] = radius * v
    if center is not None:
        pts += np.asarray(center, dtype=float)
    return TriMesh(pts, f)


def ellipsoid(subdivisions: int = 3, axes=(2.0, 1.0, 1.0), center=None) -> TriMesh:
    v, f = _unit_icosphere(subdivisions)
    pts = v * np.asarray(axes, dtype=float)
    if center is not None:
        pts = pts + np.asarray(center, dtype=float)
    return TriMesh(pts, f)


def torus(major: float = 2.0, minor: float = 1.0, n_major: int = 48, n_minor: int = 24) -> TriMesh:
    u = 2 * math.pi * np.arange(n_major) / n_major
    w = 2 * math.pi * np.arange(n_minor) / n_minor
    uu, ww = np.meshgrid(u, w, indexing="ij")
    r = major + minor * np.cos(ww)
    pts = np.stack([r * np.cos(uu), r * np.sin(uu), minor * np.sin(ww)], -1).reshape(-1, 3)
    idx = np.arange(n_major * n_minor).reshape(n_major, n_minor)
    i0 = idx
    i1 = np.roll(idx, -1, axis=0)
    i2 = np.roll(idx, -1, axis=1)
    i3 = np.roll(np.roll(idx, -1, axis=0), -1, axis=1)
    faces = np.concatenate(
        [np.stack([i0, i1, i3], -1).reshape(-1, 3), np.stack([i0, i3, i2], -1).reshape(-1, 3)]
    )
    return TriMesh(pts, faces)


def geodesic_sphere_in_s3(
    geodesic_radius: float, subdivisions: int = 3, rho: float = 1.0
) -> TriMesh:
    """Geodesic sphere of the given intrinsic radius in S^3(rho), centered at the pole rho*e4.

    Points are rho*(sin(a/rho) * w, cos(a/rho)) with w on the unit 2-sphere.
    """
    v, f = _unit_icosphere(subdivisions)
    ang = geodesic_radius / rho
    pts = np.concatenate([rho * math.sin(ang) * v, np.full((len(v), 1), rho * math.cos(ang))], 1)
    return TriMesh(pts, f)


def clifford_torus_mesh(r1: float = 1.0, r2: float = 1.0, n1: int = 32, n2: int = 32) -> TriMesh:
    """Flat product torus S^1(r1) x S^1(r2) in R^4."""
    u = 2 * math.pi * np.arange(n1) / n1
    w = 2 * math.pi * np.arange(n2) / n2
    uu, ww = np.meshgrid(u, w, indexing="ij")
    pts = np.stack(
        [r1 * np.cos(uu), r1 * np.sin(uu), r2 * np.cos(ww), r2 * np.sin(ww)], -1
    ).reshape(-1, 4)
    idx = np.arange(n1 * n2).reshape(n1, n2)
    i1 = np.roll(idx, -1, axis=0)
    i2 = np.roll(idx, -1, axis=1)
    i3 = np.roll(i1, -1, axis=1)
    faces = np.concatenate(
        [np.stack([idx, i1, i3], -1).reshape(-1, 3), np.stack([idx, i3, i2], -1).reshape(-1, 3)]
    )
    return TriMesh(pts, faces)


def square_patch(n: int = 8, size: float = 1.0) -> TriMesh:
    """Open flat grid in the z = 0 plane (closed=False)."""
    xs = np.linspace(0.0, size, n + 1)
    xx, yy = np.meshgrid(xs, xs, indexing="ij")
    pts = np.stack([xx, yy, np.zeros_like(xx)], -1).reshape(-1, 3)
    idx = np.arange((n + 1) ** 2).reshape(n + 1, n + 1)
    a, b = idx[:-1, :-1], idx[1:, :-1]
    c, d = idx[:-1, 1:], idx[1:, 1:]
    faces = np.concatenate([np.stack([a, b, d], -1).reshape(-1, 3), np.stack([a, d, c], -1).reshape(-1, 3)])
    return TriMesh(pts, faces, closed=False)


def make_mesh(spec: dict) -> TriMesh:
    """Build a catalog mesh from a descriptor such as {"kind": "icosphere", "subdivisions": 4}."""
    spec = dict(spec)
    kind = spec.pop("kind")
    builders = {
        "icosphere": icosphere,
        "ellipsoid": ellipsoid,
        "torus": torus,
        "geodesic_sphere_s3": geodesic_sphere_in_s3,
        "clifford_torus": clifford_torus_mesh,
    }
    if kind not in builders:
        raise KeyError(f"unknown mesh kind {kind!r}")
    if "axes" in spec:
        spec["axes"] = tuple(spec["axes"])
    return builders[kind](**spec)
