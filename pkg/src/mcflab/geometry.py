"""Triangle meshes in R^l and the discrete differential geometry built on them.

Conventions: ``H`` is the cotangent Laplace-Beltrami of the position with
mixed-Voronoi lumped mass, so it points toward the center of a round sphere
and a flow with velocity ``H`` shrinks spheres.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .errors import (
    DegenerateResult,
    DegenerateTriangle,
    NonManifoldMesh,
    NotNormalField,
)

COT_CLAMP = 1.0e6
AREA_EPS = 1.0e-14


@dataclass(frozen=True, eq=False)
class TriMesh:
    """Closed oriented triangle mesh with vertices in R^l.

    ``closed=False`` skips the 2-manifold check; it exists for patches used in
    tests and is rejected by everything that integrates over the surface.
    """

    vertices: np.ndarray
    faces: np.ndarray
    closed: bool = True
    _checked: bool = field(default=False, repr=False)
    # topology-derived data shared by every mesh with the same connectivity
    _topology: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        f = np.array(self.faces, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] < 2:
            raise NonManifoldMesh("vertices must be an (n, l) array")
        if f.ndim != 2 or f.shape[1] != 3:
            raise NonManifoldMesh("faces must be an (m, 3) array")
        v.setflags(write=False)
        f.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)
        if not self._checked:
            self._validate()

    def _validate(self):
        nv = len(self.vertices)
        if len(self.faces) == 0:
            raise NonManifoldMesh("mesh has no faces")
        if self.faces.min() < 0 or self.faces.max() >= nv:
            raise NonManifoldMesh("face index out of range")
        if not np.all(np.isfinite(self.vertices)):
            raise NonManifoldMesh("non-finite vertex coordinates")
        f = self.faces
        if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
            raise NonManifoldMesh("face with repeated vertex")
        if np.any(self.face_areas <= AREA_EPS):
            raise DegenerateTriangle("zero-area face")
        if self.closed:
            counts = self._edge_face_counts
            if np.any(counts != 2):
                raise NonManifoldMesh(
                    f"{int(np.sum(counts != 2))} edges do not belong to exactly two faces"
                )
            chi = self.euler_characteristic
            if chi > 2 or chi % 2:
                raise NonManifoldMesh(f"Euler characteristic {chi} is not an even integer <= 2")

    # topology -------------------------------------------------------------
    @property
    def dim_ambient(self) -> int:
        return self.vertices.shape[1]

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    def _topo(self, key, build):
        if key not in self._topology:
            self._topology[key] = build()
        return self._topology[key]

    @property
    def _half_edges(self):
        f = self.faces
        return self._topo("half_edges", lambda: np.concatenate([f[:, [0, 1]], f[:, [1, 2]], f[:, [2, 0]]]))

    @property
    def _edge_face_counts(self):
        return self._topo(
            "edge_counts",
            lambda: np.unique(np.sort(self._half_edges, axis=1), axis=0, return_counts=True)[1],
        )

    @property
    def edges(self) -> np.ndarray:
        """Unique undirected edges, sorted index pairs."""
        return self._topo("edges", lambda: np.unique(np.sort(self._half_edges, axis=1), axis=0))

    @property
    def _cotan_pattern(self):
        """CSR structure of the cotangent matrix and the slot of every face contribution."""

        def build():
            f = self.faces
            rows, cols = [], []
            for k in range(3):
                i, j = f[:, (k + 1) % 3], f[:, (k + 2) % 3]
                rows += [i, j, i, j]
                cols += [j, i, i, j]
            rows, cols = np.concatenate(rows), np.concatenate(cols)
            n = self.n_vertices
            key = rows * n + cols
            uniq, slot = np.unique(key, return_inverse=True)
            indptr = np.searchsorted(uniq // n, np.arange(n + 1))
            return slot.ravel(), (uniq % n).astype(np.int32), indptr.astype(np.int32), len(uniq)

        return self._topo("cotan_pattern", build)

    @property
    def umbrella(self) -> sp.csr_matrix:
        """Uniform graph Laplacian: neighbour average minus the vertex."""

        def build():
            e = self.edges
            n = self.n_vertices
            adj = sp.coo_matrix(
                (np.ones(2 * len(e)), (np.r_[e[:, 0], e[:, 1]], np.r_[e[:, 1], e[:, 0]])), shape=(n, n)
            ).tocsr()
            deg = np.asarray(adj.sum(1)).ravel()
            return (sp.diags(1.0 / deg) @ adj - sp.identity(n)).tocsr()

        return self._topo("umbrella", build)

    def _scatter(self, values_per_corner) -> np.ndarray:
        """Sum (m, 3) corner values into vertices."""
        return np.bincount(
            self.faces.ravel(), weights=np.asarray(values_per_corner).ravel(), minlength=self.n_vertices
        )

    @property
    def euler_characteristic(self) -> int:
        return self.n_vertices - len(self.edges) + len(self.faces)

    @property
    def genus(self) -> int:
        return (2 - self.euler_characteristic) // 2

    @property
    def orientation_consistent(self) -> bool:
        # every directed edge appears once in a consistently wound closed mesh
        _, counts = np.unique(self._half_edges, axis=0, return_counts=True)
        return bool(np.all(counts == 1))

    def with_vertices(self, vertices) -> "TriMesh":
        """Same connectivity, new positions. Topology checks are not repeated."""
        v = np.asarray(vertices, dtype=float)
        if v.shape[0] != self.n_vertices:
            raise ValueError("vertex count mismatch")
        m = TriMesh(v, self.faces, self.closed, _checked=True, _topology=self._topology)
        if np.any(m.face_areas <= AREA_EPS) or not np.all(np.isfinite(v)):
            raise DegenerateTriangle("zero-area face after moving vertices")
        return m

    def same_connectivity(self, other: "TriMesh") -> bool:
        return self.faces.shape == other.faces.shape and np.array_equal(self.faces, other.faces)

    # geometry -------------------------------------------------------------
    @cached_property
    def _face_geometry(self):
        # e[:, k] is the edge opposite corner k, pointing from corner k+1 to k+2
        p = self.vertices[self.faces]
        e = np.stack([p[:, 2] - p[:, 1], p[:, 0] - p[:, 2], p[:, 1] - p[:, 0]], axis=1)
        l2 = np.einsum("fkd,fkd->fk", e, e)
        # -e[k+1].e[k+2] is the dot product of the two edges leaving corner k
        dots = -np.stack(
            [np.einsum("fd,fd->f", e[:, (k + 1) % 3], e[:, (k + 2) % 3]) for k in range(3)], axis=1
        )
        # Heron-free doubled area from two edges at corner 0
        twice_area = np.sqrt(np.maximum(l2[:, 1] * l2[:, 2] - dots[:, 0] ** 2, 0.0))
        return l2, dots, twice_area

    @cached_property
    def face_areas(self) -> np.ndarray:
        return 0.5 * self._face_geometry[2]

    @property
    def area(self) -> float:
        return float(self.face_areas.sum())

    @cached_property
    def mean_edge_length(self) -> float:
        e = self.edges
        return float(np.linalg.norm(self.vertices[e[:, 0]] - self.vertices[e[:, 1]], axis=1).mean())

    @cached_property
    def face_quality(self) -> np.ndarray:
        """4*sqrt(3)*area / sum of squared edge lengths; 1 for equilateral."""
        l2, _, twice = self._face_geometry
        return 2.0 * math.sqrt(3.0) * twice / l2.sum(1)

    @cached_property
    def _corner_cotangents(self) -> np.ndarray:
        # cot[f, k] is the cotangent of the angle at corner k of face f
        _, dots, twice = self._face_geometry
        with np.errstate(divide="ignore", invalid="ignore"):
            cot = dots / twice[:, None]
        return np.clip(np.nan_to_num(cot, nan=0.0), -COT_CLAMP, COT_CLAMP)

    @cached_property
    def vertex_areas(self) -> np.ndarray:
        """Mixed-Voronoi lumped mass (circumcentric cells, obtuse-safe)."""
        l2 = self._face_geometry[0]
        cot = self._corner_cotangents
        fa = self.face_areas
        obtuse = cot < 0  # angle > 90 degrees
        any_obtuse = obtuse.any(1)
        # Voronoi share of corner k: edges k-(k+1) and k-(k+2) weighted by opposite cotangents
        vor = np.stack(
            [(l2[:, (k + 2) % 3] * cot[:, (k + 2) % 3] + l2[:, (k + 1) % 3] * cot[:, (k + 1) % 3]) / 8.0 for k in range(3)],
            axis=1,
        )
        fallback = np.where(obtuse, fa[:, None] / 2.0, fa[:, None] / 4.0)
        return self._scatter(np.where(any_obtuse[:, None], fallback, vor))

    @cached_property
    def cotan_matrix(self) -> sp.csr_matrix:
        """Symmetric cotangent stiffness C with C @ x ~ mass * Laplacian(x)."""
        cot = self._corner_cotangents
        vals = []
        for k in range(3):
            w = 0.5 * cot[:, k]
            vals += [w, w, -w, -w]
        slot, indices, indptr, nnz = self._cotan_pattern
        data = np.bincount(slot, weights=np.concatenate(vals), minlength=nnz)
        n = self.n_vertices
        return sp.csr_matrix((data, indices, indptr), shape=(n, n))

    @cached_property
    def laplacian(self) -> sp.csr_matrix:
        """Lumped Laplace-Beltrami M^-1 C."""
        c = self.cotan_matrix
        rows = np.repeat(np.arange(self.n_vertices), np.diff(c.indptr))
        return sp.csr_matrix((c.data / self.vertex_areas[rows], c.indices, c.indptr), shape=c.shape)

    @cached_property
    def angle_defect(self) -> np.ndarray:
        cot = self._corner_cotangents
        ang = np.arctan2(1.0, cot)  # angle in (0, pi)
        return 2.0 * math.pi - self._scatter(ang)

    @cached_property
    def mean_curvature(self) -> np.ndarray:
        return mean_curvature_vector(self)

    @cached_property
    def second_fundamental_norm(self) -> np.ndarray:
        """Per-vertex |A| from the principal curvatures of the discrete shape operator.

        Mean and Gauss curvature fix the two eigenvalues; the Gauss equation
        |A|^2 = |H|^2 - 2K holds in any codimension for a flat ambient.
        """
        h2 = (self.mean_curvature**2).sum(1)
        gauss = self.angle_defect / self.vertex_areas
        return np.sqrt(np.maximum(h2 - 2.0 * gauss, 0.5 * h2))

    @cached_property
    def principal_curvatures(self) -> np.ndarray:
        """(n, 2) principal curvatures for l = 3, signed against the outward normal."""
        if self.dim_ambient != 3:
            raise ValueError("principal curvatures are only signed in R^3")
        hs = -(self.mean_curvature * self.vertex_normals).sum(1)
        gauss = self.angle_defect / self.vertex_areas
        disc = np.sqrt(np.maximum(hs**2 / 4.0 - gauss, 0.0))
        return np.stack([hs / 2.0 - disc, hs / 2.0 + disc], axis=1)

    @cached_property
    def vertex_normals(self) -> np.ndarray:
        """Area-weighted unit normals (l = 3 only); outward for positive winding."""
        if self.dim_ambient != 3:
            raise ValueError("a single normal vector exists only for l = 3")
        p = self.vertices[self.faces]
        n = np.cross(p[:, 1] - p[:, 0], p[:, 2] - p[:, 0])
        out = np.stack([self._scatter(np.repeat(n[:, [c]], 3, axis=1)) for c in range(3)], 1)
        return out / np.linalg.norm(out, axis=1)[:, None]

    @cached_property
    def tangent_frames(self) -> np.ndarray:
        """(n, 2, l) orthonormal bases of the discrete tangent planes."""
        if self.dim_ambient == 3:
            nrm = self.vertex_normals
            helper = np.where(np.abs(nrm[:, [0]]) < 0.9, [[1.0, 0, 0]], [[0, 1.0, 0]])
            e1 = np.cross(nrm, helper)
            e1 /= np.linalg.norm(e1, axis=1)[:, None]
            e2 = np.cross(nrm, e1)
            return np.stack([e1, e2], axis=1)
        proj = self._averaged_tangent_projectors
        _, vecs = np.linalg.eigh(proj)
        return np.transpose(vecs[:, :, -2:], (0, 2, 1))

    @cached_property
    def _averaged_tangent_projectors(self) -> np.ndarray:
        p = self.vertices[self.faces]
        a = p[:, 1] - p[:, 0]
        b = p[:, 2] - p[:, 0]
        e1 = a / np.linalg.norm(a, axis=1)[:, None]
        b = b - (b * e1).sum(1)[:, None] * e1
        e2 = b / np.linalg.norm(b, axis=1)[:, None]
        proj = self.face_areas[:, None, None] * (
            e1[:, :, None] * e1[:, None, :] + e2[:, :, None] * e2[:, None, :]
        )
        l = self.dim_ambient
        flat = proj.reshape(len(proj), l * l)
        out = np.stack([self._scatter(np.repeat(flat[:, [c]], 3, axis=1)) for c in range(l * l)], 1)
        return out.reshape(-1, l, l)

    def normal_part(self, field: np.ndarray) -> np.ndarray:
        """Project a per-vertex vector field onto the discrete normal spaces."""
        fr = self.tangent_frames
        tang = np.einsum("nkl,nl->nk", fr, field)
        return field - np.einsum("nk,nkl->nl", tang, fr)

    def diameter(self) -> float:
        return diameter(self.vertices)


def diameter(points: np.ndarray, block: int = 2048) -> float:
    """Exact maximum pairwise distance by a blocked quadratic scan."""
    pts = np.asarray(points, dtype=float)
    best = 0.0
    sq = (pts**2).sum(1)
    for start in range(0, len(pts), block):
        blk = pts[start : start + block]
        d2 = sq[start : start + block, None] + sq[None, :] - 2.0 * blk @ pts.T
        best = max(best, float(d2.max()))
    return math.sqrt(max(best, 0.0))


def mean_curvature_vector(mesh: TriMesh) -> np.ndarray:
    """Discrete mean curvature vector per vertex, shape (n, l)."""
    return mesh.laplacian @ mesh.vertices


@dataclass(frozen=True)
class MeshMetrics:
    area: float
    diameter: float
    genus: int
    max_second_fundamental_norm: float

    def as_dict(self):
        return {
            "area": self.area,
            "diameter": self.diameter,
            "genus": self.genus,
            "max_second_fundamental_norm": self.max_second_fundamental_norm,
        }


def mesh_metrics(mesh: TriMesh) -> MeshMetrics:
    if not mesh.closed:
        raise NonManifoldMesh("metrics need a closed mesh")
    return MeshMetrics(
        area=mesh.area,
        diameter=mesh.diameter(),
        genus=mesh.genus,
        max_second_fundamental_norm=float(mesh.second_fundamental_norm.max()),
    )


def apply_normal_graph(
    mesh: TriMesh,
    graph: np.ndarray,
    scale: float,
    angle_tol: float = 1e-2,
    min_quality: float = 1e-3,
) -> TriMesh:
    """Move every vertex by ``scale * graph``; the field must be normal to the mesh.

    ``angle_tol`` bounds the tangential fraction |g^T| / |g| at each vertex.
    """
    g = np.asarray(graph, dtype=float)
    if g.shape != mesh.vertices.shape:
        raise NotNormalField("graph must have one vector per vertex")
    if not np.all(np.isfinite(g)):
        raise NotNormalField("graph has non-finite entries")
    size = np.linalg.norm(g, axis=1)
    tang = np.linalg.norm(g - mesh.normal_part(g), axis=1)
    bad = tang > angle_tol * np.maximum(size, 1e-300)
    if np.any(bad & (size > 0)):
        raise NotNormalField(f"{int(bad.sum())} vertices carry a tangential component")
    if scale == 0:
        return mesh
    try:
        out = mesh.with_vertices(mesh.vertices + scale * g)
    except DegenerateTriangle as exc:
        raise DegenerateResult(str(exc)) from exc
    if out.face_quality.min() < min_quality:
        raise DegenerateResult("triangle quality collapsed")
    return out
