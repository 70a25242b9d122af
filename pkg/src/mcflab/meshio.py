"""OFF and OBJ reading/writing.

OFF files may carry vertices in R^l for l > 3: a ``#dim l`` comment before the
counts line announces the coordinate count, and every vertex line then holds
``l`` floats. Without the comment, OFF vertex lines hold 3 floats.

Floats are written with ``repr`` so a round trip is exact. A tetrahedron in
R^4 as written by :func:`write_off`::

    OFF
    #dim 4
    4 4 0
    1.0 0.0 0.0 0.0
    0.0 1.0 0.0 0.0
    0.0 0.0 1.0 0.0
    0.0 0.0 0.0 1.0
    3 0 1 2
    3 0 3 1
    3 1 3 2
    3 0 2 3
"""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import MeshFormatError
from .geometry import TriMesh


def _fmt(x: float) -> str:
    return repr(float(x))


def write_off(mesh: TriMesh, path) -> None:
    path = Path(path)
    lines = ["OFF"]
    if mesh.dim_ambient != 3:
        lines.append(f"#dim {mesh.dim_ambient}")
    lines.append(f"{mesh.n_vertices} {len(mesh.faces)} 0")
    lines += [" ".join(_fmt(c) for c in v) for v in mesh.vertices]
    lines += [f"3 {a} {b} {c}" for a, b, c in mesh.faces]
    path.write_text("\n".join(lines) + "\n")


def read_off(path) -> TriMesh:
    text = Path(path).read_text()
    dim = 3
    tokens_lines = []
    for raw in text.splitlines():
        line = raw.strip()
        if not line:
            continue
        if line.startswith("#"):
            parts = line[1:].split()
            if len(parts) == 2 and parts[0] == "dim":
                dim = int(parts[1])
            continue
        tokens_lines.append(line.split("#", 1)[0].split())
    if not tokens_lines or tokens_lines[0][0] not in ("OFF", "nOFF"):
        raise MeshFormatError(f"{path}: missing OFF header")
    head = tokens_lines[0]
    rest = tokens_lines[1:]
    if len(head) > 1:  # counts on the header line
        rest = [head[1:]] + rest
    try:
        nv, nf = int(rest[0][0]), int(rest[0][1])
        verts = np.array([[float(t) for t in ln[:dim]] for ln in rest[1 : 1 + nv]])
        faces = []
        for ln in rest[1 + nv : 1 + nv + nf]:
            k = int(ln[0])
            idx = [int(t) for t in ln[1 : 1 + k]]
            if k < 3:
                raise MeshFormatError(f"{path}: face with {k} vertices")
            for j in range(1, k - 1):  # fan-triangulate polygons
                faces.append([idx[0], idx[j], idx[j + 1]])
    except (IndexError, ValueError) as exc:
        raise MeshFormatError(f"{path}: malformed OFF body ({exc})") from exc
    if verts.shape != (nv, dim) or len(faces) < nf:
        raise MeshFormatError(f"{path}: expected {nv} vertices of dimension {dim}")
    return TriMesh(verts, np.array(faces))


def write_obj(mesh: TriMesh, path) -> None:
    lines = [f"v {' '.join(_fmt(c) for c in v)}" for v in mesh.vertices]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in mesh.faces]
    Path(path).write_text("\n".join(lines) + "\n")


def read_obj(path) -> TriMesh:
    verts, faces = [], []
    for n, raw in enumerate(Path(path).read_text().splitlines(), 1):
        parts = raw.split("#", 1)[0].split()
        if not parts:
            continue
        try:
            if parts[0] == "v":
                verts.append([float(t) for t in parts[1:]])
            elif parts[0] == "f":
                idx = [int(t.split("/")[0]) for t in parts[1:]]
                idx = [i - 1 if i > 0 else len(verts) + i for i in idx]
                for j in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[j], idx[j + 1]])
        except ValueError as exc:
            raise MeshFormatError(f"{path}:{n}: {exc}") from exc
    if not verts or len({len(v) for v in verts}) != 1:
        raise MeshFormatError(f"{path}: vertices missing or of mixed dimension")
    return TriMesh(np.array(verts), np.array(faces))


def read_mesh(path) -> TriMesh:
    suffix = Path(path).suffix.lower()
    if suffix == ".off":
        return read_off(path)
    if suffix == ".obj":
        return read_obj(path)
    raise MeshFormatError(f"unsupported mesh format {suffix!r}")


def write_mesh(mesh: TriMesh, path) -> None:
    suffix = Path(path).suffix.lower()
    if suffix == ".off":
        write_off(mesh, path)
    elif suffix == ".obj":
        write_obj(mesh, path)
    else:
        raise MeshFormatError(f"unsupported mesh format {suffix!r}")
