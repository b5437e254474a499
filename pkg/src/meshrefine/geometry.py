"""Indexed triangle meshes: validation, adjacency, normals and OBJ I/O.

Faces are wound counterclockwise when seen from outside, so
``cross(v1 - v0, v2 - v0)`` points outward.
"""

from __future__ import annotations

import logging
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import MeshError

log = logging.getLogger(__name__)

FALLBACK_NORMAL = np.array([0.0, 0.0, 1.0])


@dataclass
class Mesh:
    """Vertex positions ``(n, 3)`` and triangle indices ``(m, 3)``.

    Treated as immutable once built; operations that change geometry return
    new instances.
    """

    vertices: np.ndarray
    faces: np.ndarray

    def __post_init__(self):
        self.vertices = np.ascontiguousarray(self.vertices, dtype=np.float64).reshape(-1, 3)
        self.faces = np.ascontiguousarray(self.faces, dtype=np.int64).reshape(-1, 3)

    @property
    def n_vertices(self) -> int:
        return len(self.vertices)

    @property
    def n_faces(self) -> int:
        return len(self.faces)

    def copy(self) -> "Mesh":
        return Mesh(self.vertices.copy(), self.faces.copy())

    def with_vertices(self, vertices) -> "Mesh":
        return Mesh(vertices, self.faces)

    def edges(self):
        """Unique undirected edges (lower index first) and per-face edge ids."""
        return unique_edges(self.faces)

    def edge_faces(self) -> dict:
        """Map ``(i, j)`` with ``i < j`` to the list of incident face indices."""
        out: dict = {}
        for f, tri in enumerate(self.faces.tolist()):
            for k in range(3):
                a, b = tri[k], tri[(k + 1) % 3]
                key = (a, b) if a < b else (b, a)
                out.setdefault(key, []).append(f)
        return out


@dataclass(frozen=True)
class Transform:
    """Similarity ``x' = scale * (x + translation)``."""

    scale: float = 1.0
    translation: tuple = (0.0, 0.0, 0.0)

    def apply(self, points):
        return self.scale * (np.asarray(points, dtype=np.float64) + np.asarray(self.translation))

    def invert(self, points):
        return np.asarray(points, dtype=np.float64) / self.scale - np.asarray(self.translation)


@dataclass
class MeshDiagnostics:
    n_vertices: int
    n_faces: int
    n_boundary_edges: int
    n_nonmanifold_edges: int
    n_components: int
    min_edge_length: float
    max_edge_length: float
    mean_edge_length: float
    warnings: list = field(default_factory=list)

    def as_dict(self):
        return {k: getattr(self, k) for k in self.__dataclass_fields__}


def unique_edges(faces):
    faces = np.asarray(faces, dtype=np.int64)
    if len(faces) == 0:
        return np.zeros((0, 2), dtype=np.int64), np.zeros((0, 3), dtype=np.int64)
    a = faces.ravel()
    b = np.roll(faces, -1, axis=1).ravel()
    lo = np.minimum(a, b)
    hi = np.maximum(a, b)
    n = int(hi.max()) + 1
    keys, inverse = np.unique(lo * n + hi, return_inverse=True)
    return np.stack([keys // n, keys % n], axis=1), inverse.reshape(-1, 3)


def face_adjacency(faces):
    """Neighbour face across each local edge ``(f[k], f[k+1])``.

    Returns an ``(m, 3)`` array holding the neighbour index, ``-1`` on a
    boundary edge and ``-2`` on a non-manifold edge.
    """
    faces = np.asarray(faces, dtype=np.int64)
    m = len(faces)
    if m == 0:
        return np.zeros((0, 3), dtype=np.int64)
    _, f2e = unique_edges(faces)
    ids = f2e.ravel()
    counts = np.bincount(ids)
    order = np.argsort(ids, kind="stable")
    sorted_ids = ids[order]
    starts = np.searchsorted(sorted_ids, np.arange(len(counts)))
    adj = np.full(3 * m, -1, dtype=np.int64)
    c = counts[ids]
    adj[c > 2] = -2
    two = np.flatnonzero(c == 2)
    first = order[starts[ids[two]]]
    second = order[starts[ids[two]] + 1]
    other = np.where(first == two, second, first)
    adj[two] = other // 3
    return adj.reshape(m, 3)


def validate(mesh: Mesh) -> None:
    """Raise :class:`MeshError` unless the mesh satisfies the basic invariants."""
    f = mesh.faces
    n = mesh.n_vertices
    if not np.all(np.isfinite(mesh.vertices)):
        raise MeshError("non-finite vertex coordinate")
    if len(f) == 0:
        return
    if f.min() < 0 or f.max() >= n:
        raise MeshError(f"face index out of range [0, {n})")
    if np.any((f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])):
        raise MeshError("degenerate face with repeated vertex index")
    if count_duplicate_faces(f):
        raise MeshError("duplicate face")


def count_degenerate_faces(faces, vertices=None, area_eps=1e-12) -> int:
    """Faces with a repeated index; with ``vertices``, also faces of area <= ``area_eps``."""
    f = np.asarray(faces)
    if len(f) == 0:
        return 0
    bad = (f[:, 0] == f[:, 1]) | (f[:, 1] == f[:, 2]) | (f[:, 0] == f[:, 2])
    if vertices is not None:
        bad |= face_areas(vertices, f) <= area_eps
    return int(np.count_nonzero(bad))


def count_duplicate_faces(faces) -> int:
    f = np.sort(np.asarray(faces, dtype=np.int64), axis=1)
    if len(f) == 0:
        return 0
    n = int(f.max()) + 1
    keys = (f[:, 0] * n + f[:, 1]) * n + f[:, 2]
    return int(len(keys) - len(np.unique(keys)))


# -- OBJ ---------------------------------------------------------------------

def _obj_index(token: str, n: int, lineno: int) -> int:
    head = token.split("/")[0]
    try:
        i = int(head)
    except ValueError:
        raise MeshError(f"line {lineno}: bad face index {token!r}") from None
    if i > 0:
        j = i - 1
    elif i < 0:
        j = n + i
    else:
        raise MeshError(f"line {lineno}: face index 0 is invalid")
    if not 0 <= j < n:
        raise MeshError(f"line {lineno}: face index {i} out of range for {n} vertices")
    return j


def load_obj(path) -> Mesh:
    """Read ``v``/``f`` records; polygons are fan-triangulated."""
    if not os.path.exists(path):
        raise MeshError(f"no such mesh file: {path}")
    verts = []
    faces = []
    with open(path, "r") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            tag = parts[0]
            if tag == "v":
                if len(parts) < 4:
                    raise MeshError(f"line {lineno}: vertex needs 3 coordinates")
                try:
                    verts.append([float(x) for x in parts[1:4]])
                except ValueError:
                    raise MeshError(f"line {lineno}: bad vertex coordinate") from None
            elif tag == "f":
                idx = [_obj_index(t, len(verts), lineno) for t in parts[1:]]
                if len(idx) < 3:
                    raise MeshError(f"line {lineno}: face with fewer than 3 vertices")
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
    if not verts:
        raise MeshError(f"{path}: no vertices")
    return Mesh(np.array(verts), np.array(faces, dtype=np.int64).reshape(-1, 3))


def save_obj(mesh: Mesh, path) -> None:
    if mesh.n_vertices == 0 or mesh.n_faces == 0:
        raise MeshError("refusing to write an empty mesh")
    validate(mesh)
    lines = ["v %.17g %.17g %.17g\n" % tuple(v) for v in mesh.vertices.tolist()]
    lines += ["f %d %d %d\n" % tuple(f) for f in (mesh.faces + 1).tolist()]
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.writelines(lines)
    os.replace(tmp, path)


# -- geometry ----------------------------------------------------------------

def normalize(mesh: Mesh):
    """Center the bounding box at the origin and scale its longest side to 1."""
    if mesh.n_vertices < 3:
        raise MeshError("normalize needs at least 3 vertices")
    lo = mesh.vertices.min(axis=0)
    hi = mesh.vertices.max(axis=0)
    extent = float((hi - lo).max())
    if extent <= 0:
        raise MeshError("mesh has zero extent")
    t = Transform(1.0 / extent, tuple((-(lo + hi) / 2).tolist()))
    return Mesh(t.apply(mesh.vertices), mesh.faces.copy()), t


def face_cross(vertices, faces):
    """Unnormalized face normals; their length is twice the face area."""
    v0 = vertices[faces[:, 0]]
    return np.cross(vertices[faces[:, 1]] - v0, vertices[faces[:, 2]] - v0)


def face_areas(vertices, faces):
    return 0.5 * np.linalg.norm(face_cross(vertices, faces), axis=1)


def scatter_add(index, values, n):
    """Sum rows of ``values`` into ``n`` bins given by ``index``."""
    values = np.asarray(values, dtype=np.float64)
    if values.ndim == 1:
        return np.bincount(index, weights=values, minlength=n)
    return np.stack([np.bincount(index, weights=values[:, k], minlength=n)
                     for k in range(values.shape[1])], axis=1)


def _vertex_normal_sums(vertices, faces):
    c = face_cross(vertices, faces)
    n = len(vertices)
    idx = faces.ravel()
    return scatter_add(idx, np.repeat(c, 3, axis=0), n)


def vertex_normals(mesh_or_vertices, faces=None):
    """Area-weighted vertex normals; isolated or zero-area vertices get +z."""
    if faces is None:
        vertices, faces = mesh_or_vertices.vertices, mesh_or_vertices.faces
    else:
        vertices = mesh_or_vertices
    u = _vertex_normal_sums(vertices, faces)
    length = np.linalg.norm(u, axis=1)
    ok = length > 1e-300
    out = np.tile(FALLBACK_NORMAL, (len(vertices), 1))
    out[ok] = u[ok] / length[ok, None]
    return out


def vertex_normals_vjp(vertices, faces, grad_normals):
    """Pull a gradient on :func:`vertex_normals` back onto vertex positions."""
    u = _vertex_normal_sums(vertices, faces)
    length = np.linalg.norm(u, axis=1)
    ok = length > 1e-300
    g = np.zeros_like(u)
    nrm = u[ok] / length[ok, None]
    gk = grad_normals[ok]
    g[ok] = (gk - nrm * np.sum(nrm * gk, axis=1, keepdims=True)) / length[ok, None]
    gc = g[faces[:, 0]] + g[faces[:, 1]] + g[faces[:, 2]]
    v0 = vertices[faces[:, 0]]
    a = vertices[faces[:, 1]] - v0
    b = vertices[faces[:, 2]] - v0
    ga = np.cross(b, gc)
    gb = np.cross(gc, a)
    n = len(vertices)
    out = scatter_add(faces[:, 1], ga, n) + scatter_add(faces[:, 2], gb, n)
    out -= scatter_add(faces[:, 0], ga + gb, n)
    return out


def edge_lengths(mesh: Mesh):
    edges, _ = mesh.edges()
    return np.linalg.norm(mesh.vertices[edges[:, 0]] - mesh.vertices[edges[:, 1]], axis=1)


def enclosed_volume(mesh: Mesh) -> float:
    """Signed volume by the divergence theorem (positive for outward winding)."""
    v = mesh.vertices
    f = mesh.faces
    return float(np.sum(np.einsum("ij,ij->i", v[f[:, 0]], np.cross(v[f[:, 1]], v[f[:, 2]]))) / 6.0)


def connected_component_count(mesh: Mesh) -> int:
    """Components of the vertex graph, counting only vertices used by faces."""
    f = mesh.faces
    if len(f) == 0:
        return 0
    used = np.unique(f)
    rows = np.concatenate([f[:, 0], f[:, 1], f[:, 2]])
    cols = np.concatenate([f[:, 1], f[:, 2], f[:, 0]])
    n = mesh.n_vertices
    g = coo_matrix((np.ones(len(rows)), (rows, cols)), shape=(n, n))
    _, labels = connected_components(g, directed=False)
    return int(len(np.unique(labels[used])))


def diagnostics(mesh: Mesh) -> MeshDiagnostics:
    edges, f2e = mesh.edges()
    counts = np.bincount(f2e.ravel(), minlength=len(edges)) if len(edges) else np.zeros(0, int)
    if len(edges):
        lengths = np.linalg.norm(mesh.vertices[edges[:, 0]] - mesh.vertices[edges[:, 1]], axis=1)
        lo, hi, mean = float(lengths.min()), float(lengths.max()), float(lengths.mean())
    else:
        lo = hi = mean = 0.0
    d = MeshDiagnostics(
        n_vertices=mesh.n_vertices,
        n_faces=mesh.n_faces,
        n_boundary_edges=int(np.count_nonzero(counts == 1)),
        n_nonmanifold_edges=int(np.count_nonzero(counts > 2)),
        n_components=connected_component_count(mesh),
        min_edge_length=lo,
        max_edge_length=hi,
        mean_edge_length=mean,
    )
    if d.n_nonmanifold_edges:
        d.warnings.append(f"{d.n_nonmanifold_edges} non-manifold edges")
        log.warning("mesh has %d non-manifold edges", d.n_nonmanifold_edges)
    return d


# -- constructors ------------------------------------------------------------

def icosphere(subdivisions: int = 2, radius: float = 1.0) -> Mesh:
    """Loop-subdivided icosahedron projected to a sphere (20 * 4**k faces)."""
    t = (1.0 + 5 ** 0.5) / 2.0
    v = [[-1, t, 0], [1, t, 0], [-1, -t, 0], [1, -t, 0],
         [0, -1, t], [0, 1, t], [0, -1, -t], [0, 1, -t],
         [t, 0, -1], [t, 0, 1], [-t, 0, -1], [-t, 0, 1]]
    f = [[0, 11, 5], [0, 5, 1], [0, 1, 7], [0, 7, 10], [0, 10, 11],
         [1, 5, 9], [5, 11, 4], [11, 10, 2], [10, 7, 6], [7, 1, 8],
         [3, 9, 4], [3, 4, 2], [3, 2, 6], [3, 6, 8], [3, 8, 9],
         [4, 9, 5], [2, 4, 11], [6, 2, 10], [8, 6, 7], [9, 8, 1]]
    verts = np.array(v, dtype=np.float64)
    verts /= np.linalg.norm(verts, axis=1, keepdims=True)
    faces = np.array(f, dtype=np.int64)
    for _ in range(subdivisions):
        edges, f2e = unique_edges(faces)
        mid = verts[edges[:, 0]] + verts[edges[:, 1]]
        mid /= np.linalg.norm(mid, axis=1, keepdims=True)
        base = len(verts)
        verts = np.vstack([verts, mid])
        a, b, c = faces.T
        # f2e[:, k] is the edge (f[k], f[k+1])
        ab, bc, ca = (f2e + base).T
        faces = np.concatenate([
            np.stack([a, ab, ca], 1), np.stack([b, bc, ab], 1),
            np.stack([c, ca, bc], 1), np.stack([ab, bc, ca], 1)])
    return Mesh(verts * radius, faces)


def box(size=1.0, center=(0.0, 0.0, 0.0)) -> Mesh:
    """Axis-aligned cube as 8 vertices / 12 outward-wound triangles."""
    h = size / 2.0
    v = np.array([[x, y, z] for x in (-h, h) for y in (-h, h) for z in (-h, h)]) + np.asarray(center)
    quads = [[0, 1, 3, 2], [4, 6, 7, 5], [0, 4, 5, 1], [2, 3, 7, 6], [0, 2, 6, 4], [1, 5, 7, 3]]
    faces = []
    for q in quads:
        faces += [[q[0], q[1], q[2]], [q[0], q[2], q[3]]]
    return Mesh(v, np.array(faces))
