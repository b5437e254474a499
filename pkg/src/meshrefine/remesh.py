"""Adaptive isotropic remeshing interleaved with gradient steps.

One pass splits long edges, collapses short ones, flips edges towards
valence 6 and relaxes vertices tangentially. Adam moments are carried along:
new vertices average the moments of the vertices they come from.

Each operation kind runs on an independent set (no two operations touch the
same face or vertex in one pass), chosen greedily in a fixed order, so the
result is deterministic and every local check sees up-to-date topology.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import MeshError
from .geometry import Mesh, face_cross, scatter_add, unique_edges, vertex_normals

SPLIT_FACTOR = 4.0 / 3.0
COLLAPSE_FACTOR = 4.0 / 5.0


@dataclass
class RemeshParams:
    l_start: float = 0.08
    l_end: float = 0.02
    max_ops: int = 10000
    flip: bool = True
    relax: float = 0.5
    min_flip_cos: float = 0.5

    def __post_init__(self):
        if not 0 < self.l_end <= self.l_start:
            raise MeshError(f"need 0 < l_end <= l_start, got {self.l_end}, {self.l_start}")

    def target_length(self, progress: float) -> float:
        """Linear schedule over ``progress`` in [0, 1]."""
        p = min(max(progress, 0.0), 1.0)
        return (1.0 - p) * self.l_start + p * self.l_end


@dataclass
class OptimState:
    """Adam first/second moments per vertex and the step counter."""

    m: np.ndarray
    v: np.ndarray
    step: int = 0

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros((n, 3)), np.zeros((n, 3)), 0)

    def __len__(self):
        return len(self.m)

    def copy(self):
        return OptimState(self.m.copy(), self.v.copy(), self.step)


@dataclass
class PassStats:
    splits: int = 0
    collapses: int = 0
    flips: int = 0
    volume_before: float = 0.0
    volume_after: float = 0.0
    extra: dict = field(default_factory=dict)


def transfer_state(rows, op, indices):
    """Moments for a vertex created by ``op`` from the rows at ``indices``.

    ``rows`` is an ``(n, k)`` array. A split returns the mean of the two edge
    endpoints' rows; a collapse returns the mean of the merged pair.
    """
    rows = np.asarray(rows)
    idx = np.asarray(indices, dtype=np.int64)
    if op not in ("split", "collapse"):
        raise ValueError(f"unknown operation {op!r}")
    if len(idx) != 2:
        raise ValueError("split and collapse take two vertex indices")
    if idx.min() < 0 or idx.max() >= len(rows):
        raise IndexError(f"state index out of range: {idx.tolist()} for {len(rows)} rows")
    return 0.5 * (rows[idx[0]] + rows[idx[1]])


def _edge_incidence(faces):
    edges, f2e = unique_edges(faces)
    ids = f2e.ravel()
    counts = np.bincount(ids, minlength=len(edges))
    order = np.argsort(ids, kind="stable")
    ptr = np.concatenate([[0], np.cumsum(counts)])
    return edges, f2e, counts, order, ptr


def _vertex_faces(faces, n):
    flat = faces.ravel()
    order = np.argsort(flat, kind="stable")
    counts = np.bincount(flat, minlength=n)
    ptr = np.concatenate([[0], np.cumsum(counts)])
    return order // 3, ptr


def _boundary_vertices(edges, counts, n):
    bad = np.zeros(n, dtype=bool)
    sel = edges[counts != 2]
    bad[sel.ravel()] = True
    return bad


def split_long_edges(V, F, m, v, threshold, max_ops):
    edges, f2e, counts, order, ptr = _edge_incidence(F)
    if len(edges) == 0:
        return V, F, m, v, 0
    length = np.linalg.norm(V[edges[:, 0]] - V[edges[:, 1]], axis=1)
    cand = np.flatnonzero((length > threshold) & (counts <= 2))
    if len(cand) == 0:
        return V, F, m, v, 0
    cand = cand[np.lexsort((cand, -length[cand]))]
    used = np.zeros(len(F), dtype=bool)
    chosen = []
    order_l = order.tolist()
    ptr_l = ptr.tolist()
    for e in cand.tolist():
        hs = order_l[ptr_l[e]:ptr_l[e + 1]]
        fs = [h // 3 for h in hs]
        if any(used[f] for f in fs):
            continue
        for f in fs:
            used[f] = True
        chosen.append(e)
        if len(chosen) >= max_ops:
            break
    chosen = np.array(chosen, dtype=np.int64)
    n = len(V)
    a, b = edges[chosen, 0], edges[chosen, 1]
    V = np.vstack([V, 0.5 * (V[a] + V[b])])
    m = np.vstack([m, 0.5 * (m[a] + m[b])])
    v = np.vstack([v, 0.5 * (v[a] + v[b])])
    new_id = np.full(len(edges), -1, dtype=np.int64)
    new_id[chosen] = n + np.arange(len(chosen))
    # each touched face holds exactly one chosen edge at local slot j
    slot_vertex = new_id[f2e]
    touched = np.flatnonzero((slot_vertex >= 0).any(axis=1))
    j = np.argmax(slot_vertex[touched] >= 0, axis=1)
    x = slot_vertex[touched, j]
    f = F[touched]
    r = np.arange(len(touched))
    p0 = f[r, j]
    p1 = f[r, (j + 1) % 3]
    p2 = f[r, (j + 2) % 3]
    F = F.copy()
    F[touched] = np.stack([p0, x, p2], axis=1)
    F = np.vstack([F, np.stack([x, p1, p2], axis=1)])
    return V, F, m, v, len(chosen)


def _normals_ok(V, F, fids, a, b, p):
    tri = F[fids]
    old = np.cross(V[tri[:, 1]] - V[tri[:, 0]], V[tri[:, 2]] - V[tri[:, 0]])
    P = V[tri]
    mask = (tri == a) | (tri == b)
    P[mask] = p
    new = np.cross(P[:, 1] - P[:, 0], P[:, 2] - P[:, 0])
    dots = np.einsum("ij,ij->i", old, new)
    old_area = np.linalg.norm(old, axis=1)
    new_area = np.linalg.norm(new, axis=1)
    return bool(np.all(dots > 0) and np.all(new_area > 1e-3 * old_area.max()))


def collapse_short_edges(V, F, m, v, threshold, max_len, max_ops):
    n = len(V)
    edges, f2e, counts, order, ptr = _edge_incidence(F)
    if len(edges) == 0 or n <= 4:
        return V, F, m, v, 0
    length = np.linalg.norm(V[edges[:, 0]] - V[edges[:, 1]], axis=1)
    cand = np.flatnonzero((length < threshold) & (counts == 2))
    if len(cand) == 0:
        return V, F, m, v, 0
    cand = cand[np.lexsort((cand, length[cand]))]
    boundary = _boundary_vertices(edges, counts, n)
    vf, vptr = _vertex_faces(F, n)
    F = F.copy()
    V = V.copy()
    m = m.copy()
    v = v.copy()
    alive_f = np.ones(len(F), dtype=bool)
    locked = np.zeros(n, dtype=bool)
    removed = np.zeros(n, dtype=bool)
    done = 0
    for e in cand.tolist():
        a, b = int(edges[e, 0]), int(edges[e, 1])
        if locked[a] or locked[b] or boundary[a] or boundary[b]:
            continue
        fa = vf[vptr[a]:vptr[a + 1]]
        fb = vf[vptr[b]:vptr[b + 1]]
        ring_a = set(F[fa].ravel().tolist()) - {a}
        ring_b = set(F[fb].ravel().tolist()) - {b}
        shared = order[ptr[e]:ptr[e + 1]] // 3
        opposite = set(F[shared].ravel().tolist()) - {a, b}
        if (ring_a & ring_b) != opposite or len(opposite) != 2:
            continue
        if len(ring_a) < 4 or len(ring_b) < 4:
            continue
        p = 0.5 * (V[a] + V[b])
        ring = np.fromiter((ring_a | ring_b) - {a, b}, dtype=np.int64)
        if np.any(np.linalg.norm(V[ring] - p, axis=1) > max_len):
            continue
        others = np.setdiff1d(np.union1d(fa, fb), shared)
        if not _normals_ok(V, F, others, a, b, p):
            continue
        V[a] = p
        m[a] = transfer_state(m, "collapse", [a, b])
        v[a] = transfer_state(v, "collapse", [a, b])
        fbo = fb[np.isin(fb, shared, invert=True)]
        rows = F[fbo]
        rows[rows == b] = a
        F[fbo] = rows
        alive_f[shared] = False
        removed[b] = True
        locked[a] = locked[b] = True
        locked[ring] = True
        done += 1
        if done >= max_ops:
            break
    if not done:
        return V, F, m, v, 0
    F = F[alive_f]
    return V, F, m, v, done


def flip_edges(V, F, max_ops, min_cos):
    n = len(V)
    edges, f2e, counts, order, ptr = _edge_incidence(F)
    if len(edges) == 0:
        return F, 0
    boundary = _boundary_vertices(edges, counts, n)
    valence = np.bincount(edges.ravel(), minlength=n)
    inner = np.flatnonzero((counts == 2) & ~boundary[edges[:, 0]] & ~boundary[edges[:, 1]])
    if len(inner) == 0:
        return F, 0
    h1 = order[ptr[inner]]
    h2 = order[ptr[inner] + 1]
    f1, j1 = h1 // 3, h1 % 3
    f2, j2 = h2 // 3, h2 % 3
    # orient so that f1 holds the directed edge a -> b
    a = F[f1, j1]
    b = F[f1, (j1 + 1) % 3]
    c = F[f1, (j1 + 2) % 3]
    d = F[f2, (j2 + 2) % 3]
    before = ((valence[[a, b, c, d]] - 6) ** 2).sum(axis=0)
    after = ((valence[a] - 7) ** 2 + (valence[b] - 7) ** 2
             + (valence[c] - 5) ** 2 + (valence[d] - 5) ** 2)
    gain = before - after
    ok = (gain > 0) & (c != d) & (valence[a] > 3) & (valence[b] > 3)
    if not ok.any():
        return F, 0
    # geometric checks
    n1 = np.cross(V[b] - V[a], V[c] - V[a])
    n2 = np.cross(V[a] - V[b], V[d] - V[b])
    nn1 = np.linalg.norm(n1, axis=1) + 1e-300
    nn2 = np.linalg.norm(n2, axis=1) + 1e-300
    coplanar = np.einsum("ij,ij->i", n1, n2) / (nn1 * nn2)
    m1 = np.cross(V[d] - V[a], V[c] - V[a])
    m2 = np.cross(V[b] - V[d], V[c] - V[d])
    navg = n1 / nn1[:, None] + n2 / nn2[:, None]
    ok &= coplanar > min_cos
    ok &= (np.einsum("ij,ij->i", m1, navg) > 0) & (np.einsum("ij,ij->i", m2, navg) > 0)
    area_min = 1e-3 * np.maximum(nn1, nn2)
    ok &= (np.linalg.norm(m1, axis=1) > area_min) & (np.linalg.norm(m2, axis=1) > area_min)
    key = np.minimum(c, d) * n + np.maximum(c, d)
    existing = edges[:, 0] * n + edges[:, 1]
    ok &= ~np.isin(key, existing)
    idx = np.flatnonzero(ok)
    if len(idx) == 0:
        return F, 0
    idx = idx[np.lexsort((inner[idx], -gain[idx]))]
    locked = np.zeros(n, dtype=bool)
    chosen = []
    ab = np.stack([a, b, c, d], axis=1)
    for i in idx.tolist():
        q = ab[i]
        if locked[q].any():
            continue
        locked[q] = True
        chosen.append(i)
        if len(chosen) >= max_ops:
            break
    chosen = np.array(chosen, dtype=np.int64)
    F = F.copy()
    F[f1[chosen]] = np.stack([a[chosen], d[chosen], c[chosen]], axis=1)
    F[f2[chosen]] = np.stack([d[chosen], b[chosen], c[chosen]], axis=1)
    return F, len(chosen)


def tangential_relax(V, F, weight):
    """Move vertices towards the area-weighted centroid of their faces, in the tangent plane."""
    n = len(V)
    if weight <= 0 or len(F) == 0:
        return V
    edges, _, counts, _, _ = _edge_incidence(F)
    fixed = _boundary_vertices(edges, counts, n)
    area = 0.5 * np.linalg.norm(face_cross(V, F), axis=1)
    cen = V[F].mean(axis=1)
    idx = F.ravel()
    w = np.repeat(area, 3)
    wsum = np.bincount(idx, weights=w, minlength=n)
    csum = scatter_add(idx, np.repeat(cen * area[:, None], 3, axis=0), n)
    move = wsum > 0
    move &= ~fixed
    target = np.where(move[:, None], csum / np.maximum(wsum, 1e-300)[:, None], V)
    nrm = vertex_normals(V, F)
    d = target - V
    d -= nrm * np.sum(d * nrm, axis=1, keepdims=True)
    out = V + weight * d * move[:, None]
    return out


def _compact(V, F, m, v):
    used = np.zeros(len(V), dtype=bool)
    used[F.ravel()] = True
    if used.all():
        return V, F, m, v
    remap = np.cumsum(used) - 1
    return V[used], remap[F], m[used], v[used]


def remesh_pass(mesh: Mesh, state: OptimState, params: RemeshParams, target_length: float):
    """One split / collapse / flip / relax pass at edge length ``target_length``.

    Returns ``(mesh, state, stats)``; the state rows follow the vertices.
    """
    if len(state) != mesh.n_vertices:
        raise MeshError(f"optimizer state has {len(state)} rows for {mesh.n_vertices} vertices")
    from .geometry import enclosed_volume

    stats = PassStats(volume_before=enclosed_volume(mesh))
    V, F = mesh.vertices.copy(), mesh.faces.copy()
    m, v = state.m, state.v
    hi = SPLIT_FACTOR * target_length
    lo = COLLAPSE_FACTOR * target_length
    V, F, m, v, stats.splits = split_long_edges(V, F, m, v, hi, params.max_ops)
    V, F, m, v, stats.collapses = collapse_short_edges(V, F, m, v, lo, hi, params.max_ops)
    if params.flip:
        F, stats.flips = flip_edges(V, F, params.max_ops, params.min_flip_cos)
    V = tangential_relax(V, F, params.relax)
    V, F, m, v = _compact(V, F, m, v)
    out = Mesh(V, F)
    stats.volume_after = enclosed_volume(out)
    return out, OptimState(m, v, state.step), stats
