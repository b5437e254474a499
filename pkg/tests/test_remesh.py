import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from meshrefine.errors import MeshError
from meshrefine.geometry import (Mesh, count_degenerate_faces, count_duplicate_faces, diagnostics,
                                 edge_lengths, enclosed_volume, icosphere, unique_edges, validate)
from meshrefine.remesh import (COLLAPSE_FACTOR, SPLIT_FACTOR, OptimState, RemeshParams,
                               remesh_pass, transfer_state)


def tri_grid(n, lt):
    """Equilateral triangle grid of n x n vertex rows, every edge exactly ``lt``."""
    V, F = [], []
    h = lt * math.sqrt(3) / 2
    for i in range(n):
        for j in range(n):
            V.append([j * lt + (0.5 * lt if i % 2 else 0.0), i * h, 0.0])
    for i in range(n - 1):
        for j in range(n - 1):
            a, b, c, d = i * n + j, i * n + j + 1, (i + 1) * n + j, (i + 1) * n + j + 1
            F += [[a, b, d], [a, d, c]] if i % 2 else [[a, b, c], [b, d, c]]
    return Mesh(np.array(V), np.array(F))


def run(mesh, lt, **kw):
    return remesh_pass(mesh, OptimState.zeros(mesh.n_vertices), RemeshParams(**kw), lt)


def test_tri_grid_is_uniform():
    m = tri_grid(8, 0.1)
    np.testing.assert_allclose(edge_lengths(m), 0.1)


def test_uniform_grid_is_left_alone():
    m = tri_grid(8, 0.1)
    out, state, stats = run(m, 0.1)
    assert stats.splits == 0 and stats.collapses == 0
    np.testing.assert_array_equal(out.faces, m.faces)
    assert len(state) == out.n_vertices


def test_single_long_edge_is_split_once():
    lt = 0.1
    # rhombus whose shared diagonal has length 2 lt; all other edges stay below the split threshold
    V = np.array([[0, 0, 0], [2 * lt, 0, 0], [lt, 0.85 * lt, 0], [lt, -0.85 * lt, 0]])
    m = Mesh(V, [[0, 1, 2], [1, 0, 3]])
    assert np.sum(edge_lengths(m) > SPLIT_FACTOR * lt) == 1
    out, state, stats = run(m, lt)
    assert stats.splits == 1 and stats.collapses == 0
    assert out.n_vertices == m.n_vertices + 1 and out.n_faces == 4
    np.testing.assert_allclose(out.vertices[-1], [lt, 0, 0])
    assert edge_lengths(out).max() <= SPLIT_FACTOR * lt
    validate(out)


def test_sphere_converges_into_the_band():
    mesh = icosphere(3, 0.5)
    lt = 0.5 * edge_lengths(mesh).mean()
    state = OptimState.zeros(mesh.n_vertices)
    params = RemeshParams()
    worst = 0.0
    for _ in range(8):
        mesh, state, stats = remesh_pass(mesh, state, params, lt)
        worst = max(worst, np.abs(np.linalg.norm(mesh.vertices, axis=1) - 0.5).max())
    mean = edge_lengths(mesh).mean()
    assert COLLAPSE_FACTOR * lt <= mean <= SPLIT_FACTOR * lt
    # vertices stay within 0.01 of the analytic sphere (a Hausdorff bound for vertex samples)
    assert worst < 0.01
    assert len(state) == mesh.n_vertices


def test_transfer_state_examples():
    m = np.array([[0.0, 0, 0], [2.0, 0, 0]])
    np.testing.assert_array_equal(transfer_state(m, "split", [0, 1]), [1, 0, 0])
    same = np.array([[1.5, -2, 3], [1.5, -2, 3]])
    np.testing.assert_array_equal(transfer_state(same, "collapse", [0, 1]), same[0])
    with pytest.raises(IndexError):
        transfer_state(m, "split", [0, 2])
    with pytest.raises(IndexError):
        transfer_state(m, "collapse", [-1, 0])
    with pytest.raises(ValueError):
        transfer_state(m, "flip", [0, 1])
    with pytest.raises(ValueError):
        transfer_state(m, "split", [0])


def test_state_size_mismatch():
    m = icosphere(1)
    with pytest.raises(MeshError):
        remesh_pass(m, OptimState.zeros(3), RemeshParams(), 0.1)
    with pytest.raises(MeshError):
        RemeshParams(l_start=0.01, l_end=0.02)


def test_moments_follow_vertices():
    lt = 0.1
    V = np.array([[0, 0, 0], [2 * lt, 0, 0], [lt, 0.85 * lt, 0], [lt, -0.85 * lt, 0]])
    m = Mesh(V, [[0, 1, 2], [1, 0, 3]])
    st_ = OptimState(np.arange(12.0).reshape(4, 3), np.arange(12.0).reshape(4, 3) ** 2, 7)
    _, out, _ = remesh_pass(m, st_, RemeshParams(), lt)
    assert out.step == 7
    np.testing.assert_array_equal(out.m[:4], st_.m)
    np.testing.assert_array_equal(out.m[4], 0.5 * (st_.m[0] + st_.m[1]))
    np.testing.assert_array_equal(out.v[4], 0.5 * (st_.v[0] + st_.v[1]))


def bumpy_sphere(seed, k=3):
    rng = np.random.default_rng(seed)
    m = icosphere(k, 0.5)
    r = 1 + 0.15 * rng.uniform(-1, 1, m.n_vertices)
    return Mesh(m.vertices * r[:, None], m.faces)


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 2**31 - 1), st.lists(st.floats(0.01, 0.2), min_size=1, max_size=4))
def test_random_pass_sequences_keep_invariants(seed, lengths):
    mesh = bumpy_sphere(seed, 2)
    rng = np.random.default_rng(seed)
    state = OptimState(rng.normal(size=(mesh.n_vertices, 3)), rng.random((mesh.n_vertices, 3)))
    for lt in lengths:
        mesh, state, stats = remesh_pass(mesh, state, RemeshParams(max_ops=int(rng.integers(1, 500))), lt)
        assert len(state) == mesh.n_vertices == len(state.v)
        assert count_degenerate_faces(mesh.faces, mesh.vertices) == 0
        assert count_duplicate_faces(mesh.faces) == 0
        assert np.unique(mesh.faces).size == mesh.n_vertices
        d = diagnostics(mesh)
        assert d.n_boundary_edges == 0 and d.n_nonmanifold_edges == 0


@pytest.mark.parametrize("seed", range(4))
def test_volume_drift_per_pass(seed):
    mesh = bumpy_sphere(seed)
    state = OptimState.zeros(mesh.n_vertices)
    for lt in (0.08, 0.05, 0.03, 0.02):
        mesh, state, stats = remesh_pass(mesh, state, RemeshParams(), lt)
        assert abs(stats.volume_after / stats.volume_before - 1) < 0.01
        assert stats.volume_after == pytest.approx(enclosed_volume(mesh))


def test_boundary_edges_are_never_collapsed():
    grid = tri_grid(10, 0.1)
    # every edge, border included, falls below the collapse threshold
    small = Mesh(grid.vertices * 0.5, grid.faces)
    out, _, stats = run(small, 0.1, flip=False)
    assert stats.collapses > 0
    border = small.vertices[np.unique(boundary_edges(small))]
    kept = out.vertices[np.unique(boundary_edges(out))]
    np.testing.assert_array_equal(np.sort(kept, axis=0), np.sort(border, axis=0))
    assert len(boundary_edges(out)) == len(boundary_edges(small))


def boundary_edges(mesh):
    edges, f2e = unique_edges(mesh.faces)
    counts = np.bincount(f2e.ravel(), minlength=len(edges))
    return edges[counts == 1]


def nonmanifold_fin():
    """A closed sphere with an extra fin triangle hanging off one edge (three faces on it)."""
    s = icosphere(2, 0.5)
    a, b = s.faces[0, 0], s.faces[0, 1]
    tip = 0.5 * (s.vertices[a] + s.vertices[b]) * 1.02
    V = np.vstack([s.vertices, tip])
    F = np.vstack([s.faces, [[a, b, len(s.vertices)]]])
    return Mesh(V, F), (a, b)


def test_nonmanifold_edges_survive():
    m, (a, b) = nonmanifold_fin()
    d0 = diagnostics(m)
    assert d0.n_nonmanifold_edges == 1
    out, _, stats = run(m, 2.0 * edge_lengths(m).mean())
    assert stats.collapses > 0
    V0 = m.vertices[[a, b]]
    # both fin-edge endpoints are still present and still joined by an edge
    ends = [int(np.flatnonzero((out.vertices == p).all(axis=1))[0]) for p in V0]
    edges, _ = unique_edges(out.faces)
    assert sorted(ends) in edges.tolist()
    assert diagnostics(out).n_nonmanifold_edges <= d0.n_nonmanifold_edges
    assert count_degenerate_faces(out.faces, out.vertices) == 0
    assert count_duplicate_faces(out.faces) == 0


def test_in_band_connectivity_is_idempotent():
    mesh = icosphere(3, 0.5)
    lt = edge_lengths(mesh).mean()
    L = edge_lengths(mesh)
    assert L.min() >= COLLAPSE_FACTOR * lt and L.max() <= SPLIT_FACTOR * lt
    out, _, stats = run(mesh, lt, flip=False)
    assert stats.splits == stats.collapses == 0
    np.testing.assert_array_equal(out.faces, mesh.faces)
    assert not np.array_equal(out.vertices, mesh.vertices)


def test_target_length_schedule():
    p = RemeshParams()
    assert p.target_length(0) == 0.08 and p.target_length(1) == 0.02
    assert p.target_length(0.5) == pytest.approx(0.05)
    assert p.target_length(2) == 0.02
