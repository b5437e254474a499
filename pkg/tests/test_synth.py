import math

import numpy as np
import pytest

from meshrefine.errors import ConfigError
from meshrefine.geometry import diagnostics, face_areas, icosphere
from meshrefine.camera import canonical_viewset
from meshrefine.pipeline import ingest_targets, read_manifest
from meshrefine.raster import rasterize
from meshrefine.synth import (CASE_HALF_EXTENT, CASES, cube_dents, make_case, real_sh,
                              sphere_bumps, write_case)


def sphere_quadrature(k=5):
    """Face-centroid directions and spherical areas of an icosphere (sums to ~4 pi)."""
    m = icosphere(k)
    c = m.vertices[m.faces].mean(axis=1)
    w = face_areas(m.vertices, m.faces)
    w *= 4 * math.pi / w.sum()
    return c / np.linalg.norm(c, axis=1, keepdims=True), w


def test_real_harmonics_are_orthonormal():
    dirs, w = sphere_quadrature()
    basis = [(l, m) for l in range(5) for m in range(-l, l + 1)]
    Y = np.stack([real_sh(l, m, dirs) for l, m in basis])
    gram = (Y * w) @ Y.T
    np.testing.assert_allclose(gram, np.eye(len(basis)), atol=5e-3)


def test_low_order_values():
    z = np.array([[0.0, 0.0, 1.0]])
    assert real_sh(0, 0, z)[0] == pytest.approx(1 / math.sqrt(4 * math.pi))
    assert abs(real_sh(1, 0, z)[0]) == pytest.approx(math.sqrt(3 / (4 * math.pi)))


def test_sphere_bumps_construction():
    coarse, truth = sphere_bumps(0)
    assert coarse.n_faces == 320
    ext = coarse.vertices.max(axis=0) - coarse.vertices.min(axis=0)
    assert ext.max() == pytest.approx(1.0)
    r0 = np.linalg.norm(coarse.vertices, axis=1).mean()
    disp = np.linalg.norm(truth.vertices, axis=1) - r0
    assert np.abs(disp).max() == pytest.approx(0.05)
    # no l = 0 or l = 1 content: the displacement has no mean offset and no shift
    dirs = truth.vertices / np.linalg.norm(truth.vertices, axis=1, keepdims=True)
    assert abs(disp.mean()) < 2e-3
    assert np.abs((disp[:, None] * dirs).mean(axis=0)).max() < 2e-3
    d = diagnostics(truth)
    assert d.n_boundary_edges == 0 and d.n_components == 1


def test_seeds_differ_and_repeat():
    _, a = sphere_bumps(0)
    _, b = sphere_bumps(0)
    _, c = sphere_bumps(1)
    assert a.vertices.tobytes() == b.vertices.tobytes()
    assert not np.allclose(a.vertices, c.vertices)


def test_cube_dents_construction():
    coarse, truth = cube_dents(0)
    for m in (coarse, truth):
        d = diagnostics(m)
        assert d.n_boundary_edges == 0 and d.n_nonmanifold_edges == 0 and d.n_components == 1
    moved = np.abs(truth.vertices).max(axis=1) < 0.5 - 1e-6
    assert moved.any()
    # dents only on the side faces the canonical views look at
    top_bottom = np.abs(np.abs(truth.vertices[:, 1]) - 0.5) < 1e-12
    assert not (moved & top_bottom).any()
    depth = 0.5 - np.abs(truth.vertices[moved][:, [0, 2]]).max(axis=1)
    assert depth.max() == pytest.approx(0.06, rel=0.05)
    assert np.abs(truth.vertices).max() == pytest.approx(0.5)


def test_unknown_case():
    assert set(CASES) == {"sphere-bumps", "cube-dents"}
    with pytest.raises(ConfigError, match="teapot"):
        make_case("teapot")


@pytest.mark.parametrize("case", CASES)
def test_cases_stay_inside_their_frame(case):
    # at the 256² working resolution the antialiasing band never reaches the image border
    coarse, truth = make_case(case)
    for mesh in (coarse, truth):
        for view in canonical_viewset(256, CASE_HALF_EXTENT[case]):
            sil = rasterize(mesh, view).silhouette
            border = np.concatenate([sil[0], sil[-1], sil[:, 0], sil[:, -1]])
            assert border.max() == 0.0, (case, view.azimuth)


def test_write_case_records_framing(tmp_path):
    write_case("cube-dents", tmp_path, resolution=32)
    fs = read_manifest(tmp_path / "fixtures")
    assert fs.half_extent == 0.75
    assert fs.viewset()[1].half_extent == 0.75
    assert len(ingest_targets(fs)) == 6
