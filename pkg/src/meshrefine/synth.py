"""Synthetic recovery cases: a coarse mesh, a detailed ground truth, and target fixtures.

The ground truth is expressed in the coarse mesh's frame, so the targets
rendered from ``normalize(coarse)`` agree with what the refinement sees.
"""

from __future__ import annotations

import math
import os

import numpy as np

from .errors import ConfigError
from .geometry import Mesh, icosphere, normalize, save_obj

CASES = ("sphere-bumps", "cube-dents")
SH_DEGREES = (2, 3, 4)
# orthographic half-extent per case; a unit cube seen along a diagonal is sqrt(2)/2 wide
CASE_HALF_EXTENT = {"sphere-bumps": 0.55, "cube-dents": 0.75}


def _legendre(l, m, x):
    """Associated Legendre P_l^m(x) for m >= 0 (Condon-Shortley phase omitted)."""
    pmm = np.ones_like(x)
    if m > 0:
        s = np.sqrt(np.maximum(1 - x * x, 0.0))
        fact = 1.0
        for _ in range(m):
            pmm = pmm * fact * s
            fact += 2.0
    if l == m:
        return pmm
    pmmp1 = x * (2 * m + 1) * pmm
    if l == m + 1:
        return pmmp1
    for ll in range(m + 2, l + 1):
        pll = ((2 * ll - 1) * x * pmmp1 - (ll + m - 1) * pmm) / (ll - m)
        pmm, pmmp1 = pmmp1, pll
    return pmmp1


def real_sh(l, m, dirs):
    """Orthonormal real spherical harmonic Y_lm at unit directions ``(n, 3)`` (z is the pole)."""
    x, y, z = dirs[:, 0], dirs[:, 1], dirs[:, 2]
    theta_phi = np.arctan2(y, x)
    am = abs(m)
    k = math.sqrt((2 * l + 1) / (4 * math.pi) * math.factorial(l - am) / math.factorial(l + am))
    p = _legendre(l, am, np.clip(z, -1, 1))
    if m == 0:
        return k * p
    if m > 0:
        return math.sqrt(2) * k * np.cos(m * theta_phi) * p
    return math.sqrt(2) * k * np.sin(am * theta_phi) * p


def sh_field(dirs, rng, degrees=SH_DEGREES):
    """Random combination of real harmonics with unit-variance coefficients."""
    out = np.zeros(len(dirs))
    for l in degrees:
        for m in range(-l, l + 1):
            out += rng.standard_normal() * real_sh(l, m, dirs)
    return out


def sphere_bumps(seed=0, amplitude=0.05, coarse_subdivisions=2, truth_subdivisions=5):
    """Coarse 320-face icosphere and a sphere displaced by seeded harmonics.

    Both are returned in normalized units (the coarse mesh has unit bounding
    box); ``amplitude`` is the maximum radial displacement.
    """
    rng = np.random.default_rng(seed)
    coarse, _ = normalize(icosphere(coarse_subdivisions, 1.0))
    radius = float(np.linalg.norm(coarse.vertices, axis=1).mean())
    fine = icosphere(truth_subdivisions, 1.0)
    dirs = fine.vertices
    f = sh_field(dirs, rng)
    f *= amplitude / np.abs(f).max()
    truth = Mesh(dirs * (radius + f)[:, None], fine.faces)
    return coarse, truth


def _cube_grid(n, half):
    """Closed cube surface with an ``n x n`` quad grid per face (shared corner vertices)."""
    t = np.linspace(-half, half, n + 1)
    key_to_id = {}
    verts = []
    faces = []

    def vid(p):
        k = tuple(np.round(np.asarray(p) / half * n).astype(int).tolist())
        if k not in key_to_id:
            key_to_id[k] = len(verts)
            verts.append(p)
        return key_to_id[k]

    for axis in range(3):
        for sgn in (-1.0, 1.0):
            u_ax, v_ax = [a for a in range(3) if a != axis]
            grid = np.empty((n + 1, n + 1), dtype=np.int64)
            for i in range(n + 1):
                for j in range(n + 1):
                    p = np.zeros(3)
                    p[axis] = sgn * half
                    p[u_ax] = t[i]
                    p[v_ax] = t[j]
                    grid[i, j] = vid(p)
            for i in range(n):
                for j in range(n):
                    a, b, c, d = grid[i, j], grid[i + 1, j], grid[i + 1, j + 1], grid[i, j + 1]
                    faces += [[a, b, c], [a, c, d]]
    V = np.array(verts, dtype=np.float64)
    F = np.array(faces, dtype=np.int64)
    # orient outward: the face normal should point away from the cube center
    cen = V[F].mean(axis=1)
    nrm = np.cross(V[F[:, 1]] - V[F[:, 0]], V[F[:, 2]] - V[F[:, 0]])
    flip = np.einsum("ij,ij->i", nrm, cen) < 0
    F[flip] = F[flip][:, ::-1]
    return Mesh(V, F)


def cube_dents(seed=0, depth=0.06, radius=0.15, n_dents=6, coarse_cells=4, truth_cells=48):
    """Coarse gridded cube and a cube with seeded smooth dents on its four side faces."""
    rng = np.random.default_rng(seed)
    half = 0.5
    coarse = _cube_grid(coarse_cells, half)
    fine = _cube_grid(truth_cells, half)
    V = fine.vertices.copy()
    for k in range(n_dents):
        # the canonical views orbit +y at zero elevation, so only the four side faces are seen
        axis = (0, 2)[k % 2]
        sgn = 1.0 if (k // 2) % 2 == 0 else -1.0
        c = rng.uniform(-0.25, 0.25, size=3)
        c[axis] = sgn * half
        d = np.linalg.norm(V - c, axis=1)
        on_face = np.abs(V[:, axis] - sgn * half) < 1e-9
        w = np.clip(1 - (d / radius) ** 2, 0, None) ** 2 * on_face
        V[:, axis] -= sgn * depth * w
    return coarse, Mesh(V, fine.faces)


def make_case(case, seed=0):
    if case == "sphere-bumps":
        return sphere_bumps(seed)
    if case == "cube-dents":
        return cube_dents(seed)
    raise ConfigError(f"unknown synthetic case {case!r}; choose from {', '.join(CASES)}")


def write_case(case, out_dir, seed=0, resolution=256):
    """Write ``coarse.obj``, ``truth.obj`` and ``fixtures/`` rendered from the truth."""
    from .camera import canonical_viewset
    from .pipeline import write_fixtures

    coarse, truth = make_case(case, seed)
    os.makedirs(out_dir, exist_ok=True)
    save_obj(coarse, os.path.join(out_dir, "coarse.obj"))
    save_obj(truth, os.path.join(out_dir, "truth.obj"))
    views = canonical_viewset(resolution, CASE_HALF_EXTENT[case])
    write_fixtures(truth, views, os.path.join(out_dir, "fixtures"))
    return coarse, truth
