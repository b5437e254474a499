"""Differentiable rasterization of normal, depth and silhouette images.

The forward pass is a z-buffer rasterizer over pixel centers (top-left tie
rule, two-sided). Smooth-shaded camera-space normals come from barycentric
interpolation of vertex normals.

Silhouette antialiasing works on pairs of 4-neighbour pixels ``(p, q)`` with
``p`` covered and ``q`` empty. Starting in the triangle under ``p`` we walk
through the mesh along the segment ``p -> q`` until it leaves the surface
through a contour edge (boundary edge or front/back fold). The crossing
distance ``t`` (pixels from ``p``) sets a fractional coverage for both
pixels through a C1 smoothstep ramp one pixel wide, so an edge sweeping over
a pixel center changes the image continuously. The empty pixel takes the
normal interpolated along the crossed edge at the crossing point; a covered
pixel within half a pixel of the edge blends its own normal towards that one
so the image stays C1 as the edge sweeps over its center. A pixel in several
pairs takes the nearest crossing (min for covered, max for empty pixels).

Gradients flow through barycentrics, the vertex normals and the crossing
points. Occlusion boundaries inside the silhouette are not differentiated.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .camera import Viewpoint
from .geometry import Mesh, face_adjacency, vertex_normals, vertex_normals_vjp

DIRS = np.array([[1.0, 0.0], [-1.0, 0.0], [0.0, 1.0], [0.0, -1.0]])
_DI = np.array([0, 0, 1, -1], dtype=np.int64)  # row offset
_DJ = np.array([1, -1, 0, 0], dtype=np.int64)  # column offset
MAX_WALK = 256


@njit(cache=True, nogil=True)
def _cross2(ax, ay, bx, by):
    return ax * by - ay * bx


@njit(cache=True, nogil=True)
def _smoothstep(x):
    return x * x * (3.0 - 2.0 * x)


@njit(cache=True, nogil=True)
def _smoothstep_d(x):
    return 6.0 * x * (1.0 - x)


@njit(cache=True, nogil=True)
def _top_left(ax, ay, bx, by, orient):
    dx = (bx - ax) * orient
    dy = (by - ay) * orient
    return (dy == 0.0 and dx > 0.0) or dy < 0.0


@njit(cache=True, nogil=True)
def _rasterize_kernel(S, Z, faces, res):
    m = faces.shape[0]
    tri_id = np.full((res, res), -1, np.int64)
    bary = np.zeros((res, res, 3))
    zbuf = np.full((res, res), np.inf)
    facing = np.zeros(m, np.int64)
    for f in range(m):
        i0, i1, i2 = faces[f, 0], faces[f, 1], faces[f, 2]
        x0, y0 = S[i0, 0], S[i0, 1]
        x1, y1 = S[i1, 0], S[i1, 1]
        x2, y2 = S[i2, 0], S[i2, 1]
        area = _cross2(x1 - x0, y1 - y0, x2 - x0, y2 - y0)
        # y points down on screen, so an outward (ccw) face has negative area
        facing[f] = 1 if area < 0.0 else -1
        if abs(area) < 1e-12:
            continue
        orient = 1.0 if area > 0.0 else -1.0
        tl0 = _top_left(x1, y1, x2, y2, orient)
        tl1 = _top_left(x2, y2, x0, y0, orient)
        tl2 = _top_left(x0, y0, x1, y1, orient)
        cmin = max(int(np.ceil(min(x0, x1, x2) - 0.5)), 0)
        cmax = min(int(np.floor(max(x0, x1, x2) - 0.5)), res - 1)
        rmin = max(int(np.ceil(min(y0, y1, y2) - 0.5)), 0)
        rmax = min(int(np.floor(max(y0, y1, y2) - 0.5)), res - 1)
        for r in range(rmin, rmax + 1):
            py = r + 0.5
            for c in range(cmin, cmax + 1):
                px = c + 0.5
                e0 = _cross2(x2 - x1, y2 - y1, px - x1, py - y1) * orient
                e1 = _cross2(x0 - x2, y0 - y2, px - x2, py - y2) * orient
                e2 = _cross2(x1 - x0, y1 - y0, px - x0, py - y0) * orient
                if e0 < 0.0 or e1 < 0.0 or e2 < 0.0:
                    continue
                if (e0 == 0.0 and not tl0) or (e1 == 0.0 and not tl1) or (e2 == 0.0 and not tl2):
                    continue
                a = area * orient
                b0, b1, b2 = e0 / a, e1 / a, e2 / a
                z = b0 * Z[i0] + b1 * Z[i1] + b2 * Z[i2]
                if z < zbuf[r, c]:
                    zbuf[r, c] = z
                    tri_id[r, c] = f
                    bary[r, c, 0] = b0
                    bary[r, c, 1] = b1
                    bary[r, c, 2] = b2
    return tri_id, bary, zbuf, facing


@njit(cache=True, nogil=True)
def _shade_kernel(tri_id, bary, faces, M, facing):
    res = tri_id.shape[0]
    n_c = np.zeros((res, res, 3))
    u_len = np.zeros((res, res))
    for r in range(res):
        for c in range(res):
            f = tri_id[r, c]
            if f < 0:
                continue
            ux = 0.0
            uy = 0.0
            uz = 0.0
            for k in range(3):
                v = faces[f, k]
                b = bary[r, c, k]
                ux += b * M[v, 0]
                uy += b * M[v, 1]
                uz += b * M[v, 2]
            ln = np.sqrt(ux * ux + uy * uy + uz * uz)
            u_len[r, c] = ln
            s = facing[f]
            if ln > 1e-12:
                n_c[r, c, 0] = s * ux / ln
                n_c[r, c, 1] = s * uy / ln
                n_c[r, c, 2] = s * uz / ln
            else:
                n_c[r, c, 2] = 1.0
    return n_c, u_len


@njit(cache=True, nogil=True)
def _walk(S, faces, adj, facing, f0, px, py, dx, dy):
    """Follow the ray from (px, py) until it leaves the surface.

    Returns (a, b, t, u, sign); a < 0 when no crossing lies within t <= 1.
    """
    cur = f0
    entry = -1
    t_prev = 0.0
    for _ in range(MAX_WALK):
        best_k = -1
        best_t = np.inf
        best_u = 0.0
        for k in range(3):
            if k == entry:
                continue
            a = faces[cur, k]
            b = faces[cur, (k + 1) % 3]
            ex = S[b, 0] - S[a, 0]
            ey = S[b, 1] - S[a, 1]
            den = _cross2(dx, dy, ex, ey)
            if abs(den) < 1e-14:
                continue
            wx = S[a, 0] - px
            wy = S[a, 1] - py
            t = _cross2(wx, wy, ex, ey) / den
            u = _cross2(wx, wy, dx, dy) / den
            if u < -1e-12 or u > 1.0 + 1e-12 or t < t_prev - 1e-12:
                continue
            if t < best_t:
                best_t = t
                best_k = k
                best_u = u
        if best_k < 0 or best_t > 1.0:
            return -1, -1, 0.0, 0.0, 0
        a = faces[cur, best_k]
        b = faces[cur, (best_k + 1) % 3]
        nb = adj[cur, best_k]
        if nb < 0 or facing[nb] != facing[cur]:
            return a, b, max(best_t, 0.0), min(max(best_u, 0.0), 1.0), facing[cur]
        entry = -1
        for k in range(3):
            na = faces[nb, k]
            nbb = faces[nb, (k + 1) % 3]
            if (na == a and nbb == b) or (na == b and nbb == a):
                entry = k
        cur = nb
        t_prev = best_t
    return -1, -1, 0.0, 0.0, 0


@njit(cache=True, nogil=True)
def _antialias_kernel(tri_id, S, faces, adj, facing, M, DI, DJ):
    res = tri_id.shape[0]
    cap = 4 * res * res
    pp = np.empty(cap, np.int64)
    pq = np.empty(cap, np.int64)
    pdir = np.empty(cap, np.int64)
    pa = np.empty(cap, np.int64)
    pb = np.empty(cap, np.int64)
    pt = np.empty(cap)
    pu = np.empty(cap)
    psign = np.empty(cap, np.int64)
    npairs = 0
    for r in range(res):
        for c in range(res):
            f = tri_id[r, c]
            if f < 0:
                continue
            for d in range(4):
                rr = r + DI[d]
                cc = c + DJ[d]
                if rr < 0 or rr >= res or cc < 0 or cc >= res:
                    continue
                if tri_id[rr, cc] >= 0:
                    continue
                a, b, t, u, sg = _walk(S, faces, adj, facing, f, c + 0.5, r + 0.5,
                                       float(DJ[d]), float(DI[d]))
                if a < 0:
                    continue
                pp[npairs] = r * res + c
                pq[npairs] = rr * res + cc
                pdir[npairs] = d
                pa[npairs] = a
                pb[npairs] = b
                pt[npairs] = t
                pu[npairs] = u
                psign[npairs] = sg
                npairs += 1
    return (pp[:npairs], pq[:npairs], pdir[:npairs], pa[:npairs], pb[:npairs],
            pt[:npairs], pu[:npairs], psign[:npairs])


@njit(cache=True, nogil=True)
def _edge_normal(M, a, b, u, sg):
    vx = (1.0 - u) * M[a, 0] + u * M[b, 0]
    vy = (1.0 - u) * M[a, 1] + u * M[b, 1]
    vz = (1.0 - u) * M[a, 2] + u * M[b, 2]
    ln = np.sqrt(vx * vx + vy * vy + vz * vz)
    if ln < 1e-12:
        return 0.0, 0.0, float(sg), ln, vx, vy, vz
    return sg * vx / ln, sg * vy / ln, sg * vz / ln, ln, vx, vy, vz


@njit(cache=True, nogil=True)
def _compose_kernel(tri_id, n_c, pp, pq, pa, pb, pt, pu, psign, M):
    res = tri_id.shape[0]
    npix = res * res
    best_in = np.full(npix, -1, np.int64)
    best_out = np.full(npix, -1, np.int64)
    wsum = np.zeros(npix)
    nsum = np.zeros((npix, 3))
    for i in range(pp.shape[0]):
        t = pt[i]
        p = pp[i]
        q = pq[i]
        if best_in[p] < 0 or t < pt[best_in[p]]:
            best_in[p] = i
        if best_out[q] < 0 or t > pt[best_out[q]]:
            best_out[q] = i
        s_out = _smoothstep(max(t - 0.5, 0.0))
        wsum[q] += s_out
        nx, ny, nz, _, _, _, _ = _edge_normal(M, pa[i], pb[i], pu[i], psign[i])
        nsum[q, 0] += s_out * nx
        nsum[q, 1] += s_out * ny
        nsum[q, 2] += s_out * nz
    normal = np.zeros((res, res, 3))
    sil = np.zeros((res, res))
    for r in range(res):
        for c in range(res):
            k = r * res + c
            if tri_id[r, c] >= 0:
                i = best_in[k]
                if i >= 0 and pt[i] < 0.5:
                    t = pt[i]
                    cov = _smoothstep(t + 0.5)
                    lam = _smoothstep(2.0 * t)
                    nx, ny, nz, _, _, _, _ = _edge_normal(M, pa[i], pb[i], pu[i], psign[i])
                    sil[r, c] = cov
                    normal[r, c, 0] = cov * (lam * n_c[r, c, 0] + (1.0 - lam) * nx)
                    normal[r, c, 1] = cov * (lam * n_c[r, c, 1] + (1.0 - lam) * ny)
                    normal[r, c, 2] = cov * (lam * n_c[r, c, 2] + (1.0 - lam) * nz)
                else:
                    sil[r, c] = 1.0
                    for j in range(3):
                        normal[r, c, j] = n_c[r, c, j]
            elif wsum[k] > 0.0:
                cov = _smoothstep(pt[best_out[k]] - 0.5)
                sil[r, c] = cov
                for j in range(3):
                    normal[r, c, j] = cov * nsum[k, j] / wsum[k]
    return normal, sil, best_in, best_out, wsum, nsum


@njit(cache=True, nogil=True)
def _cross2_vjp(g, ax, ay, bx, by):
    """Gradient of cross2(a, b) scaled by g: returns (gax, gay, gbx, gby)."""
    return g * by, -g * bx, -g * ay, g * ax


@njit(cache=True, nogil=True)
def _backward_kernel(tri_id, bary, faces, S, M, facing, n_c, u_len,
                     pp, pq, pdir, pa, pb, pt, pu, psign,
                     best_in, best_out, wsum, nsum, gN, gS, dirs):
    res = tri_id.shape[0]
    npix = res * res
    n = S.shape[0]
    gscr = np.zeros((n, 2))
    gM = np.zeros((n, 3))
    gc_in = np.zeros(npix)
    gc_out = np.zeros(npix)
    gnbar = np.zeros((npix, 3))
    glam = np.zeros(npix)
    gnx_in = np.zeros((npix, 3))

    for r in range(res):
        for c in range(res):
            k = r * res + c
            f = tri_id[r, c]
            if f >= 0:
                cov = 1.0
                lam = 1.0
                gc = gS[r, c]
                i = best_in[k]
                if i >= 0 and pt[i] < 0.5:
                    t = pt[i]
                    cov = _smoothstep(t + 0.5)
                    lam = _smoothstep(2.0 * t)
                    nx, ny, nz, _, _, _, _ = _edge_normal(M, pa[i], pb[i], pu[i], psign[i])
                    bx = lam * n_c[r, c, 0] + (1.0 - lam) * nx
                    by = lam * n_c[r, c, 1] + (1.0 - lam) * ny
                    bz = lam * n_c[r, c, 2] + (1.0 - lam) * nz
                    gc += gN[r, c, 0] * bx + gN[r, c, 1] * by + gN[r, c, 2] * bz
                    glam[k] = cov * (gN[r, c, 0] * (n_c[r, c, 0] - nx) + gN[r, c, 1] * (n_c[r, c, 1] - ny)
                                     + gN[r, c, 2] * (n_c[r, c, 2] - nz))
                    for j in range(3):
                        gnx_in[k, j] = cov * (1.0 - lam) * gN[r, c, j]
                gc_in[k] = gc
                cov = cov * lam
                ln = u_len[r, c]
                if ln <= 1e-12:
                    continue
                sg = facing[f]
                # dL/d(unit u) = sg * cov * gN ; n_hat = sg * n_c
                hx = sg * n_c[r, c, 0]
                hy = sg * n_c[r, c, 1]
                hz = sg * n_c[r, c, 2]
                qx = sg * cov * gN[r, c, 0]
                qy = sg * cov * gN[r, c, 1]
                qz = sg * cov * gN[r, c, 2]
                dot = hx * qx + hy * qy + hz * qz
                gux = (qx - hx * dot) / ln
                guy = (qy - hy * dot) / ln
                guz = (qz - hz * dot) / ln
                i0, i1, i2 = faces[f, 0], faces[f, 1], faces[f, 2]
                gb = np.zeros(3)
                for j in range(3):
                    v = faces[f, j]
                    b = bary[r, c, j]
                    gM[v, 0] += b * gux
                    gM[v, 1] += b * guy
                    gM[v, 2] += b * guz
                    gb[j] = M[v, 0] * gux + M[v, 1] * guy + M[v, 2] * guz
                px = c + 0.5
                py = r + 0.5
                x0, y0 = S[i0, 0], S[i0, 1]
                x1, y1 = S[i1, 0], S[i1, 1]
                x2, y2 = S[i2, 0], S[i2, 1]
                area = _cross2(x1 - x0, y1 - y0, x2 - x0, y2 - y0)
                gA = -(gb[0] * bary[r, c, 0] + gb[1] * bary[r, c, 1] + gb[2] * bary[r, c, 2]) / area
                # E0 = cross(s2 - s1, P - s1)
                gax, gay, gbx, gby = _cross2_vjp(gb[0] / area, x2 - x1, y2 - y1, px - x1, py - y1)
                gscr[i2, 0] += gax
                gscr[i2, 1] += gay
                gscr[i1, 0] -= gax + gbx
                gscr[i1, 1] -= gay + gby
                # E1 = cross(s0 - s2, P - s2)
                gax, gay, gbx, gby = _cross2_vjp(gb[1] / area, x0 - x2, y0 - y2, px - x2, py - y2)
                gscr[i0, 0] += gax
                gscr[i0, 1] += gay
                gscr[i2, 0] -= gax + gbx
                gscr[i2, 1] -= gay + gby
                # E2 = cross(s1 - s0, P - s0)
                gax, gay, gbx, gby = _cross2_vjp(gb[2] / area, x1 - x0, y1 - y0, px - x0, py - y0)
                gscr[i1, 0] += gax
                gscr[i1, 1] += gay
                gscr[i0, 0] -= gax + gbx
                gscr[i0, 1] -= gay + gby
                # A = cross(s1 - s0, s2 - s0)
                gax, gay, gbx, gby = _cross2_vjp(gA, x1 - x0, y1 - y0, x2 - x0, y2 - y0)
                gscr[i1, 0] += gax
                gscr[i1, 1] += gay
                gscr[i2, 0] += gbx
                gscr[i2, 1] += gby
                gscr[i0, 0] -= gax + gbx
                gscr[i0, 1] -= gay + gby
            elif wsum[k] > 0.0:
                cov = _smoothstep(pt[best_out[k]] - 0.5)
                w = wsum[k]
                gc = gS[r, c]
                for j in range(3):
                    gc += gN[r, c, j] * nsum[k, j] / w
                    gnbar[k, j] = cov * gN[r, c, j]
                gc_out[k] = gc

    for i in range(pp.shape[0]):
        p = pp[i]
        q = pq[i]
        t = pt[i]
        u = pu[i]
        a = pa[i]
        b = pb[i]
        sg = psign[i]
        g_t = 0.0
        g_u = 0.0
        qx = 0.0
        qy = 0.0
        qz = 0.0
        if t < 0.5 and best_in[p] == i:
            g_t += gc_in[p] * _smoothstep_d(t + 0.5) + glam[p] * 2.0 * _smoothstep_d(2.0 * t)
            qx += gnx_in[p, 0]
            qy += gnx_in[p, 1]
            qz += gnx_in[p, 2]
        nx, ny, nz, ln, vx, vy, vz = _edge_normal(M, a, b, u, sg)
        if t > 0.5:
            x = t - 0.5
            s_out = _smoothstep(x)
            w = wsum[q]
            nbx = nsum[q, 0] / w
            nby = nsum[q, 1] / w
            nbz = nsum[q, 2] / w
            g_s = gc_out[q] if best_out[q] == i else 0.0
            g_s += (gnbar[q, 0] * (nx - nbx) + gnbar[q, 1] * (ny - nby)
                    + gnbar[q, 2] * (nz - nbz)) / w
            g_t += g_s * _smoothstep_d(x)
            qx += gnbar[q, 0] * s_out / w
            qy += gnbar[q, 1] * s_out / w
            qz += gnbar[q, 2] * s_out / w
        if ln > 1e-12 and (qx != 0.0 or qy != 0.0 or qz != 0.0):
            qx *= sg
            qy *= sg
            qz *= sg
            hx = vx / ln
            hy = vy / ln
            hz = vz / ln
            dot = hx * qx + hy * qy + hz * qz
            gvx = (qx - hx * dot) / ln
            gvy = (qy - hy * dot) / ln
            gvz = (qz - hz * dot) / ln
            gM[a, 0] += (1.0 - u) * gvx
            gM[a, 1] += (1.0 - u) * gvy
            gM[a, 2] += (1.0 - u) * gvz
            gM[b, 0] += u * gvx
            gM[b, 1] += u * gvy
            gM[b, 2] += u * gvz
            g_u += ((M[b, 0] - M[a, 0]) * gvx + (M[b, 1] - M[a, 1]) * gvy
                    + (M[b, 2] - M[a, 2]) * gvz)
        if g_t == 0.0 and g_u == 0.0:
            continue
        r = p // res
        c = p % res
        px = c + 0.5
        py = r + 0.5
        dx = dirs[pdir[i], 0]
        dy = dirs[pdir[i], 1]
        ex = S[b, 0] - S[a, 0]
        ey = S[b, 1] - S[a, 1]
        wx = S[a, 0] - px
        wy = S[a, 1] - py
        den = _cross2(dx, dy, ex, ey)
        gNt = g_t / den
        gNu = g_u / den
        gD = -(g_t * t + g_u * u) / den
        gwx, gwy, gex, gey = _cross2_vjp(gNt, wx, wy, ex, ey)
        gwx2, gwy2, _, _ = _cross2_vjp(gNu, wx, wy, dx, dy)
        gwx += gwx2
        gwy += gwy2
        _, _, gex2, gey2 = _cross2_vjp(gD, dx, dy, ex, ey)
        gex += gex2
        gey += gey2
        gscr[a, 0] += gwx - gex
        gscr[a, 1] += gwy - gey
        gscr[b, 0] += gex
        gscr[b, 1] += gey
    return gscr, gM


@dataclass
class RasterOutput:
    """Images of one view plus the state needed for the backward pass."""

    normal: np.ndarray          # (H, W, 3) camera-space normals scaled by coverage
    depth: np.ndarray           # (H, W) camera depth, background = sentinel
    silhouette: np.ndarray      # (H, W) coverage in [0, 1]
    tri_id: np.ndarray          # (H, W) face index or -1
    bary: np.ndarray            # (H, W, 3)
    depth_sentinel: float
    screen: np.ndarray
    cam_normals: np.ndarray
    facing: np.ndarray
    _shade: tuple
    _pairs: tuple
    _compose: tuple

    @property
    def covered(self):
        return self.tri_id >= 0

    @property
    def n_pairs(self):
        return len(self._pairs[0])

    def band_mask(self):
        """Pixels whose coverage comes from antialiasing."""
        res = self.tri_id.shape[0]
        m = np.zeros(res * res, dtype=bool)
        m[self._pairs[0]] = True
        m[self._pairs[1]] = True
        return m.reshape(res, res)


def rasterize(mesh: Mesh, viewpoint: Viewpoint, normals=None, adjacency=None) -> RasterOutput:
    """Render normals, depth and antialiased silhouette of ``mesh``.

    ``normals`` (world-space vertex normals) and ``adjacency`` may be passed
    in to share work across views.
    """
    if normals is None:
        normals = vertex_normals(mesh)
    if adjacency is None:
        adjacency = face_adjacency(mesh.faces)
    res = int(viewpoint.resolution)
    proj = viewpoint.project(mesh.vertices)
    S = np.ascontiguousarray(proj[:, :2])
    Z = np.ascontiguousarray(proj[:, 2])
    M = np.ascontiguousarray(normals @ viewpoint.rotation.T)
    faces = mesh.faces
    tri_id, bary, zbuf, facing = _rasterize_kernel(S, Z, faces, res)
    n_c, u_len = _shade_kernel(tri_id, bary, faces, M, facing)
    pairs = _antialias_kernel(tri_id, S, faces, adjacency, facing, M, _DI, _DJ)
    pp, pq, pdir, pa, pb, pt, pu, psign = pairs
    composed = _compose_kernel(tri_id, n_c, pp, pq, pa, pb, pt, pu, psign, M)
    normal, sil = composed[0], composed[1]
    covered = tri_id >= 0
    sentinel = float(zbuf[covered].max() + 1.0) if covered.any() else viewpoint.distance + 1.0
    depth = np.where(covered, zbuf, sentinel)
    return RasterOutput(normal, depth, sil, tri_id, bary, sentinel, S, M, facing,
                        (n_c, u_len), pairs, composed[2:])


def backward_parts(raster: RasterOutput, faces, grad_normal, grad_silhouette):
    """Gradients w.r.t. screen positions ``(n, 2)`` and camera-space vertex normals ``(n, 3)``."""
    grad_normal = np.ascontiguousarray(grad_normal, dtype=np.float64)
    grad_silhouette = np.ascontiguousarray(grad_silhouette, dtype=np.float64)
    if grad_normal.shape != raster.normal.shape or grad_silhouette.shape != raster.silhouette.shape:
        from .errors import DataError
        raise DataError("gradient image shape does not match the rendered view")
    n_c, u_len = raster._shade
    pp, pq, pdir, pa, pb, pt, pu, psign = raster._pairs
    best_in, best_out, wsum, nsum = raster._compose
    return _backward_kernel(raster.tri_id, raster.bary, faces, raster.screen, raster.cam_normals,
                            raster.facing, n_c, u_len, pp, pq, pdir, pa, pb, pt, pu, psign,
                            best_in, best_out, wsum, nsum, grad_normal, grad_silhouette, DIRS)


def backward_to_world(raster, faces, viewpoint, grad_normal, grad_silhouette):
    """Split gradient: direct position term and world-space vertex-normal term."""
    gscr, gM = backward_parts(raster, faces, grad_normal, grad_silhouette)
    return gscr @ viewpoint.screen_jacobian(), gM @ viewpoint.rotation


def backward(raster: RasterOutput, mesh: Mesh, viewpoint: Viewpoint, grad_normal, grad_silhouette):
    """Vertex-position gradient ``(n, 3)`` of a loss given its image gradients."""
    gpos, gnrm = backward_to_world(raster, mesh.faces, viewpoint, grad_normal, grad_silhouette)
    return gpos + vertex_normals_vjp(mesh.vertices, mesh.faces, gnrm)
