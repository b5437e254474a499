"""The refinement objective: normal l1 + normal-gradient l1 + silhouette l1.

Each term is averaged over the views and the images are compared over all
pixels; rendered and target backgrounds are the zero vector. The l1
subgradient at zero is taken as 0 so a mesh rendered against its own images
is an exact stationary point.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import imageops
from .camera import ViewSet
from .errors import DataError
from .geometry import Mesh, face_adjacency, vertex_normals, vertex_normals_vjp
from .raster import backward_to_world, rasterize

TERMS = ("normal", "gradient", "silhouette")


@dataclass
class TargetViews:
    """Per-view target normals ``(H, W, 3)`` and foreground masks ``(H, W)``."""

    normals: list
    masks: list
    weights: tuple = (1.0, 1.0, 1.0)
    foreground_only: bool = False

    def __post_init__(self):
        if len(self.normals) != len(self.masks):
            raise DataError("targets need one mask per normal image")
        for n, m in zip(self.normals, self.masks):
            if n.shape[:2] != m.shape or n.ndim != 3 or n.shape[2] != 3:
                raise DataError(f"target shapes disagree: {n.shape} vs {m.shape}")
            if np.any(m < 0) or np.any(m > 1):
                raise DataError("mask values must lie in [0, 1]")

    def __len__(self):
        return len(self.normals)

    @property
    def resolution(self):
        return self.normals[0].shape[0] if self.normals else 0

    def with_weights(self, weights):
        return TargetViews(self.normals, self.masks, tuple(weights), self.foreground_only)


@dataclass
class LossReport:
    total: float
    normal: float
    gradient: float
    silhouette: float
    per_view: list = field(default_factory=list)

    def terms(self):
        return {"normal": self.normal, "gradient": self.gradient, "silhouette": self.silhouette}


def _check(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise DataError(f"image shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def _fg(mask, like):
    if mask is None:
        return None
    m = (np.asarray(mask) > 0.5).astype(np.float64)
    return m[..., None] if like.ndim == 3 else m


def normal_loss(rendered, target, mask=None):
    """Raw per-view l1 between normal images and its gradient w.r.t. ``rendered``."""
    r, t = _check(rendered, target)
    d = r - t
    g = np.sign(d)
    fg = _fg(mask, d)
    if fg is not None:
        g *= fg
        return float(np.sum(np.abs(d) * fg)), g
    return float(np.abs(d).sum()), g


def normal_gradient_loss(rendered, target, mask=None):
    """l1 between forward-difference image gradients of rendered and target."""
    r, t = _check(rendered, target)
    rx, ry = imageops.image_gradient(r)
    tx, ty = imageops.image_gradient(t)
    dx = rx - tx
    dy = ry - ty
    sx = np.sign(dx)
    sy = np.sign(dy)
    fg = _fg(mask, dx)
    if fg is not None:
        sx *= fg
        sy *= fg
        value = float(np.sum(np.abs(dx) * fg) + np.sum(np.abs(dy) * fg))
    else:
        value = float(np.abs(dx).sum() + np.abs(dy).sum())
    return value, imageops.image_gradient_adjoint(sx, sy)


def silhouette_loss(rendered_coverage, mask):
    r, m = _check(rendered_coverage, mask)
    if r.ndim != 2:
        raise DataError("silhouette images must be single-channel")
    d = r - m
    return float(np.abs(d).sum()), np.sign(d)


def view_terms(raster, target_normal, target_mask, foreground_only=False):
    """The three raw terms of one view and their image gradients."""
    fg = target_mask if foreground_only else None
    ln, gn = normal_loss(raster.normal, target_normal, fg)
    lg, gg = normal_gradient_loss(raster.normal, target_normal, fg)
    ls, gs = silhouette_loss(raster.silhouette, target_mask)
    return (ln, lg, ls), (gn, gg, gs)


def _evaluate_view(mesh, normals, adjacency, view, tn, tm, weights, scale, foreground_only, need_grad):
    raster = rasterize(mesh, view, normals, adjacency)
    (ln, lg, ls), (gn, gg, gs) = view_terms(raster, tn, tm, foreground_only)
    if not need_grad:
        return (ln, lg, ls), None, raster
    w_n, w_g, w_s = weights
    grad_n = (w_n * gn + w_g * gg) * scale
    grad_s = w_s * gs * scale
    return (ln, lg, ls), backward_to_world(raster, mesh.faces, view, grad_n, grad_s), raster


def total_loss(mesh: Mesh, views: ViewSet, targets: TargetViews, need_grad=True, threads=1,
               return_rasters=False):
    """Evaluate the objective over all views.

    Returns ``(LossReport, grad)`` where ``grad`` is the ``(n, 3)`` gradient
    w.r.t. vertex positions (``None`` when ``need_grad`` is false).
    """
    if len(views) != len(targets):
        raise DataError(f"{len(views)} views but {len(targets)} targets")
    for view, tn in zip(views, targets.normals):
        if tn.shape[0] != view.resolution or tn.shape[1] != view.resolution:
            raise DataError(f"target resolution {tn.shape[:2]} does not match view "
                            f"resolution {view.resolution}")
    normals = vertex_normals(mesh)
    adjacency = face_adjacency(mesh.faces)
    k = len(views)
    scale = 1.0 / k
    args = [(mesh, normals, adjacency, v, tn, tm, targets.weights, scale,
             targets.foreground_only, need_grad)
            for v, tn, tm in zip(views, targets.normals, targets.masks)]
    if threads > 1 and k > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda a: _evaluate_view(*a), args))
    else:
        results = [_evaluate_view(*a) for a in args]

    per_view = [r[0] for r in results]
    raw = np.array(per_view).reshape(k, 3)
    means = raw.sum(axis=0) * scale
    w = np.asarray(targets.weights, dtype=np.float64)
    report = LossReport(float(np.dot(w, means)), float(means[0]), float(means[1]), float(means[2]),
                        [dict(zip(TERMS, row)) for row in raw.tolist()])
    grad = None
    if need_grad:
        gpos = np.zeros_like(mesh.vertices)
        gnrm = np.zeros_like(mesh.vertices)
        for _, (gp, gnm), _ in results:
            gpos += gp
            gnrm += gnm
        grad = gpos + vertex_normals_vjp(mesh.vertices, mesh.faces, gnrm)
    if return_rasters:
        return report, grad, [r[2] for r in results]
    return report, grad


def render_targets(mesh: Mesh, views: ViewSet, weights=(1.0, 1.0, 1.0)) -> TargetViews:
    """Targets equal to the mesh's own renders (normals and coverage)."""
    normals = vertex_normals(mesh)
    adjacency = face_adjacency(mesh.faces)
    rs = [rasterize(mesh, v, normals, adjacency) for v in views]
    return TargetViews([r.normal for r in rs], [r.silhouette for r in rs], tuple(weights))
