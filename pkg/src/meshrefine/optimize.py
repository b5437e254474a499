"""Refinement driver: Adam on vertex positions, interleaved with remeshing.

Also holds the evaluation helpers used on refined meshes (Chamfer distance and
normal consistency against the targets).
"""

from __future__ import annotations

import csv
import io
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field

import numpy as np
from numba import njit

from .camera import ViewSet
from .errors import ConfigError, DataError, NumericalError
from .geometry import (Mesh, count_degenerate_faces, count_duplicate_faces, diagnostics,
                       edge_lengths, face_adjacency, face_areas, save_obj, vertex_normals)
from .loss import TERMS, TargetViews, total_loss
from .raster import rasterize
from .remesh import OptimState, RemeshParams, remesh_pass

log = logging.getLogger(__name__)

METRIC_COLUMNS = ("iteration", "total", "normal", "gradient", "silhouette", "lr", "target_length",
                  "n_vertices", "n_faces", "splits", "collapses", "flips", "volume_change",
                  "degenerate_faces", "duplicate_faces", "mean_edge_length")


@dataclass
class RefineConfig:
    iterations: int = 2000
    lr: float = 0.01
    lr_final: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weights: tuple = (1.0, 1.0, 1.0)
    remesh: RemeshParams = field(default_factory=RemeshParams)
    remesh_interval: int = 1
    snapshot_interval: int = 0
    resolution: int = 256
    seed: int = 0
    threads: int = 1
    foreground_only: bool = False

    def __post_init__(self):
        if isinstance(self.remesh, dict):
            self.remesh = RemeshParams(**self.remesh)
        self.weights = tuple(float(w) for w in self.weights)
        if int(self.iterations) < 1:
            raise ConfigError(f"iterations must be >= 1, got {self.iterations}")
        if not self.lr > 0 or self.lr_final < 0:
            raise ConfigError(f"learning rate must be positive, got {self.lr}")
        if len(self.weights) != 3 or any(w < 0 for w in self.weights):
            raise ConfigError(f"need three non-negative loss weights, got {self.weights}")
        if self.remesh_interval < 0 or self.snapshot_interval < 0:
            raise ConfigError("intervals must be >= 0")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1 and self.eps > 0):
            raise ConfigError("invalid Adam parameters")

    def learning_rate(self, it: int) -> float:
        """Cosine decay from ``lr`` to ``lr_final``."""
        if self.iterations == 1:
            return self.lr
        p = it / (self.iterations - 1)
        return self.lr_final + 0.5 * (self.lr - self.lr_final) * (1.0 + math.cos(math.pi * p))

    def progress(self, it: int) -> float:
        return it / max(self.iterations - 1, 1)

    def to_dict(self):
        d = asdict(self)
        d["weights"] = list(self.weights)
        return d

    @classmethod
    def from_dict(cls, d):
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown refine config keys: {sorted(unknown)}")
        d = dict(d)
        if "remesh" in d and isinstance(d["remesh"], dict):
            try:
                d["remesh"] = RemeshParams(**d["remesh"])
            except TypeError as exc:
                raise ConfigError(f"bad remesh config: {exc}") from None
        return cls(**d)


@dataclass
class RunLog:
    rows: list = field(default_factory=list)
    timings: dict = field(default_factory=dict)
    final: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.rows)

    def column(self, name):
        return np.array([r[name] for r in self.rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(METRIC_COLUMNS)
        for r in self.rows:
            w.writerow([_fmt(r[c]) for c in METRIC_COLUMNS])
        return buf.getvalue()

    def write_csv(self, path):
        tmp = f"{path}.tmp"
        with open(tmp, "w", newline="") as fh:
            fh.write(self.to_csv())
        os.replace(tmp, path)


def _fmt(x):
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def read_metrics(path):
    """Parse a metrics CSV back into a dict of numpy columns."""
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise DataError(f"{path}: no metric rows")
    return {k: np.array([float(r[k]) for r in rows]) for k in rows[0]}


class Adam:
    """Per-vertex Adam whose moments live in an :class:`OptimState`."""

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8):
        self.beta1, self.beta2, self.eps = beta1, beta2, eps

    def step(self, x, grad, state: OptimState, lr):
        state.step += 1
        state.m = self.beta1 * state.m + (1 - self.beta1) * grad
        state.v = self.beta2 * state.v + (1 - self.beta2) * grad * grad
        mhat = state.m / (1 - self.beta1 ** state.step)
        vhat = state.v / (1 - self.beta2 ** state.step)
        return x - lr * mhat / (np.sqrt(vhat) + self.eps)


def _check_finite(report, grad, it):
    for name in ("total",) + TERMS:
        if not math.isfinite(getattr(report, name)):
            raise NumericalError(f"non-finite {name} loss at iteration {it}")
    if grad is not None and not np.all(np.isfinite(grad)):
        raise NumericalError(f"non-finite vertex gradient at iteration {it}")


def refine(mesh: Mesh, views: ViewSet, targets: TargetViews, config: RefineConfig,
           snapshot_dir=None, callback=None):
    """Fit ``mesh`` to the targets; returns ``(refined mesh, RunLog)``.

    ``mesh`` should already be normalized. The loss weights and the
    foreground flag of ``config`` override those stored on ``targets``.
    """
    if len(views) != len(targets):
        raise DataError(f"{len(views)} views but {len(targets)} target images")
    if targets.resolution != config.resolution or views.resolution != config.resolution:
        raise DataError(f"resolution mismatch: config {config.resolution}, targets "
                        f"{targets.resolution}, views {views.resolution}")
    targets = TargetViews(targets.normals, targets.masks, config.weights, config.foreground_only)
    adam = Adam(config.beta1, config.beta2, config.eps)
    state = OptimState.zeros(mesh.n_vertices)
    cur = mesh.copy()
    runlog = RunLog()
    t_loss = t_remesh = 0.0
    t0 = time.perf_counter()
    for it in range(config.iterations):
        ta = time.perf_counter()
        report, grad = total_loss(cur, views, targets, threads=config.threads)
        _check_finite(report, grad, it)
        lr = config.learning_rate(it)
        V = adam.step(cur.vertices, grad, state, lr)
        if not np.all(np.isfinite(V)):
            raise NumericalError(f"non-finite vertex positions after the update at iteration {it}")
        cur = Mesh(V, cur.faces)
        tb = time.perf_counter()
        t_loss += tb - ta
        lt = config.remesh.target_length(config.progress(it))
        row = {"iteration": it, "total": report.total, "normal": report.normal,
               "gradient": report.gradient, "silhouette": report.silhouette, "lr": lr,
               "target_length": lt, "splits": 0, "collapses": 0, "flips": 0,
               "volume_change": 0.0}
        if config.remesh_interval and (it + 1) % config.remesh_interval == 0:
            cur, state, stats = remesh_pass(cur, state, config.remesh, lt)
            row.update(splits=stats.splits, collapses=stats.collapses, flips=stats.flips,
                       volume_change=(stats.volume_after / stats.volume_before - 1.0)
                       if stats.volume_before else 0.0)
        t_remesh += time.perf_counter() - tb
        row.update(n_vertices=cur.n_vertices, n_faces=cur.n_faces,
                   degenerate_faces=count_degenerate_faces(cur.faces, cur.vertices),
                   duplicate_faces=count_duplicate_faces(cur.faces),
                   mean_edge_length=float(edge_lengths(cur).mean()))
        runlog.rows.append(row)
        if snapshot_dir is not None and config.snapshot_interval and \
                (it + 1) % config.snapshot_interval == 0:
            save_obj(cur, os.path.join(snapshot_dir, f"snap_{it + 1:06d}.obj"))
        if callback is not None:
            callback(it, cur, report)
        if it % 100 == 0 or it == config.iterations - 1:
            log.info("iter %d total %.5f n %.5f g %.5f s %.5f |V| %d", it, report.total,
                     report.normal, report.gradient, report.silhouette, cur.n_vertices)
    runlog.timings = {"loss_and_update": t_loss, "remesh": t_remesh,
                      "total": time.perf_counter() - t0}
    runlog.final = diagnostics(cur).as_dict()
    return cur, runlog


# -- evaluation --------------------------------------------------------------

def sample_surface(mesh: Mesh, samples: int, rng, return_faces=False):
    """Area-weighted uniform samples on the surface."""
    areas = face_areas(mesh.vertices, mesh.faces)
    total = areas.sum()
    if not total > 0:
        raise DataError("mesh has zero surface area")
    fid = rng.choice(len(areas), size=samples, p=areas / total)
    r1 = np.sqrt(rng.random(samples))
    r2 = rng.random(samples)
    tri = mesh.vertices[mesh.faces[fid]]
    w0 = 1 - r1
    w1 = r1 * (1 - r2)
    w2 = r1 * r2
    pts = w0[:, None] * tri[:, 0] + w1[:, None] * tri[:, 1] + w2[:, None] * tri[:, 2]
    return (pts, fid) if return_faces else pts


@njit(cache=True, nogil=True)
def _point_triangle_sq(p, a, b, c):
    # closest point on triangle (Ericson, Real-Time Collision Detection 5.1.5)
    ab0, ab1, ab2 = b[0] - a[0], b[1] - a[1], b[2] - a[2]
    ac0, ac1, ac2 = c[0] - a[0], c[1] - a[1], c[2] - a[2]
    ap0, ap1, ap2 = p[0] - a[0], p[1] - a[1], p[2] - a[2]
    d1 = ab0 * ap0 + ab1 * ap1 + ab2 * ap2
    d2 = ac0 * ap0 + ac1 * ap1 + ac2 * ap2
    if d1 <= 0.0 and d2 <= 0.0:
        return ap0 * ap0 + ap1 * ap1 + ap2 * ap2
    bp0, bp1, bp2 = p[0] - b[0], p[1] - b[1], p[2] - b[2]
    d3 = ab0 * bp0 + ab1 * bp1 + ab2 * bp2
    d4 = ac0 * bp0 + ac1 * bp1 + ac2 * bp2
    if d3 >= 0.0 and d4 <= d3:
        return bp0 * bp0 + bp1 * bp1 + bp2 * bp2
    vc = d1 * d4 - d3 * d2
    if vc <= 0.0 and d1 >= 0.0 and d3 <= 0.0:
        v = d1 / (d1 - d3)
        q0, q1, q2 = a[0] + v * ab0 - p[0], a[1] + v * ab1 - p[1], a[2] + v * ab2 - p[2]
        return q0 * q0 + q1 * q1 + q2 * q2
    cp0, cp1, cp2 = p[0] - c[0], p[1] - c[1], p[2] - c[2]
    d5 = ab0 * cp0 + ab1 * cp1 + ab2 * cp2
    d6 = ac0 * cp0 + ac1 * cp1 + ac2 * cp2
    if d6 >= 0.0 and d5 <= d6:
        return cp0 * cp0 + cp1 * cp1 + cp2 * cp2
    vb = d5 * d2 - d1 * d6
    if vb <= 0.0 and d2 >= 0.0 and d6 <= 0.0:
        w = d2 / (d2 - d6)
        q0, q1, q2 = a[0] + w * ac0 - p[0], a[1] + w * ac1 - p[1], a[2] + w * ac2 - p[2]
        return q0 * q0 + q1 * q1 + q2 * q2
    va = d3 * d6 - d5 * d4
    if va <= 0.0 and (d4 - d3) >= 0.0 and (d5 - d6) >= 0.0:
        w = (d4 - d3) / ((d4 - d3) + (d5 - d6))
        q0 = b[0] + w * (c[0] - b[0]) - p[0]
        q1 = b[1] + w * (c[1] - b[1]) - p[1]
        q2 = b[2] + w * (c[2] - b[2]) - p[2]
        return q0 * q0 + q1 * q1 + q2 * q2
    denom = 1.0 / (va + vb + vc)
    v = vb * denom
    w = vc * denom
    q0 = a[0] + ab0 * v + ac0 * w - p[0]
    q1 = a[1] + ab1 * v + ac1 * w - p[1]
    q2 = a[2] + ab2 * v + ac2 * w - p[2]
    return q0 * q0 + q1 * q1 + q2 * q2


@njit(cache=True, nogil=True)
def _points_to_mesh(P, T, lo, hi):
    n = P.shape[0]
    out = np.empty(n)
    nearest = np.empty(n, dtype=np.int64)
    for i in range(n):
        p = P[i]
        best = np.inf
        best_f = -1
        for f in range(T.shape[0]):
            # cheap bounding-box rejection against the current best distance
            dx = max(lo[f, 0] - p[0], 0.0, p[0] - hi[f, 0])
            dy = max(lo[f, 1] - p[1], 0.0, p[1] - hi[f, 1])
            dz = max(lo[f, 2] - p[2], 0.0, p[2] - hi[f, 2])
            if dx * dx + dy * dy + dz * dz >= best:
                continue
            d = _point_triangle_sq(p, T[f, 0], T[f, 1], T[f, 2])
            if d < best:
                best = d
                best_f = f
        out[i] = math.sqrt(best)
        nearest[i] = best_f
    return out, nearest


def point_to_surface(points, mesh: Mesh, return_faces=False):
    """Exact distance from each point to the nearest triangle of ``mesh``."""
    T = np.ascontiguousarray(mesh.vertices[mesh.faces])
    d, f = _points_to_mesh(np.ascontiguousarray(points, dtype=np.float64), T,
                           T.min(axis=1), T.max(axis=1))
    return (d, f) if return_faces else d


def _sample_pair(a, b, samples, seed):
    if a.n_faces == 0 or b.n_faces == 0:
        raise DataError("chamfer distance needs two non-empty meshes")
    if samples < 1000:
        raise ConfigError(f"need at least 1000 samples, got {samples}")
    rng = np.random.default_rng(seed)
    return sample_surface(a, samples, rng, True), sample_surface(b, samples, rng, True)


def chamfer_distance(a: Mesh, b: Mesh, samples: int = 10000, seed: int = 0) -> float:
    """Symmetric mean point-to-surface distance (average of both directions)."""
    (pa, _), (pb, _) = _sample_pair(a, b, samples, seed)
    return 0.5 * float(point_to_surface(pa, b).mean() + point_to_surface(pb, a).mean())


def compare_meshes(a: Mesh, b: Mesh, samples: int = 10000, seed: int = 0) -> dict:
    """Chamfer distance plus normal agreement of sampled points with their nearest faces."""
    from .geometry import face_cross
    (pa, fa), (pb, fb) = _sample_pair(a, b, samples, seed)
    da, na = point_to_surface(pa, b, True)
    db, nb = point_to_surface(pb, a, True)

    def unit(m):
        c = face_cross(m.vertices, m.faces)
        return c / np.maximum(np.linalg.norm(c, axis=1, keepdims=True), 1e-300)

    ua, ub = unit(a), unit(b)
    cos = np.concatenate([np.sum(ua[fa] * ub[na], axis=1), np.sum(ub[fb] * ua[nb], axis=1)])
    return {"chamfer": 0.5 * float(da.mean() + db.mean()),
            "chamfer_a_to_b": float(da.mean()), "chamfer_b_to_a": float(db.mean()),
            "hausdorff": float(max(da.max(), db.max())),
            "normal_cosine_mean": float(cos.mean()),
            "normal_angle_deg_mean": float(np.degrees(np.arccos(np.clip(cos, -1, 1))).mean()),
            "samples": int(samples)}


def normal_consistency(mesh: Mesh, targets: TargetViews, views: ViewSet) -> float:
    """Mean cosine between rendered and target normals on target foreground."""
    if len(views) != len(targets):
        raise DataError(f"{len(views)} views but {len(targets)} target images")
    normals = vertex_normals(mesh)
    adj = face_adjacency(mesh.faces)
    scores = []
    for i, (view, tn, tm) in enumerate(zip(views, targets.normals, targets.masks)):
        fg = np.asarray(tm) > 0.5
        if not fg.any():
            raise DataError(f"view {i} has no foreground pixels")
        r = rasterize(mesh, view, normals, adj).normal[fg]
        t = np.asarray(tn)[fg]
        nr = np.linalg.norm(r, axis=1)
        nt = np.linalg.norm(t, axis=1)
        denom = nr * nt
        cos = np.where(denom > 1e-12, np.sum(r * t, axis=1) / np.maximum(denom, 1e-12), 0.0)
        scores.append(cos.mean())
    return float(np.mean(scores))
