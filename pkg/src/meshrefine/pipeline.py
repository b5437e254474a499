"""Stage orchestration around the refinement.

The generative stages are external: this module renders their control images
(a depth map for the single-view stage, blurred normal maps for the multi-view
stage), hands a request to a backend, and ingests the returned normal and mask
images as :class:`~meshrefine.loss.TargetViews`. A backend is anything that
produces a fixture directory: PNG files plus a ``manifest.json``.

Fixture manifest (version 1)::

    {"format": "meshrefine-fixtures", "version": 1, "resolution": 256,
     "half_extent": 0.55,
     "views": [{"index": 0, "name": "front", "azimuth": 0.0,
                "normal": "normal_00_front.png", "mask": "mask_00_front.png"}, ...]}

Optional per-view ``"rgb"`` entries and a top-level ``"preview"`` (the
single-view image) are carried along but never read.
"""

from __future__ import annotations

import base64
import json
import logging
import os
import urllib.error
import urllib.request
from dataclasses import asdict, dataclass, field

import numpy as np

from . import imageops
from .camera import CANONICAL_AZIMUTHS, ViewSet, Viewpoint, canonical_viewset, is_canonical
from .errors import ConfigError, DataError, MeshRefineError, StageError
from .geometry import Mesh, face_adjacency, load_obj, normalize, save_obj, validate, vertex_normals
from .loss import TargetViews
from .raster import rasterize

log = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
MANIFEST_FORMAT = "meshrefine-fixtures"
CONTROLS_FORMAT = "meshrefine-controls"
MANIFEST_VERSION = 1
STAGES = ("single_view", "multi_view")


def _write_text(path, text):
    tmp = f"{path}.tmp"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# -- requests ----------------------------------------------------------------

@dataclass
class GenerationRequest:
    """One call to a generation backend.

    ``controls`` is a list of ``(view id, kind, path)`` with kind ``depth``,
    ``normal`` or ``rgb``. The guidance fraction is the share of the reverse
    diffusion steps that honour the controls; it is passed through untouched.
    """

    stage: str
    prompt: str
    controls: list
    guidance_fraction: float = 1.0
    seed: int = 0
    n_views: int = len(CANONICAL_AZIMUTHS)

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ConfigError(f"unknown generation stage {self.stage!r}")
        if not 0.0 <= self.guidance_fraction <= 1.0:
            raise ConfigError(f"guidance fraction must lie in [0, 1], got {self.guidance_fraction}")
        kinds = [c[1] for c in self.controls]
        if self.stage == "single_view":
            if kinds != ["depth"]:
                raise ConfigError("a single-view request carries exactly one depth control")
        else:
            if kinds.count("normal") != self.n_views or kinds.count("rgb") != 1 or \
                    len(kinds) != self.n_views + 1:
                raise ConfigError(f"a multi-view request carries {self.n_views} normal controls "
                                  "and the single-view image")

    def to_dict(self):
        d = asdict(self)
        d["controls"] = [{"view": v, "kind": k, "file": os.path.basename(p)}
                         for v, k, p in self.controls]
        return d

    def payload(self):
        """JSON body for an HTTP backend, with the PNGs inlined as base64."""
        d = self.to_dict()
        for c, (_, _, p) in zip(d["controls"], self.controls):
            with open(p, "rb") as fh:
                c["png_base64"] = base64.b64encode(fh.read()).decode("ascii")
        return d


# -- manifests ---------------------------------------------------------------

@dataclass
class FixtureSet:
    """A directory of per-view target images described by a manifest."""

    root: str
    resolution: int
    views: list                 # dicts with index, name, azimuth, normal, mask[, rgb]
    half_extent: float = 0.55
    version: int = MANIFEST_VERSION
    extra: dict = field(default_factory=dict)

    @property
    def azimuths(self):
        return [v["azimuth"] for v in self.views]

    def viewset(self) -> ViewSet:
        return ViewSet(tuple(Viewpoint(v["azimuth"], 0.0, self.half_extent, self.resolution)
                             for v in self.views), self.resolution)

    def to_manifest(self):
        d = dict(self.extra)
        d.update({"format": MANIFEST_FORMAT, "version": self.version,
                  "resolution": self.resolution, "half_extent": self.half_extent,
                  "views": self.views})
        return d

    def write_manifest(self):
        _write_text(os.path.join(self.root, MANIFEST_NAME), dump_json(self.to_manifest()))


def read_manifest(root) -> FixtureSet:
    path = os.path.join(root, MANIFEST_NAME)
    if not os.path.exists(path):
        raise DataError(f"no manifest at {path}")
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise DataError(f"{path}: invalid JSON: {exc}") from None
    if d.get("format") != MANIFEST_FORMAT:
        raise DataError(f"{path}: not a fixture manifest (format={d.get('format')!r})")
    if d.get("version") != MANIFEST_VERSION:
        raise DataError(f"{path}: unsupported manifest version {d.get('version')!r}")
    try:
        fs = FixtureSet(str(root), int(d["resolution"]), list(d["views"]),
                        float(d.get("half_extent", 0.55)), int(d["version"]),
                        {k: v for k, v in d.items()
                         if k not in ("format", "version", "resolution", "half_extent", "views")})
        for v in fs.views:
            for key in ("index", "name", "azimuth", "normal", "mask"):
                if key not in v:
                    raise DataError(f"{path}: view entry missing {key!r}: {v}")
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, DataError):
            raise
        raise DataError(f"{path}: malformed manifest: {exc}") from None
    return fs


def validate_fixtures(fs: FixtureSet) -> None:
    """Reject non-canonical view sets and missing files."""
    if not is_canonical(fs.azimuths):
        raise DataError("fixture views are not the canonical six azimuths: "
                        + ", ".join(f"{a:.6g}" for a in fs.azimuths))
    for v in fs.views:
        for key in ("normal", "mask"):
            p = os.path.join(fs.root, v[key])
            if not os.path.exists(p):
                raise DataError(f"view {v['index']} ({v['name']}): missing {key} file {p}")


def _view_entries(views: ViewSet):
    names = _names(views)
    return [{"index": i, "name": names[i], "azimuth": float(v.azimuth),
             "normal": f"normal_{i:02d}_{names[i]}.png", "mask": f"mask_{i:02d}_{names[i]}.png"}
            for i, v in enumerate(views)]


def _names(views):
    from .camera import CANONICAL_NAMES
    if is_canonical(views.azimuths):
        return list(CANONICAL_NAMES)
    return [f"view{i}" for i in range(len(views))]


def _render_all(mesh, views):
    normals = vertex_normals(mesh)
    adj = face_adjacency(mesh.faces)
    return [rasterize(mesh, v, normals, adj) for v in views]


def write_fixtures(mesh: Mesh, views: ViewSet, out_dir) -> FixtureSet:
    """Render a mesh's normals and coverage as a fixture directory."""
    os.makedirs(out_dir, exist_ok=True)
    entries = _view_entries(views)
    for e, r in zip(entries, _render_all(mesh, views)):
        imageops.encode_normal_png(r.normal, os.path.join(out_dir, e["normal"]))
        imageops.encode_mask_png(r.silhouette, os.path.join(out_dir, e["mask"]))
    fs = FixtureSet(str(out_dir), views.resolution, entries, views[0].half_extent)
    fs.write_manifest()
    return fs


# -- stages ------------------------------------------------------------------

@dataclass
class ControlBundle:
    root: str
    depth: str
    normals: list
    masks: list
    manifest: dict


def prepare_controls(mesh: Mesh, views: ViewSet, out_dir, blur_kernel=imageops.DEFAULT_BLUR_KERNEL,
                     blur_sigma=imageops.DEFAULT_BLUR_SIGMA) -> ControlBundle:
    """Write the control images for both generation stages.

    ``depth_00_<name>.png`` is the depth control of the first view; each view
    gets a blurred normal control and its silhouette mask.
    """
    imageops.gaussian_kernel(blur_kernel, blur_sigma)  # validate before touching disk
    os.makedirs(out_dir, exist_ok=True)
    names = _names(views)
    rasters = _render_all(mesh, views)
    r0 = rasters[0]
    depth = f"depth_00_{names[0]}.png"
    imageops.encode_depth_png(r0.depth, r0.covered, os.path.join(out_dir, depth))
    normals, masks = [], []
    for i, r in enumerate(rasters):
        n = f"control_normal_{i:02d}_{names[i]}.png"
        m = f"mask_{i:02d}_{names[i]}.png"
        imageops.encode_normal_png(imageops.gaussian_blur(r.normal, blur_kernel, blur_sigma),
                                   os.path.join(out_dir, n))
        imageops.encode_mask_png(r.silhouette, os.path.join(out_dir, m))
        normals.append(n)
        masks.append(m)
    manifest = {"format": CONTROLS_FORMAT, "version": MANIFEST_VERSION,
                "resolution": views.resolution, "half_extent": views[0].half_extent,
                "blur": {"kernel_size": blur_kernel, "sigma": blur_sigma},
                "depth": {"view": 0, "file": depth},
                "views": [{"index": i, "name": names[i], "azimuth": float(v.azimuth),
                           "normal": normals[i], "mask": masks[i]} for i, v in enumerate(views)]}
    _write_text(os.path.join(out_dir, MANIFEST_NAME), dump_json(manifest))
    return ControlBundle(str(out_dir), depth, normals, masks, manifest)


def ingest_targets(fixtures, resolution=None, half_extent=None) -> TargetViews:
    """Decode and validate a fixture directory (or :class:`FixtureSet`)."""
    fs = fixtures if isinstance(fixtures, FixtureSet) else read_manifest(fixtures)
    validate_fixtures(fs)
    if resolution is not None and fs.resolution != resolution:
        raise DataError(f"fixture resolution {fs.resolution} does not match the configured "
                        f"resolution {resolution}")
    if half_extent is not None and abs(fs.half_extent - half_extent) > 1e-9:
        raise DataError(f"fixture camera half-extent {fs.half_extent} does not match {half_extent}")
    normals, masks = [], []
    for v in fs.views:
        label = f"view {v['index']} ({v['name']})"
        n = imageops.decode_normal_png(os.path.join(fs.root, v["normal"]))
        m = imageops.decode_mask_png(os.path.join(fs.root, v["mask"]))
        for img, kind in ((n, "normal"), (m, "mask")):
            if img.shape[0] != fs.resolution or img.shape[1] != fs.resolution:
                raise DataError(f"{label}: {kind} image is {img.shape[1]}x{img.shape[0]}, "
                                f"manifest says {fs.resolution}")
        if not np.any(m > 0.5):
            raise DataError(f"{label}: mask has no foreground")
        solid = m >= 1.0
        if solid.any():
            length = np.linalg.norm(n[solid], axis=1)
            if np.mean(np.abs(length - 1.0) < 0.1) < 0.95:
                raise DataError(f"{label}: foreground normals are not unit length")
        normals.append(n)
        masks.append(m)
    return TargetViews(normals, masks)


class FixtureBackend:
    """Serves pre-made target images from a directory; requests are only logged."""

    def __init__(self, root):
        self.root = str(root)

    def generate(self, requests, work_dir):
        if not os.path.isdir(self.root):
            raise DataError(f"fixture directory not found: {self.root}")
        return self.root


class HttpBackend:
    """POSTs each request as JSON and expects a fixture manifest with inlined PNGs back.

    Response: ``{"views": [{"index", "name", "azimuth", "normal_png_base64",
    "mask_png_base64"}, ...], "resolution": N}``. The single-view response may
    carry ``"rgb_png_base64"``, forwarded to the multi-view request.
    """

    def __init__(self, url, timeout=60.0):
        self.url = url
        self.timeout = float(timeout)

    def _post(self, body):
        req = urllib.request.Request(self.url, data=json.dumps(body).encode(),
                                     headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(req, timeout=self.timeout) as resp:
                return json.loads(resp.read().decode())
        except (urllib.error.URLError, OSError) as exc:
            raise DataError(f"backend {self.url} unreachable: {exc}") from None
        except json.JSONDecodeError as exc:
            raise DataError(f"backend {self.url} returned invalid JSON: {exc}") from None

    def generate(self, requests, work_dir):
        single, multi = requests
        os.makedirs(work_dir, exist_ok=True)
        out = self._post(single.payload())
        rgb = out.get("rgb_png_base64")
        if rgb is None:
            raise DataError("single-view response carries no rgb_png_base64")
        preview = os.path.join(work_dir, "preview.png")
        with open(preview, "wb") as fh:
            fh.write(base64.b64decode(rgb))
        multi.controls = [c for c in multi.controls if c[1] != "rgb"] + [(0, "rgb", preview)]
        resp = self._post(multi.payload())
        views = []
        for v in resp.get("views", []):
            e = {k: v[k] for k in ("index", "name", "azimuth")}
            e["normal"] = f"normal_{e['index']:02d}_{e['name']}.png"
            e["mask"] = f"mask_{e['index']:02d}_{e['name']}.png"
            for key in ("normal", "mask"):
                with open(os.path.join(work_dir, e[key]), "wb") as fh:
                    fh.write(base64.b64decode(v[f"{key}_png_base64"]))
            views.append(e)
        fs = FixtureSet(str(work_dir), int(resp["resolution"]), views,
                        extra={"preview": "preview.png"})
        fs.write_manifest()
        return str(work_dir)


# -- run config --------------------------------------------------------------

PIPELINE_KEYS = {"mesh", "out_dir", "fixtures", "backend", "prompt", "guidance_fraction", "seed",
                 "resolution", "blur_kernel", "blur_sigma", "threads", "refine"}


@dataclass
class PipelineConfig:
    mesh: str
    out_dir: str
    fixtures: str = None
    backend: dict = None
    prompt: str = ""
    guidance_fraction: float = 1.0
    seed: int = 0
    resolution: int = 256
    blur_kernel: int = imageops.DEFAULT_BLUR_KERNEL
    blur_sigma: float = imageops.DEFAULT_BLUR_SIGMA
    threads: int = 1
    refine: dict = field(default_factory=dict)

    def __post_init__(self):
        if (self.fixtures is None) == (self.backend is None):
            raise ConfigError("the run config needs exactly one of 'fixtures' or 'backend'")
        if self.backend is not None and "url" not in self.backend:
            raise ConfigError("backend config needs a 'url'")
        if not 0.0 <= float(self.guidance_fraction) <= 1.0:
            raise ConfigError(f"guidance_fraction must lie in [0, 1], got {self.guidance_fraction}")


def load_config(path) -> PipelineConfig:
    """Read a JSON run config; relative paths are resolved against its directory."""
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: top level must be an object")
    unknown = set(d) - PIPELINE_KEYS
    if unknown:
        raise ConfigError(f"{path}: unknown keys {sorted(unknown)}")
    for key in ("mesh", "out_dir"):
        if key not in d:
            raise ConfigError(f"{path}: missing required key {key!r}")
    base = os.path.dirname(os.path.abspath(path))
    for key in ("mesh", "out_dir", "fixtures"):
        if d.get(key) is not None:
            d[key] = os.path.join(base, d[key])
    return PipelineConfig(**d)


def refine_config(cfg_dict, resolution=None, threads=None, seed=None):
    from .optimize import RefineConfig
    d = dict(cfg_dict or {})
    if resolution is not None:
        d.setdefault("resolution", resolution)
    if threads is not None:
        d.setdefault("threads", threads)
    if seed is not None:
        d.setdefault("seed", seed)
    return RefineConfig.from_dict(d)


def refine_and_export(mesh: Mesh, targets: TargetViews, views: ViewSet, rcfg, out_dir,
                      figures=True):
    """Normalize, refine, denormalize and write refined.obj, metrics.csv and figures."""
    from .optimize import refine
    from . import report

    os.makedirs(out_dir, exist_ok=True)
    normed, transform = normalize(mesh)
    snap = None
    if rcfg.snapshot_interval:
        snap = os.path.join(out_dir, "snapshots")
        os.makedirs(snap, exist_ok=True)
    refined, runlog = refine(normed, views, targets, rcfg, snapshot_dir=snap)
    out = Mesh(transform.invert(refined.vertices), refined.faces)
    save_obj(out, os.path.join(out_dir, "refined.obj"))
    runlog.write_csv(os.path.join(out_dir, "metrics.csv"))
    if figures:
        report.loss_figure(runlog, os.path.join(out_dir, "loss.png"))
    return out, runlog


def run_pipeline(config) -> dict:
    """Controls -> generation backend -> ingest -> refine, with artifacts under ``out_dir``.

    Errors are re-raised as :class:`StageError` naming the failed stage.
    """
    cfg = config if isinstance(config, PipelineConfig) else load_config(config)
    out = cfg.out_dir
    os.makedirs(out, exist_ok=True)

    def stage(name, fn, *args):
        try:
            return fn(*args)
        except MeshRefineError as exc:
            raise StageError(name, exc) from exc
        except OSError as exc:
            raise StageError(name, DataError(str(exc))) from exc

    def load():
        mesh = load_obj(cfg.mesh)
        validate(mesh)
        return mesh

    mesh = stage("load", load)
    views = stage("controls", canonical_viewset, cfg.resolution)
    normed, _ = stage("controls", normalize, mesh)
    controls_dir = os.path.join(out, "controls")
    bundle = stage("controls", prepare_controls, normed, views, controls_dir,
                   cfg.blur_kernel, cfg.blur_sigma)

    def make_requests():
        single = GenerationRequest("single_view", cfg.prompt,
                                   [(0, "depth", os.path.join(controls_dir, bundle.depth))],
                                   float(cfg.guidance_fraction), cfg.seed)
        ctrl = [(i, "normal", os.path.join(controls_dir, n)) for i, n in enumerate(bundle.normals)]
        ctrl.append((0, "rgb", os.path.join(out, "generated", "preview.png")))
        multi = GenerationRequest("multi_view", cfg.prompt, ctrl, float(cfg.guidance_fraction),
                                  cfg.seed, len(views))
        lines = "".join(json.dumps(r.to_dict(), sort_keys=True) + "\n" for r in (single, multi))
        _write_text(os.path.join(out, "requests.jsonl"), lines)
        return single, multi

    requests = stage("generate", make_requests)
    if cfg.fixtures is not None:
        backend = FixtureBackend(cfg.fixtures)
    else:
        backend = HttpBackend(cfg.backend["url"], cfg.backend.get("timeout", 60.0))
    fixture_dir = stage("generate", backend.generate, requests, os.path.join(out, "generated"))
    targets = stage("ingest", ingest_targets, fixture_dir, cfg.resolution, views[0].half_extent)
    rcfg = stage("refine", refine_config, cfg.refine, cfg.resolution, cfg.threads, cfg.seed)
    refined, runlog = stage("refine", refine_and_export, mesh, targets, views, rcfg, out)
    summary = {"refined": "refined.obj", "metrics": "metrics.csv", "figure": "loss.png",
               "iterations": len(runlog), "final_loss": runlog.rows[-1]["total"],
               "n_vertices": refined.n_vertices, "n_faces": refined.n_faces,
               "guidance_fraction": cfg.guidance_fraction}
    _write_text(os.path.join(out, "run.json"), dump_json(summary))
    return summary
