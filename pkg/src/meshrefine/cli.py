"""Command-line interface: ``meshrefine <command> [flags]``.

Machine-readable results go to stdout as one JSON line; diagnostics go to
stderr. Exit codes: 0 success, 2 usage/config, 3 input data, 4 numerical.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .errors import ConfigError, MeshRefineError

log = logging.getLogger("meshrefine")

THREADS_ENV = "MESHREFINE_THREADS"


def _default_threads():
    raw = os.environ.get(THREADS_ENV)
    if raw is None:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got {raw!r}") from None
    if n < 1:
        raise ConfigError(f"{THREADS_ENV} must be >= 1, got {n}")
    return n


def _emit(obj):
    sys.stdout.write(json.dumps(obj, sort_keys=True) + "\n")
    sys.stdout.flush()


def _load_mesh(path):
    from .geometry import load_obj, validate
    if not os.path.exists(path):
        from .errors import DataError
        raise DataError(f"mesh file not found: {path}")
    mesh = load_obj(path)
    validate(mesh)
    return mesh


def cmd_render_controls(args):
    from .camera import canonical_viewset
    from .geometry import normalize
    from .pipeline import prepare_controls

    views = canonical_viewset(args.res)
    mesh, _ = normalize(_load_mesh(args.mesh))
    bundle = prepare_controls(mesh, views, args.out, args.blur_kernel, args.blur_sigma)
    _emit({"out": args.out, "depth": bundle.depth, "normals": bundle.normals,
           "masks": bundle.masks})
    return 0


def _read_json(path):
    if not os.path.exists(path):
        raise ConfigError(f"config file not found: {path}")
    try:
        with open(path) as fh:
            d = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON: {exc}") from None
    if not isinstance(d, dict):
        raise ConfigError(f"{path}: top level must be an object")
    return d


def cmd_refine(args):
    from .pipeline import ingest_targets, read_manifest, refine_and_export, refine_config

    cfg = _read_json(args.config) if args.config else {}
    if args.iterations is not None:
        cfg["iterations"] = args.iterations
    if args.seed is not None:
        cfg["seed"] = args.seed
    cfg["threads"] = args.threads if args.threads is not None else _default_threads()
    fixtures = read_manifest(args.targets)
    rcfg = refine_config(cfg, resolution=fixtures.resolution)
    views = fixtures.viewset()
    targets = ingest_targets(fixtures, rcfg.resolution)
    mesh = _load_mesh(args.mesh)
    refined, runlog = refine_and_export(mesh, targets, views, rcfg, args.out,
                                        figures=not args.no_figures)
    last = runlog.rows[-1]
    _emit({"out": args.out, "refined": "refined.obj", "metrics": "metrics.csv",
           "iterations": len(runlog), "final_loss": last["total"],
           "n_vertices": refined.n_vertices, "n_faces": refined.n_faces})
    return 0


def cmd_pipeline(args):
    from .pipeline import load_config, run_pipeline

    cfg = load_config(args.config)
    if args.threads is not None:
        cfg.threads = args.threads
    elif THREADS_ENV in os.environ:
        cfg.threads = _default_threads()
    _emit(run_pipeline(cfg))
    return 0


def cmd_eval(args):
    from .optimize import compare_meshes

    a = _load_mesh(args.mesh_a)
    b = _load_mesh(args.mesh_b)
    if a.n_faces == 0 or b.n_faces == 0:
        from .errors import DataError
        raise DataError("cannot evaluate an empty mesh")
    _emit(compare_meshes(a, b, args.samples, args.seed))
    return 0


def cmd_synth(args):
    from .synth import write_case

    coarse, truth = write_case(args.case, args.out, args.seed, args.res)
    _emit({"case": args.case, "out": args.out, "coarse": "coarse.obj", "truth": "truth.obj",
           "fixtures": "fixtures", "coarse_faces": coarse.n_faces, "truth_faces": truth.n_faces})
    return 0


def build_parser():
    from .synth import CASES

    p = argparse.ArgumentParser(prog="meshrefine",
                                description="Refine a coarse mesh against multi-view normal maps.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", metavar="command")
    sub.required = True

    s = sub.add_parser("render-controls", help="render depth + blurred normal control images")
    s.add_argument("--mesh", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--res", type=int, default=256)
    s.add_argument("--blur-kernel", type=int, default=7)
    s.add_argument("--blur-sigma", type=float, default=1.4)
    s.set_defaults(func=cmd_render_controls)

    s = sub.add_parser("refine", help="fit a mesh to a fixture directory of targets")
    s.add_argument("--mesh", required=True)
    s.add_argument("--targets", required=True, help="fixture directory with manifest.json")
    s.add_argument("--config", help="JSON file with refinement settings")
    s.add_argument("--out", required=True)
    s.add_argument("--iterations", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--threads", type=int)
    s.add_argument("--no-figures", action="store_true", help="skip loss.png")
    s.set_defaults(func=cmd_refine)

    s = sub.add_parser("pipeline", help="controls -> backend -> ingest -> refine from a run config")
    s.add_argument("--config", required=True)
    s.add_argument("--threads", type=int)
    s.set_defaults(func=cmd_pipeline)

    s = sub.add_parser("eval", help="Chamfer distance and normal agreement of two meshes")
    s.add_argument("--mesh-a", required=True)
    s.add_argument("--mesh-b", required=True)
    s.add_argument("--samples", type=int, default=10000)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("synth", help="generate a synthetic recovery case")
    s.add_argument("--case", required=True, choices=CASES)
    s.add_argument("--out", required=True)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--res", type=int, default=256)
    s.set_defaults(func=cmd_synth)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    try:
        threads = getattr(args, "threads", None)
        if threads is not None and threads < 1:
            raise ConfigError(f"--threads must be >= 1, got {threads}")
        return args.func(args)
    except MeshRefineError as exc:
        print(f"meshrefine {args.command}: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"meshrefine {args.command}: error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
