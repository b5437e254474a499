"""Acceptance criteria, one test each; every test records a PASS/FAIL line.

The lines are printed in the "acceptance criteria" section at the end of the
pytest run. The recovery runs (criteria 3-5) go through the ``synth`` and
``refine`` commands exactly as a user would run them: 2000 iterations at 256²
against PNG fixtures, single thread.
"""

import json
import math
import os
import time

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from gradcheck import GradCheck, check_mesh, random_hull, random_targets
from meshrefine import imageops
from meshrefine.camera import CANONICAL_AZIMUTHS, canonical_viewset
from meshrefine.cli import main
from meshrefine.errors import DataError
from meshrefine.geometry import load_obj, normalize
from meshrefine.loss import render_targets, total_loss
from meshrefine.optimize import chamfer_distance, normal_consistency, read_metrics
from meshrefine.pipeline import (ingest_targets, prepare_controls, read_manifest,
                                 validate_fixtures)
from meshrefine.raster import rasterize
from meshrefine.remesh import COLLAPSE_FACTOR, SPLIT_FACTOR
from meshrefine.report import moving_average
from meshrefine.synth import sphere_bumps

RECOVERY_ITERATIONS = 2000
RECOVERY_BUDGET_S = 15 * 60


def record(number, name, ok, detail):
    line = f"[{'PASS' if ok else 'FAIL'}] {number}. {name}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    return ok


# -- shared recovery runs ----------------------------------------------------

@pytest.fixture(scope="module")
def case_dir(tmp_path_factory):
    root = tmp_path_factory.mktemp("accept") / "sphere-bumps"
    assert main(["synth", "--case", "sphere-bumps", "--out", str(root), "--seed", "0"]) == 0
    return root


def recovery_run(case_dir, name, weights):
    out = case_dir.parent / name
    cfg = out.parent / f"{name}.json"
    cfg.write_text(json.dumps({"iterations": RECOVERY_ITERATIONS, "weights": weights}))
    t = time.perf_counter()
    code = main(["refine", "--mesh", str(case_dir / "coarse.obj"),
                 "--targets", str(case_dir / "fixtures"), "--config", str(cfg),
                 "--out", str(out), "--threads", "1"])
    elapsed = time.perf_counter() - t
    assert code == 0
    fixtures = read_manifest(case_dir / "fixtures")
    views = fixtures.viewset()
    targets = ingest_targets(fixtures)
    coarse = load_obj(case_dir / "coarse.obj")
    refined = load_obj(out / "refined.obj")
    truth = load_obj(case_dir / "truth.obj")
    return {"elapsed": elapsed, "metrics": read_metrics(out / "metrics.csv"),
            "chamfer0": chamfer_distance(coarse, truth), "chamfer1": chamfer_distance(refined, truth),
            "nc0": normal_consistency(coarse, targets, views),
            "nc1": normal_consistency(refined, targets, views)}


@pytest.fixture(scope="module")
def full_run(case_dir):
    return recovery_run(case_dir, "full", [1.0, 1.0, 1.0])


@pytest.fixture(scope="module")
def ablation_run(case_dir):
    return recovery_run(case_dir, "no_gradient_term", [1.0, 0.0, 1.0])


# -- criteria ----------------------------------------------------------------

def test_1_gradient_correctness():
    views = canonical_viewset(32)
    total = GradCheck(unverified=[])
    t = time.perf_counter()
    for seed in range(20):
        rng = np.random.default_rng(seed)
        mesh = random_hull(rng, 50)
        total.merge(check_mesh(mesh, views, random_targets(mesh, views, rng), seed))
    elapsed = time.perf_counter() - t
    ok = total.passed and elapsed < 120
    record(1, "gradient correctness", ok,
           f"20 meshes, {total.components} components: {total.strict_ok} agree with central FD "
           f"at step 1e-4; {total.refined_ok} more agree after step refinement "
           f"({total.refined_ok - total.refined_no_event} straddle a detected raster event, "
           f"{total.refined_no_event} are steep but event-free); "
           f"{len(total.unverified)} unverified; {elapsed:.0f} s (limit 120 s)")
    assert ok, total.unverified[:10]


def test_2_fixed_point():
    res = 256
    views = canonical_viewset(res)
    coarse, truth = sphere_bumps(0)
    rng = np.random.default_rng(7)
    meshes = [coarse, truth] + [normalize(random_hull(rng, 50))[0] for _ in range(3)]
    worst_loss = worst_grad = 0.0
    for mesh in meshes:
        targets = render_targets(mesh, views)
        rep, grad = total_loss(mesh, views, targets)
        worst_loss = max(worst_loss, rep.total / (res * res))
        # checked on every vertex, which covers the outside-the-band requirement
        worst_grad = max(worst_grad, float(np.abs(grad).max()))
    ok = worst_loss < 1e-6 and worst_grad < 1e-6
    record(2, "fixed point", ok,
           f"{len(meshes)} meshes at {res}²: max total loss per pixel {worst_loss:.3g} (< 1e-6), "
           f"max |vertex gradient| {worst_grad:.3g} over all vertices, band included (< 1e-6)")
    assert ok


def test_3_synthetic_recovery(full_run):
    r = full_run
    ratio = r["chamfer1"] / r["chamfer0"]
    ma = moving_average(r["metrics"]["total"], 100)
    monotone = float(np.mean(np.diff(ma) <= 0))
    n_rows = len(r["metrics"]["total"])
    ok = (n_rows == RECOVERY_ITERATIONS and ratio <= 0.30 and r["nc1"] > r["nc0"]
          and monotone >= 0.90 and r["elapsed"] <= RECOVERY_BUDGET_S)
    record(3, "synthetic recovery", ok,
           f"Chamfer {r['chamfer0']:.4g} -> {r['chamfer1']:.4g} ({100 * ratio:.2f}% of initial, "
           f"limit 30%); normal consistency {r['nc0']:.6f} -> {r['nc1']:.7f}; 100-iter moving "
           f"average non-increasing {100 * monotone:.1f}% (limit 90%); {n_rows} iterations in "
           f"{r['elapsed']:.0f} s on {os.cpu_count()} core(s) (budget {RECOVERY_BUDGET_S} s)")
    assert ok


def test_4_remesh_hygiene(full_run):
    m = full_run["metrics"]
    degenerate = int(m["degenerate_faces"].max())
    duplicate = int(m["duplicate_faces"].max())
    drift = float(np.abs(m["volume_change"]).max())
    lt = float(m["target_length"][-1])
    mean_edge = float(m["mean_edge_length"][-1])
    in_band = COLLAPSE_FACTOR * lt <= mean_edge <= SPLIT_FACTOR * lt
    ok = degenerate == 0 and duplicate == 0 and drift < 0.01 and in_band
    record(4, "remesh hygiene", ok,
           f"max degenerate {degenerate}, max duplicate {duplicate} faces over "
           f"{len(m['iteration'])} iterations; max volume drift per pass {100 * drift:.3f}% "
           f"(< 1%); final mean edge {mean_edge:.4f} in [{COLLAPSE_FACTOR * lt:.4f}, "
           f"{SPLIT_FACTOR * lt:.4f}]")
    assert ok


def test_5_gradient_term_ablation(full_run, ablation_run):
    full, abl = full_run["nc1"], ablation_run["nc1"]
    ok = abl < full
    record(5, "normal-gradient ablation", ok,
           f"end normal consistency without the gradient term {abl:.9f} vs full objective "
           f"{full:.9f} (needs strictly lower; difference {abl - full:+.2e}); Chamfer "
           f"{ablation_run['chamfer1']:.4g} vs {full_run['chamfer1']:.4g}")
    assert ok


def test_6_protocol_conformance(tmp_path):
    mesh = normalize(sphere_bumps(0)[1])[0]
    views = canonical_viewset(256)
    bundle = prepare_controls(mesh, views, tmp_path / "controls")
    man = bundle.manifest
    six = [v["azimuth"] for v in man["views"]] == list(CANONICAL_AZIMUTHS) and \
        len(bundle.normals) == 6
    raw = rasterize(mesh, views[0]).normal
    got = imageops.decode_normal_png(tmp_path / "controls" / bundle.normals[0])
    blurred = np.abs(got - imageops.gaussian_blur(raw, 7, imageops.DEFAULT_BLUR_SIGMA)).max() < 1e-4
    kernel7 = man["blur"]["kernel_size"] == 7 and imageops.DEFAULT_BLUR_KERNEL == 7 and blurred

    from meshrefine.pipeline import write_fixtures
    fs = write_fixtures(mesh, canonical_viewset(32), tmp_path / "fx")
    rejected = []
    for tweak in ("third", "five", "shuffled"):
        views_copy = [dict(v) for v in fs.views]
        if tweak == "third":
            views_copy[2]["azimuth"] = math.pi / 3
        elif tweak == "five":
            views_copy = views_copy[:5]
        else:
            views_copy[0], views_copy[1] = views_copy[1], views_copy[0]
        fs.views = views_copy
        fs.write_manifest()
        try:
            validate_fixtures(read_manifest(tmp_path / "fx"))
            rejected.append(False)
        except DataError:
            rejected.append(True)
    ok = six and kernel7 and all(rejected)
    record(6, "protocol conformance", ok,
           f"six canonical azimuths {six}; default blur kernel 7 applied {kernel7}; "
           f"non-canonical manifests rejected {sum(rejected)}/{len(rejected)}")
    assert ok


def test_7_determinism(case_dir, tmp_path):
    cfg = tmp_path / "short.json"
    cfg.write_text(json.dumps({"iterations": 25, "seed": 3}))
    outputs = []
    for name, threads in (("a", 1), ("b", 1), ("c", 2), ("d", 4)):
        out = tmp_path / name
        assert main(["refine", "--mesh", str(case_dir / "coarse.obj"),
                     "--targets", str(case_dir / "fixtures"), "--config", str(cfg),
                     "--out", str(out), "--threads", str(threads), "--no-figures"]) == 0
        outputs.append(((out / "refined.obj").read_bytes(), (out / "metrics.csv").read_bytes()))
    same = all(o == outputs[0] for o in outputs)
    ok = same and len(outputs[0][0]) > 0
    record(7, "determinism", ok,
           "refined.obj and metrics.csv byte-identical across 4 runs of 25 iterations at 256² "
           f"(threads 1, 1, 2, 4): {same}")
    assert ok
