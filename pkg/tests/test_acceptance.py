"""Acceptance suite: one test per criterion, each printing a pass/fail line.

Run on its own with ``pytest tests/test_acceptance.py -v``; the summary
lines appear in the "acceptance criteria" section of the report.
"""

from __future__ import annotations

import dataclasses
import hashlib
import shutil
import time
from pathlib import Path

import numpy as np
import pytest

from affordance import evaluation as ev
from affordance import grid_predictor as gp
from affordance import midlevel as ml
from affordance.cli import main as cli_main
from affordance.geometry import ManhattanFrame
from affordance.labeler import AffordanceMap, Label, build_filter_bank, convolve_filter, generate_labels
from affordance.synthetic import agreement_counts, load_scene, oracle_affordances, render, scene_suite
from affordance.voxels import VoxelGrid
from generators import random_cells
from oracles import (brute_force_ap, brute_force_filter, brute_force_jaccard_threshold,
                     brute_force_pr)

pytestmark = pytest.mark.slow

SCENES = Path(__file__).parent.parent / "testdata" / "scenes"


# 1 ---------------------------------------------------------------------------

def test_convolution_matches_brute_force(acceptance_report):
    bank = build_filter_bank()
    need = np.max([f.extent() for f in bank], axis=0)
    rng = np.random.default_rng(2024)
    t0 = time.perf_counter()
    mismatches = 0
    for _ in range(200):
        cells = random_cells(rng, [int(rng.integers(n, 33)) for n in need])
        grid = VoxelGrid(cells, 0.1, np.zeros(3), ManhattanFrame.identity())
        for pose in bank:
            per_rot = []
            for k in range(4):
                ref = brute_force_filter(cells, pose, k)
                single = dataclasses.replace(pose.rotated(k), orientation_sensitive=False)
                got = convolve_filter(grid, single)
                mismatches += not (np.array_equal(got[0], ref[0]) and np.array_equal(got[1], ref[1]))
                per_rot.append(ref)
            ks = 4 if pose.orientation_sensitive else 1
            resp, unk = convolve_filter(grid, pose)
            mismatches += not np.array_equal(resp, np.max([r for r, _ in per_rot[:ks]], axis=0))
            mismatches += not np.array_equal(unk, np.max([u for _, u in per_rot[:ks]], axis=0))
    elapsed = time.perf_counter() - t0
    ok = mismatches == 0 and elapsed < 60
    acceptance_report(1, "voxel convolution equals brute force", ok,
                      f"{mismatches} mismatching responses, {elapsed:.1f} s (limit 60 s)")
    assert ok


# 2 ---------------------------------------------------------------------------

def test_label_fidelity(acceptance_report):
    paths = sorted(SCENES.glob("scene_*.txt"))
    assert len(paths) == 20
    bank = build_filter_bank()
    t0 = time.perf_counter()
    compared = {f.name: 0 for f in bank}
    agree = dict(compared)
    for p in paths:
        spec = load_scene(p)
        maps, _ = generate_labels(render(spec).depth)
        oracle = oracle_affordances(spec, bank, stride=4)
        for name, amap in maps.items():
            n, k = agreement_counts(amap, oracle)
            compared[name] += n
            agree[name] += k
    elapsed = time.perf_counter() - t0
    rates = {a: agree[a] / compared[a] for a in compared}
    ok = min(rates.values()) >= 0.99 and elapsed < 300
    detail = ", ".join(f"{a} {r:.4f}" for a, r in rates.items())
    acceptance_report(2, "label fidelity vs analytic oracle", ok,
                      f"{detail}; {elapsed:.0f} s (limit 300 s)")
    assert ok


# 3 ---------------------------------------------------------------------------

def test_gradient_finite_differences(acceptance_report):
    rng = np.random.default_rng(7)
    fc = gp.FeatureConfig(m=16, n=16)
    name = "standing"
    worst = 0.0
    for _ in range(100):
        image = rng.random((64, 64, 3))
        feats = gp.cell_features(image, fc)
        target = rng.choice([-1, 0, 1], size=(fc.m, fc.n), p=[0.2, 0.4, 0.4]).astype(np.int8)
        model = gp.GridModel.zeros([name], fc)
        model.mean = feats.reshape(-1, fc.dim()).mean(axis=0).astype(float)
        model.scale = feats.reshape(-1, fc.dim()).std(axis=0).astype(float) + 0.5
        model.weights[name] = rng.normal(0, 0.05, fc.dim())
        model.bias[name] = float(rng.normal())
        _, gw, gb = gp.loss_and_grad(model, feats, target, name)
        theta = np.r_[model.weights[name], model.bias[name]]

        def loss_at(th):
            m = model.copy()
            m.weights[name], m.bias[name] = th[:-1], float(th[-1])
            return gp.loss_and_grad(m, feats, target, name)[0]

        h = 1e-4
        fd = np.empty_like(theta)
        for i in range(len(theta)):
            e = np.zeros_like(theta)
            e[i] = h
            fd[i] = (loss_at(theta + e) - loss_at(theta - e)) / (2 * h)
        g = np.r_[gw, gb]
        rel = np.linalg.norm(g - fd) / max(np.linalg.norm(g), np.linalg.norm(fd), 1e-12)
        worst = max(worst, rel)
    ok = worst < 1e-4
    acceptance_report(3, "loss gradient vs central differences", ok,
                      f"max relative error {worst:.2e} over 100 triples (limit 1e-4)")
    assert ok


# 4 ---------------------------------------------------------------------------

def _dataset(n, seed):
    data = []
    for spec in scene_suite(n, seed):
        r = render(spec)
        maps, _ = generate_labels(r.depth)
        data.append((r.rgb, maps))
    return data


def test_learnability(acceptance_report):
    t0 = time.perf_counter()
    train, test = _dataset(200, 100), _dataset(50, 200)
    t_data = time.perf_counter() - t0

    names = ["standing", "sitting_upright"]
    model = gp.train(gp.GridModel.zeros(names, gp.SYNTH_FEATURES), [im for im, _ in train],
                     [maps for _, maps in train], gp.TrainConfig())
    grid_ap = {}
    for a in names:
        preds = [gp.predict(model, im, a).scores for im, _ in test]
        grid_ap[a] = ev.average_precision(preds, [maps[a] for _, maps in test])
    t_grid = time.perf_counter() - t0 - t_data

    bank = ml.train_elements([im for im, _ in train], [maps["standing"] for _, maps in train],
                             "standing", ml.SYNTH_MIDLEVEL)
    preds = [ml.infer(im, bank).scores for im, _ in test]
    mid_ap = ev.average_precision(preds, [maps["standing"] for _, maps in test])
    elapsed = time.perf_counter() - t0

    ok = (grid_ap["standing"] >= 0.90 and grid_ap["sitting_upright"] >= 0.75 and mid_ap >= 0.80
          and elapsed < 900)
    acceptance_report(4, "learnability on held-out synthetic scenes", ok,
                      f"grid standing {grid_ap['standing']:.3f} (>= 0.90), "
                      f"grid sitting {grid_ap['sitting_upright']:.3f} (>= 0.75), "
                      f"mid-level standing {mid_ap:.3f} (>= 0.80); "
                      f"{elapsed:.0f} s (data {t_data:.0f} s, limit 900 s)")
    assert ok


# 5 ---------------------------------------------------------------------------

def _random_instance(rng):
    levels = int(rng.integers(2, 65))
    scores = rng.integers(0, levels, size=(8, 8)) / (levels - 1)
    labels = rng.choice([Label.UNKNOWN, Label.NOT, Label.SUPPORTS], size=(8, 8),
                        p=rng.dirichlet(np.ones(3))).astype(np.int8)
    labels.flat[int(rng.integers(64))] = Label.SUPPORTS
    return scores, AffordanceMap(labels, "standing")


def test_evaluation_matches_brute_force(acceptance_report):
    rng = np.random.default_rng(99)
    worst = 0.0
    threshold_mismatch = 0
    for _ in range(1000):
        scores, truth = _random_instance(rng)
        known = truth.labels != Label.UNKNOWN
        s, y = scores[known], truth.labels[known] == Label.SUPPORTS
        curve = ev.pr_curve(scores, truth)
        thr, rec, prec = brute_force_pr(s, y)
        if len(thr) != len(curve.thresholds):
            worst = np.inf
            continue
        worst = max(worst, abs(curve.ap - brute_force_ap(s, y)),
                    np.max(np.abs(curve.thresholds - thr)), np.max(np.abs(curve.recall - rec)),
                    np.max(np.abs(curve.precision - prec)))
        t_ref, _ = brute_force_jaccard_threshold(s, y)
        threshold_mismatch += abs(ev.select_threshold_jaccard(scores, truth) - t_ref) > 1e-9
    ok = worst <= 1e-9 and threshold_mismatch == 0
    acceptance_report(5, "PR curve, AP and Jaccard threshold vs brute force", ok,
                      f"max deviation {worst:.1e} (limit 1e-9), "
                      f"{threshold_mismatch} threshold mismatches in 1000 instances")
    assert ok


# 6 ---------------------------------------------------------------------------

def _digest(directory: Path):
    return {str(p.relative_to(directory)): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(directory.rglob("*")) if p.is_file()}


def _cli_pipeline(root: Path):
    """Every command once, each writing to its own directory under ``root``."""
    s, lg, gr, mid, pr, evd = (root / d for d in ("synth", "labelgen", "grid", "mid", "pred", "eval"))
    codes = {
        "synth": cli_main(["synth", "--out-dir", str(s), "--n-scenes", "4", "--seed", "3",
                           "--oracle-stride", "8"]),
        "labelgen": cli_main(["labelgen", "--depth-dir", str(s / "depth"), "--out-dir", str(lg)]),
        "train-grid": cli_main(["train-grid", "--image-dir", str(s / "rgb"), "--label-dir",
                                str(lg), "--out-dir", str(gr), "--grid-m", "16", "--grid-n", "16",
                                "--epochs", "3", "--seed", "5"]),
        "train-midlevel": cli_main(["train-midlevel", "--image-dir", str(s / "rgb"), "--label-dir",
                                    str(lg), "--out-dir", str(mid), "--affordances", "standing",
                                    "--cell", "4", "--k", "5", "--max-elements", "4",
                                    "--samples-per-image", "20", "--negatives-per-image", "40",
                                    "--colour-weight", "2", "--rounds", "1", "--seed", "5"]),
        "predict": cli_main(["predict", "--image-dir", str(s / "rgb"), "--model",
                             str(gr / "grid.model"), str(mid / "midlevel_standing.bank"),
                             "--out-dir", str(pr)]),
        "eval": cli_main(["eval", "--pred-dir", str(pr), "--label-dir", str(lg), "--out-dir",
                          str(evd), "--svg"]),
    }
    digests = {name: _digest(d) for name, d in zip(
        ["synth", "labelgen", "train-grid", "train-midlevel", "predict", "eval"],
        [s, lg, gr, mid, pr, evd])}
    return codes, digests


def test_cli_determinism(acceptance_report, tmp_path):
    root = tmp_path / "run"
    codes1, first = _cli_pipeline(root)
    shutil.rmtree(root)
    codes2, second = _cli_pipeline(root)
    differing = [c for c in first if first[c] != second[c] or not first[c]]
    failed = [c for c in codes1 if codes1[c] != 0 or codes2[c] != 0]
    ok = not differing and not failed
    n_files = sum(len(v) for v in first.values())
    acceptance_report(6, "CLI outputs byte-identical across runs", ok,
                      f"{len(first)} commands, {n_files} files; differing: {differing or 'none'}; "
                      f"non-zero exits: {failed or 'none'}")
    assert ok


# 7 ---------------------------------------------------------------------------

def test_geometry_invariants(acceptance_report):
    import test_geometry as tg
    import test_voxels as tv

    checks = {
        "frame orthonormality": tg.test_frame_orthonormal,
        "estimated frame orthonormality": tg.test_estimated_frame_orthonormal,
        "backproject/reproject round trip": tg.test_backproject_reproject_round_trip,
        "fill_below idempotence": tv.test_fill_below_idempotent,
        "fill_below monotonicity": tv.test_fill_below_monotone,
    }
    failures = []
    for name, check in checks.items():
        try:
            check()
        except Exception as exc:  # report every property before failing
            failures.append(f"{name}: {type(exc).__name__}")
    ok = not failures
    acceptance_report(7, "geometry invariants (property tests)", ok,
                      "; ".join(failures) if failures else ", ".join(checks))
    assert ok
