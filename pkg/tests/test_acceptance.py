"""Acceptance criteria 1-9, one PASS/FAIL line each.

Run with ``pytest tests/test_acceptance.py -v -s`` to see the verdict lines
(they are also printed when output capture is on, via ``capsys.disabled``).
Tolerances are pinned constants below; none is adjusted to fit results.
"""

import itertools
import subprocess
import sys
import time

import numpy as np
import pytest

from seldgrid.features import AudioBuffer, feature_pipeline, intensity_doa, intensity_vectors, stft
from seldgrid.gradcheck import fd_grad, fd_grad_local, max_relative_error, random_instance
from seldgrid.grid_fit import FitConfig, ablate, fit_logits, make_fixture
from seldgrid.label_codec import ClassMap, PredictionGrid, encode_frames, make_event
from seldgrid.losses import (
    aiur,
    class_mse,
    converging_loss,
    grad_logits,
    grad_total,
    softmax,
    transform_targets,
)
from seldgrid.metrics import compute_metrics, distance_matrix, match_events, seld_score
from seldgrid.scene_sim import make_rng, random_direction, render_foa
from seldgrid.sphere_grid import angular_distance_deg, build_grid, directions_to_cells

SELD_TOL = 1e-3
GRAD_TOL = 1e-5
GRAD_TRIALS = 100
GRAD_BUDGET_S = 30.0
FULL_FRAME_TRIALS = 10
ROUNDTRIP_BOUNDS = {15: 10.7, 10: 7.2, 20: 14.3}
ROUNDTRIP_SAMPLES = 1_000_000
ROUNDTRIP_BUDGET_S = 20.0
MATCH_SEGMENTS = 1000
FIT_BUDGET_S = 60.0
ABLATION_SEEDS = range(5)
DOA_TOL_DEG = 1.0


def verdict(capsys, number, ok, detail):
    with capsys.disabled():
        print(f"\ncriterion {number}: {'PASS' if ok else 'FAIL'} ({detail})")
    assert ok, detail


def test_criterion_1_seld_score_fixtures(capsys):
    a = seld_score(0.410, 0.386, 22.5, 0.595)
    b = seld_score(0.491, 0.366, 19.2, 0.521)
    ok = abs(a - 0.389) <= SELD_TOL and abs(b - 0.428) <= SELD_TOL
    verdict(capsys, 1, ok, f"{a:.5f} vs 0.389, {b:.5f} vs 0.428, tol {SELD_TOL}")


def test_criterion_2_gradient_oracle(capsys):
    spec, classes = build_grid(15), ClassMap.with_count(13)
    rng = np.random.default_rng(0)
    start = time.perf_counter()
    worst = 0.0
    for trial in range(GRAD_TRIALS):
        y, z = random_instance(rng, spec, classes)
        p = softmax(z)
        pairs = [(grad_total(y, p), fd_grad_local(y, p)), (grad_logits(y, z), fd_grad_local(y, z, logits=True))]
        if trial < FULL_FRAME_TRIALS:
            # the whole-frame oracle re-runs the loss kernels on every perturbed grid
            pairs += [(pairs[0][0], fd_grad(y, p)), (pairs[1][0], fd_grad(y, z, logits=True))]
        worst = max([worst] + [max_relative_error(a, n) for a, n in pairs])
    elapsed = time.perf_counter() - start
    ok = worst < GRAD_TOL and elapsed < GRAD_BUDGET_S
    verdict(capsys, 2, ok, f"max rel error {worst:.2e} < {GRAD_TOL}, {GRAD_TRIALS} instances "
                           f"({FULL_FRAME_TRIALS} also whole-frame) in {elapsed:.1f}s")


def test_criterion_3_loss_fixtures(capsys):
    spec, classes = build_grid(15), ClassMap.with_count(13)
    y, _ = encode_frames([make_event(0, 2, 0, 0, 0)], 1, spec, classes)
    target = 6 * 24 + 12
    tt = transform_targets(y)
    got = {
        "y_prime_target": tt.y_prime[0, target],
        "y_at_target": tt.y_at[0, target],
        "y_at_adjacent": tt.y_at[0, target + 1],
        "converging_perfect": converging_loss(y, y.data),
        "class_mse_perfect": class_mse(y, y.data),
        "aiur_perfect": aiur(y, y.data),
    }
    want = dict(y_prime_target=-287, y_at_target=-286, y_at_adjacent=-34,
                converging_perfect=-286, class_mse_perfect=0, aiur_perfect=0)
    ok = all(got[k] == want[k] for k in want)
    verdict(capsys, 3, ok, ", ".join(f"{k}={got[k]:g}" for k in want))


def test_criterion_4_grid_roundtrip(capsys):
    rng = np.random.default_rng(4)
    start = time.perf_counter()
    worst = {}
    for delta, bound in ROUNDTRIP_BOUNDS.items():
        spec = build_grid(delta)
        az = rng.uniform(-180.0, 180.0, ROUNDTRIP_SAMPLES)
        el = np.degrees(np.arcsin(rng.uniform(-1.0, 1.0, ROUNDTRIP_SAMPLES)))
        rows, cols = directions_to_cells(spec, az, el)
        c_az, c_el = spec.centers
        g = rows * spec.cols + cols
        worst[delta] = float(np.max(angular_distance_deg(az, el, c_az[g], c_el[g])))
    elapsed = time.perf_counter() - start
    ok = all(worst[d] <= b for d, b in ROUNDTRIP_BOUNDS.items()) and elapsed < ROUNDTRIP_BUDGET_S
    detail = ", ".join(f"delta {d}: {worst[d]:.3f} <= {b}" for d, b in ROUNDTRIP_BOUNDS.items())
    verdict(capsys, 4, ok, f"{detail}; {ROUNDTRIP_SAMPLES} samples each in {elapsed:.1f}s")


def _exhaustive(cost):
    n_r, n_p = cost.shape
    if n_r == 0 or n_p == 0:
        return 0.0
    if n_r <= n_p:
        return min(sum(cost[i, perm[i]] for i in range(n_r)) for perm in itertools.permutations(range(n_p), n_r))
    return min(sum(cost[perm[j], j] for j in range(n_p)) for perm in itertools.permutations(range(n_r), n_p))


def test_criterion_5_metrics_oracle(capsys):
    rng = make_rng(5)
    mismatches = 0
    for seg in range(MATCH_SEGMENTS):
        ref, pred = [], []
        for cls in range(int(rng.integers(1, 4))):
            for bucket, n in ((ref, rng.integers(0, 5)), (pred, rng.integers(0, 5))):
                for k in range(int(n)):
                    d = random_direction(rng)
                    bucket.append(make_event(seg * 10 + int(rng.integers(0, 10)), cls, k, d.azimuth_deg, d.elevation_deg))
        res = match_events(ref, pred)
        for grp in res.groups:
            r = [ref[i] for i in range(len(ref)) if ref[i].class_id == grp.class_id]
            p = [pred[j] for j in range(len(pred)) if pred[j].class_id == grp.class_id]
            oracle = _exhaustive(distance_matrix(r, p)) if r and p else 0.0
            got = sum(d for *_, d in grp.pairs)
            if abs(got - oracle) > 1e-9 or len(grp.pairs) != min(len(r), len(p)):
                mismatches += 1
    scene = [make_event(t, c, 0, 40.0 * c - 100.0, 10.0 * (t % 4)) for t in range(30) for c in range(3)]
    r = compute_metrics(scene, list(scene))
    perfect = (r.er20, r.f20, r.le_cd_deg, r.lr_cd, r.seld_score)
    ok = mismatches == 0 and perfect == (0.0, 1.0, 0.0, 1.0, 0.0)
    verdict(capsys, 5, ok, f"{mismatches} mismatches over {MATCH_SEGMENTS} segments; perfect = {perfect}")


def _fit_run(n_sources):
    target, events = make_fixture(n_sources, seed=0)
    start = time.perf_counter()
    trace = fit_logits(target, FitConfig(), events)
    return trace, time.perf_counter() - start


def test_criterion_6_convergence(capsys):
    single, t1 = _fit_run(1)
    overlap, t3 = _fit_run(3)
    s1 = next((s for s in single.snapshots if s.metrics.f20 == 1.0), None)
    ok1 = s1 is not None and s1.step <= 500 and s1.metrics.le_cd_deg <= ROUNDTRIP_BOUNDS[15]
    s3 = overlap.steps_to_f(0.9)
    ok3 = s3 <= 2000
    ok = ok1 and ok3 and t1 < FIT_BUDGET_S and t3 < FIT_BUDGET_S
    m1, m3 = single.last.metrics, overlap.last.metrics
    detail = (f"single: first F20=1 step {s1.step if s1 else 'never'}, final F20 {m1.f20:.3f} "
              f"(TP {m1.tp}, FP {m1.fp}), {t1:.1f}s; "
              f"3-same-class: steps to F20>=0.9 {s3}, final F20 {m3.f20:.3f} (TP {m3.tp}, FP {m3.fp}), {t3:.1f}s")
    verdict(capsys, 6, ok, detail)


def test_criterion_7_ablation_trend(capsys):
    rows = []
    for seed in ABLATION_SEEDS:
        target, events = make_fixture(3, seed=seed)
        traces = ablate(target, FitConfig(), events)
        rows.append(tuple(traces[w].steps_to_f(0.9) for w in ((1, 1, 1), (1, 1, 0), (1, 0, 0))))
    bad_first = sum(1 for full, two, one in rows if not full <= two)
    bad_second = sum(1 for full, two, one in rows if not two <= one)
    ok = bad_first <= 1 and bad_second <= 1
    table = "; ".join(f"seed {s}: {r}" for s, r in zip(ABLATION_SEEDS, rows))
    verdict(capsys, 7, ok, f"steps (111, 110, 100): {table}; violations {bad_first} and {bad_second}, at most 1 each allowed")


def test_criterion_8_feature_front_end(capsys):
    rng = make_rng(8)
    errors = []
    for k in range(100):
        d = random_direction(rng)
        events = [make_event(t, 0, 0, d.azimuth_deg, d.elevation_deg) for t in range(3)]
        iv = intensity_vectors(stft(render_foa(events, "noise", 0.3, seed=k)))
        az, el = intensity_doa(iv.sum(axis=0, keepdims=True))
        errors.append(angular_distance_deg(az[0], el[0], d.azimuth_deg, d.elevation_deg))
    shape = feature_pipeline(AudioBuffer(24000, np.zeros((4, 5 * 24000)))).data.shape
    ok = float(np.mean(errors)) < DOA_TOL_DEG and shape == (250, 7, 64)
    verdict(capsys, 8, ok, f"mean DOA error {np.mean(errors):.2e} deg over 100 directions; 5 s -> {shape}")


def _cli(tmp, *args):
    subprocess.run([sys.executable, "-m", "seldgrid.cli", *map(str, args)], cwd=tmp, check=True,
                   capture_output=True)


def test_criterion_9_determinism(capsys, tmp_path):
    cfg = tmp_path / "run.toml"
    cfg.write_text("seed = 11\n[scene]\nsame_class_overlap = true\n[corruption]\nangular_jitter_deg = 4.0\n"
                   "deletion_p = 0.1\ninsertion_rate = 0.05\ntemperature = 0.3\n")
    outputs = []
    for run in ("a", "b"):
        d = tmp_path / run
        d.mkdir()
        _cli(d, "simulate", "--config", cfg, "--out", "ref.csv", "--pred", "pred.bin", "--header", "scene.json")
        _cli(d, "decode", "--pred", "pred.bin", "--out", "dec.csv", "--json", "dec.json")
        _cli(d, "metrics", "--config", cfg, "--ref", "ref.csv", "--pred", "dec.csv", "--out", "metrics.json",
             "--breakdown", "segments.csv")
        _cli(d, "encode", "--config", cfg, "--meta", "ref.csv", "--frames", 50, "--out", "y.bin", "--report", "col.json")
        _cli(d, "loss", "--config", cfg, "--target", "y.bin", "--pred", "pred.bin", "--out", "loss.json")
        _cli(d, "optimize", "--config", cfg, "--fixture", 2, "--steps", 50, "--out", "trace.json", "--csv", "trace.csv")
        _cli(d, "grad-check", "--config", cfg, "--grid", 30, "--classes", 4, "--trials", 2, "--out", "grad.json")
        outputs.append({p.name: p.read_bytes() for p in sorted(d.iterdir())})
    differing = [name for name in outputs[0] if outputs[0][name] != outputs[1].get(name)]
    ok = not differing and set(outputs[0]) == set(outputs[1])
    verdict(capsys, 9, ok, f"{len(outputs[0])} artifacts compared byte for byte; differing: {differing or 'none'}")
