"""Acceptance criteria, one test each; every test records a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -s`` to see the lines inline; they
are also repeated in the terminal summary.
"""

import math
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import make_frame, random_config
from rangeview.analyze import retention_report
from rangeview.cli import run
from rangeview.ingest import (
    SynthSpec,
    data_path,
    generate_synthetic_scan,
    load_label_map,
    load_synth_spec,
    random_synth_spec,
    write_annotations,
    write_point_cloud,
)
from rangeview.model import ClassWeights, SelectionPolicy, SensorConfig, Variant, thing_mask, validate_frame
from rangeview.project import pixel_from_angles, project_cloud, spherical_coords, spherical_to_cartesian, unfold_rows
from rangeview.raster import rasterize, rasterize_oracle
from rangeview.score import GAUSS_NORM, centerness, centerness_scores, instance_groups, selection_keys

N_FRAMES = 100
MIN_POINTS, MAX_POINTS = 1_000, 150_000

DEPTH = SelectionPolicy()
CAP = SelectionPolicy(Variant.CAP)


def _frame(seed, n_points, rings=None):
    cloud, ann, rows = generate_synthetic_scan(random_synth_spec(seed, n_points, rings=rings))
    return validate_frame(cloud, ann)


@pytest.fixture(scope="module")
def frames():
    """Random frames with log-uniform sizes; the two extremes are always included."""
    rng = np.random.default_rng(2024)
    # the generator lands within a few percent of the requested size
    lo, hi = int(MIN_POINTS * 1.05), int(MAX_POINTS * 0.98)
    sizes = np.exp(rng.uniform(math.log(lo), math.log(hi), N_FRAMES)).astype(int)
    sizes[0], sizes[1] = lo, hi
    out = []
    for seed, n in enumerate(sizes):
        frame = _frame(1000 + seed, int(n))
        # small rasters so that many-to-one conflicts are common
        out.append((frame, random_config(rng, int(rng.choice([16, 32, 64])))))
    return out


def _instance_pixels(img, frame, things):
    inst = thing_mask(frame.ann, things)
    w = img.winner
    hit = w >= 0
    return set(np.flatnonzero(hit & inst[np.where(hit, w, 0)]).tolist())


# ---------------------------------------------------------------------------


def test_criterion_1_retention_bound(acceptance, things):
    spec = load_synth_spec(data_path("occluder-scene.cfg"))
    cloud, ann, _ = generate_synthetic_scan(spec)
    frame = validate_frame(cloud, ann)
    cfg = SensorConfig(width=512, height=64)
    t0 = time.perf_counter()
    img = rasterize(project_cloud(frame.cloud, cfg), selection_keys(frame, DEPTH), frame)
    rep = retention_report(frame, img, things)
    elapsed = time.perf_counter() - t0
    ok = len(frame) >= 115_000 and rep.retained <= 32_768 and rep.retention_ratio < 0.30 and elapsed < 1.0
    acceptance(1, ok, f"{len(frame)} points, retained {rep.retained}, ratio {rep.retention_ratio:.4f}, {elapsed * 1e3:.0f} ms")


def test_criterion_2_oracle_equivalence(acceptance, frames, things, sample_weights):
    policies = (DEPTH, CAP, SelectionPolicy(Variant.CWAP, class_weights=sample_weights))
    mismatches = 0
    t0 = time.perf_counter()
    for frame, cfg in frames:
        proj = project_cloud(frame.cloud, cfg)
        for pol in policies:
            keys = selection_keys(frame, pol, things)
            mismatches += not rasterize(proj, keys, frame).equals(rasterize_oracle(proj, keys, frame))
    elapsed = time.perf_counter() - t0
    sizes = [len(f) for f, _ in frames]
    in_range = MIN_POINTS <= min(sizes) and max(sizes) <= MAX_POINTS
    acceptance(2, mismatches == 0 and elapsed < 60 and len(frames) >= 100 and in_range,
               f"{len(frames)} frames ({min(sizes)}-{max(sizes)} points) x 3 policies, "
               f"{mismatches} mismatches, {elapsed:.1f} s")


def test_criterion_3_depth_correctness(acceptance, frames):
    bad = checked = 0
    for frame, cfg in frames:
        proj = project_cloud(frame.cloud, cfg)
        img = rasterize(proj, selection_keys(frame, DEPTH), frame)
        # brute force: minimum candidate range per pixel, accumulated point by point
        best = {}
        for p, r in zip(proj.pixel[proj.valid].tolist(), proj.range[proj.valid].tolist()):
            if p not in best or r < best[p]:
                best[p] = r
        flat = img.range.ravel()
        occupied = set(np.flatnonzero(img.mask).tolist())
        bad += occupied != set(best)
        for p, r in best.items():
            checked += 1
            bad += flat[p] != r
    acceptance(3, bad == 0, f"{checked} occupied pixels checked, {bad} disagreements")


def test_criterion_4_cap_instance_monotonicity(acceptance, frames, things, occluder_scene):
    tested = violations = 0
    for frame, cfg in frames:
        if not thing_mask(frame.ann, things).any():
            continue
        tested += 1
        proj = project_cloud(frame.cloud, cfg)
        d = rasterize(proj, selection_keys(frame, DEPTH), frame)
        c = rasterize(proj, selection_keys(frame, CAP, things), frame)
        violations += not _instance_pixels(d, frame, things) <= _instance_pixels(c, frame, things)

    frame, _, _ = occluder_scene
    cfg = SensorConfig(width=512, height=64)
    proj = project_cloud(frame.cloud, cfg)
    d = rasterize(proj, selection_keys(frame, DEPTH), frame)
    c = rasterize(proj, selection_keys(frame, CAP, things), frame)
    nd = retention_report(frame, d, things).instance_winner_pixels
    nc = retention_report(frame, c, things).instance_winner_pixels
    subset = _instance_pixels(d, frame, things) <= _instance_pixels(c, frame, things)
    acceptance(4, violations == 0 and tested > 0 and subset and nc > nd,
               f"containment held on {tested - violations}/{tested} frames; occlusion scene depth {nd} < cap {nc}")


def test_criterion_5_cwap_semantics(acceptance, frames, things, sample_weights):
    rng = np.random.default_rng(5)
    pixel_checks = failures = zero_mismatch = 0
    for frame, cfg in frames:
        proj = project_cloud(frame.cloud, cfg)
        present = np.unique(frame.ann.semantic)
        neg = int(rng.choice(present))
        for weights, negative in ((ClassWeights({neg: -1.0}), {neg}), (sample_weights, {3, 4, 7})):
            keys = selection_keys(frame, SelectionPolicy(Variant.CWAP, class_weights=weights), things)
            img = rasterize(proj, keys, frame)
            is_neg = np.isin(frame.ann.semantic, list(negative)) & proj.valid
            pixels = np.unique(proj.pixel[is_neg])
            pixel_checks += len(pixels)
            winners = img.winner.ravel()[pixels]
            failures += int(np.count_nonzero(~np.isin(frame.ann.semantic[winners], list(negative))))
        zero = rasterize(proj, selection_keys(frame, SelectionPolicy(Variant.CWAP, class_weights=ClassWeights({}, 0.0))), frame)
        depth = rasterize(proj, selection_keys(frame, DEPTH), frame)
        zero_mismatch += not np.array_equal(zero.winner, depth.winner)
    acceptance(5, failures == 0 and zero_mismatch == 0,
               f"{pixel_checks} pixels with a -1 class, {failures} not won by it; "
               f"zero weights differ from depth on {zero_mismatch} frames")


def test_criterion_6_scoring_math(acceptance, things):
    rng = np.random.default_rng(6)
    mu = rng.normal(size=3) * 10
    at_center = centerness(mu, mu)
    rel = abs(at_center - (2 * math.pi) ** -1.5) / (2 * math.pi) ** -1.5

    instances = failures = 0
    while instances < 1000:
        k = int(rng.integers(1, 25))
        sizes = rng.integers(1, 200, size=k)
        xyz, sem, ins = [], [], []
        for i, n in enumerate(sizes):
            center = rng.uniform(-40, 40, 3)
            xyz.append(center + rng.normal(scale=rng.uniform(0.1, 3.0), size=(n, 3)))
            sem += [int(rng.integers(1, 9))] * int(n)
            ins += [i + 1] * int(n)
        xyz.append(rng.uniform(-40, 40, (300, 3)))
        sem += [9] * 300
        ins += [0] * 300
        frame = make_frame(np.concatenate(xyz), np.array(sem), np.array(ins))
        s = centerness_scores(frame, things)
        groups, keys = instance_groups(frame, things)
        failures += int(np.any(s.normalized[groups < 0] != 0))
        for g in range(len(keys)):
            m = np.flatnonzero(groups == g)
            pts = frame.cloud.xyz[m]
            c = (pts.min(0) + pts.max(0)) / 2
            dist = np.linalg.norm(pts - c, axis=1)
            v = s.normalized[m]
            ok = np.all((v > 0) & (v <= 1)) and dist[np.argmax(v)] == dist.min()
            failures += not ok
            instances += 1
    acceptance(6, rel < 1e-12 and failures == 0,
               f"f(mu, mu) relative error {rel:.1e}; {instances} instances, {failures} failures; "
               f"GAUSS_NORM {GAUSS_NORM:.16f}")


def test_criterion_7_projection_math(acceptance):
    rng = np.random.default_rng(7)
    pts = rng.normal(size=(1_000_000, 3)) * np.exp(rng.uniform(-3, 5, (1_000_000, 1)))
    r, theta, phi = spherical_coords(pts)
    back = spherical_to_cartesian(r, theta, phi)
    round_trip = float(np.max(np.linalg.norm(back - pts, axis=1) / r))

    boundary_ok = True
    for H, up, down in ((64, 3.0, -25.0), (32, 10.0, -30.0), (128, 15.0, -15.0), (16, 2.0, 0.5)):
        cfg = SensorConfig(width=1024, height=H, fov_up=up, fov_down=down)
        _, row, _ = pixel_from_angles([0.0, 0.0], [math.radians(up), math.radians(down)], cfg)
        boundary_ok &= row.tolist() == [0, H - 1]

    unfold_failures = 0
    for i in range(50):
        rings = int(rng.integers(1, 129))
        steps = int(rng.integers(16, max(17, 150_000 // rings)))
        objs = random_synth_spec(500 + i, 1000).objects
        spec = SynthSpec(rings=rings, azimuth_steps=steps, objects=objs, seed=i,
                         noise_points=int(rng.integers(0, 200)), azimuth_jitter=float(rng.uniform(0, 0.45)))
        cloud, _, rows = generate_synthetic_scan(spec)
        unfold_failures += not np.array_equal(unfold_rows(cloud, SensorConfig(height=rings)), rows)
    acceptance(7, round_trip < 1e-9 and boundary_ok and unfold_failures == 0,
               f"round trip max relative error {round_trip:.1e} on 1e6 points; boundary rows "
               f"{'exact' if boundary_ok else 'WRONG'}; unfolding failed on {unfold_failures}/50 configurations")


def test_criterion_8_determinism_and_throughput(acceptance, tmp_path, monkeypatch):
    cloud, ann, _ = generate_synthetic_scan(random_synth_spec(88, 121_000, rings=64))
    scans, labels = tmp_path / "scans", tmp_path / "labels"
    scans.mkdir()
    labels.mkdir()
    for i in range(3):
        write_point_cloud(scans / f"{i:06d}.bin", cloud)
        write_annotations(labels / f"{i:06d}.label", ann, load_label_map())

    outputs = []
    for i, workers in enumerate(["1", "4", "1"]):
        monkeypatch.setenv("RANGEVIEW_WORKERS", workers)
        out = tmp_path / f"out{i}"
        assert run(["project", str(scans), "--labels", str(labels), "--policy", "cap", "--out", str(out)]) == 0
        outputs.append({p.name: p.read_bytes() for p in sorted(Path(out).iterdir()) if p.suffix in (".rv", ".json")
                        and "manifest" not in p.name})
    identical = all(o == outputs[0] for o in outputs) and len(outputs[0]) == 6

    single = scans / "000000.bin"
    times = {}
    for policy in ("depth", "cap"):
        best = math.inf
        for _ in range(5):
            out = tmp_path / "timed"
            t0 = time.perf_counter()
            rc = run(["project", str(single), "--labels", str(labels / "000000.label"), "--policy", policy,
                      "--workers", "1", "--out", str(out)])
            best = min(best, time.perf_counter() - t0)
            assert rc == 0
        times[policy] = best
    acceptance(8, identical and len(cloud) >= 120_000 and max(times.values()) < 0.2,
               f"{len(cloud)} points at 64x2048: outputs {'byte-identical' if identical else 'DIFFER'} across runs "
               f"and 1/4 workers; best of 5 single-threaded: depth {times['depth'] * 1e3:.0f} ms, "
               f"cap {times['cap'] * 1e3:.0f} ms")


def test_criterion_9_non_reproducibility_note(acceptance):
    readme = (Path(__file__).resolve().parents[1] / "README.md").read_text()
    documented = "not reproduced" in readme.lower()
    acceptance(9, documented,
               "segmentation mIoU figures need a trained network on SemanticKITTI and are not reproduced; "
               "criteria 1-8 cover the projection, scoring and selection math instead"
               + ("" if documented else " (README note missing)"))
