"""Acceptance suite: every criterion at its stated tolerance, one printed
pass/fail line per criterion (run with -s to see them)."""

import json
import math
import time

import numpy as np
import pytest

from mwcalib.camera import CameraParams, fov_limit, gamma, inverse_gamma, project
from mwcalib.cli import main, simulate_cell
from mwcalib.heatmap import decode_argmax, decode_dark, encode
from mwcalib.manhattan import (
    KeypointLabel as L,
    builtin_arrangements,
    count_unique_axes,
    direction_of,
    min_axis_angle,
)
from mwcalib.metrics import angle_mae, oks_ap_ar, pck, psnr, repe
from mwcalib.rotation import (
    EulerPTR,
    estimate_rotation,
    euler_to_matrix,
    quaternion_to_matrix,
    rodrigues_to_quaternion,
    skew,
)
from mwcalib.synthesis import (
    SampleConfig,
    generate_sample,
    oracle_detect,
    recover_image,
    render_face_from_panorama,
    render_fisheye,
)

from conftest import make_panorama


def report(number: int, ok: bool, detail: str) -> None:
    print(f"[criterion {number}] {'PASS' if ok else 'FAIL'} - {detail}")


def test_criterion_1_arrangement_table():
    t0 = time.monotonic()
    arrs = builtin_arrangements()
    angles = {name: min_axis_angle(arr) for name, arr in arrs.items()}
    counts = {name: len(arr.auxiliary) for name, arr in arrs.items()}
    elapsed = time.monotonic() - t0
    ok = (
        abs(angles["ADP-8"] - 54.7) <= 0.05
        and abs(angles["C4-based-12"] - 45.0) <= 0.05
        and abs(angles["C2-based-12"] - 45.0) <= 0.05
        and counts == {"ADP-8": 8, "C4-based-12": 12, "C2-based-12": 12}
        and "C3-based-24" not in arrs  # coordinates unpublished: excluded
        and elapsed < 1.0
    )
    report(
        1,
        ok,
        f"ADP {angles['ADP-8']:.2f} deg ({counts['ADP-8']} pts), "
        f"C4 {angles['C4-based-12']:.2f} ({counts['C4-based-12']}), "
        f"C2 {angles['C2-based-12']:.2f} ({counts['C2-based-12']}), "
        f"{elapsed:.3f}s",
    )
    assert ok


def test_criterion_2_rotation_algebra():
    rng = np.random.default_rng(2024)
    t0 = time.monotonic()
    worst_norm = 0.0
    worst_ortho = 0.0
    worst_cayley = 0.0
    eye = np.eye(3)
    for _ in range(10000):
        g = rng.normal(scale=2.0, size=3)
        q = rodrigues_to_quaternion(g)
        worst_norm = max(worst_norm, abs(np.linalg.norm(q) - 1.0))
        rot = quaternion_to_matrix(q)
        worst_ortho = max(worst_ortho, float(np.max(np.abs(rot.T @ rot - eye))))
        gx = skew(g)
        cayley = np.linalg.solve(eye - gx, eye + gx)
        worst_cayley = max(worst_cayley, float(np.max(np.abs(rot - cayley))))
    elapsed = time.monotonic() - t0
    ok = worst_norm < 1e-12 and worst_ortho < 1e-10 and worst_cayley < 1e-12 and elapsed < 5.0
    report(
        2,
        ok,
        f"unit-norm err {worst_norm:.2e}, orthonormality {worst_ortho:.2e}, "
        f"Cayley agreement {worst_cayley:.2e}, {elapsed:.2f}s for 10k",
    )
    assert ok


def test_criterion_3_noiseless_end_to_end():
    rng = np.random.default_rng(3)
    cfg = SampleConfig()
    t0 = time.monotonic()
    pred, gt_eulers, repe_vals = [], [], []
    det_lists, gt_lists = [], []
    while len(pred) < 1000:
        gt = generate_sample(rng, cfg)
        if count_unique_axes(p.label for p in gt.keypoints) < 2:
            continue
        dets = oracle_detect(gt, noise_sigma=0.0, dropout=0.0, rng=rng)
        est = estimate_rotation(dets, gt.params)
        pred.append(est.euler)
        gt_eulers.append(gt.euler)
        repe_vals.append(repe(gt.params, est.euler, gt.params, gt.euler))
        det_lists.append(dets)
        gt_lists.append(gt.keypoints)
    mae = angle_mae(pred, gt_eulers)
    worst_repe = max(repe_vals)
    pck_val = pck(det_lists, gt_lists)
    kp = oks_ap_ar(det_lists, gt_lists)
    elapsed = time.monotonic() - t0
    ok = (
        max(mae) < 1e-5
        and worst_repe < 1e-4
        and pck_val == 1.0
        and kp["AP"] == 1.0
        and kp["AR"] == 1.0
        and elapsed < 120.0
    )
    report(
        3,
        ok,
        f"MAE {mae[0]:.2e}/{mae[1]:.2e}/{mae[2]:.2e} deg, max REPE {worst_repe:.2e} px, "
        f"PCK {pck_val}, AP {kp['AP']}, AR {kp['AR']}, {elapsed:.1f}s for 1000 images",
    )
    assert ok


def test_criterion_4_degenerate_cases():
    rng = np.random.default_rng(4)
    params = CameraParams(f=4.0, k1=0.0, image_w=224, image_h=224)

    # two axes, noiseless: exact recovery
    two_axis_ok = 0
    pairs = [(L.FRONT, L.RIGHT), (L.FRONT, L.TOP), (L.TOP, L.RIGHT), (L.FRONT, L.FLT)]
    n_two = 0
    while n_two < 100:
        truth = EulerPTR(
            rng.uniform(-30, 30), rng.uniform(-20, 20), rng.uniform(-20, 20)
        )
        rot = euler_to_matrix(truth)
        labels = pairs[n_two % len(pairs)]
        dirs = np.stack([direction_of(l) for l in labels])
        uv, vis = project(dirs, params, rot)
        if not np.all(vis):
            continue
        from mwcalib.manhattan import Detection

        dets = [Detection(l, float(uv[i, 0]), float(uv[i, 1])) for i, l in enumerate(labels)]
        est = estimate_rotation(dets, params)
        if (
            abs(est.euler.pan - truth.pan) < 1e-6
            and abs(est.euler.tilt - truth.tilt) < 1e-6
            and abs(est.euler.roll - truth.roll) < 1e-6
        ):
            two_axis_ok += 1
        n_two += 1

    # one point: exactly one angle zeroed, per the flagged axis
    one_point_ok = 0
    labels13 = [l for l in L if l is not L.BACK]
    n_one = 0
    while n_one < 100:
        truth = EulerPTR(
            rng.uniform(-40, 40), rng.uniform(-25, 25), rng.uniform(-25, 25)
        )
        rot = euler_to_matrix(truth)
        label = labels13[n_one % len(labels13)]
        uv, vis = project(direction_of(label), params, rot)
        if not vis:
            continue
        from mwcalib.manhattan import Detection

        est = estimate_rotation([Detection(label, float(uv[0]), float(uv[1]))], params)
        zeroed = est.diagnostics["zeroed_angle"]
        angles = est.euler.to_dict()
        if (
            est.diagnostics["degenerate_case"] == "one_point"
            and zeroed in angles
            and angles[zeroed] == 0.0
        ):
            one_point_ok += 1
        n_one += 1

    # zero points: identity with all angles zero
    zero_ok = 0
    for _ in range(100):
        est = estimate_rotation([], params)
        if (
            est.euler == EulerPTR(0.0, 0.0, 0.0)
            and est.diagnostics["degenerate_case"] == "zero_point"
        ):
            zero_ok += 1

    ok = two_axis_ok == 100 and one_point_ok == 100 and zero_ok == 100
    report(
        4,
        ok,
        f"2-axis exact {two_axis_ok}/100, 1-point zeroed-angle {one_point_ok}/100, "
        f"0-point identity {zero_ok}/100",
    )
    assert ok


def test_criterion_5_projection_round_trip():
    worst = 0.0
    for k1 in np.linspace(-0.1, 0.1, 21):
        eta_max = fov_limit(k1)
        etas = np.linspace(0.0, eta_max - 1e-9, 2000)
        for f in np.linspace(6.0, 24.0, 7):
            back = inverse_gamma(gamma(etas, f, k1), f, k1)
            worst = max(worst, float(np.max(np.abs(back - etas))))
    ok = worst < 1e-9
    report(5, ok, f"max |inverse_gamma(gamma(eta)) - eta| = {worst:.2e} rad over the grid")
    assert ok


def test_criterion_6_heatmap_subpixel():
    rng = np.random.default_rng(6)
    margin = 3 * 2.0 * 4  # three sigma from borders, input pixels
    dark_err, argmax_err = [], []
    for _ in range(1000):
        u, v = rng.uniform(margin, 224 - margin, size=2)
        hm = encode((u, v), sigma=2.0)
        d = decode_dark(hm)
        a = decode_argmax(hm)
        dark_err.append(math.hypot(d.u - u, d.v - v))
        argmax_err.append(math.hypot(a.u - u, a.v - v))
    dark95 = float(np.percentile(dark_err, 95))
    argmax95 = float(np.percentile(argmax_err, 95))
    ok = dark95 < 0.25 and argmax95 >= 2.0
    report(
        6,
        ok,
        f"DARK 95th pct {dark95:.4f} px vs naive argmax {argmax95:.2f} px (1000 points)",
    )
    assert ok


def test_criterion_7_table4_surrogate():
    """Desk-scale surrogate of the reference rotation-error table.

    Runs at the stated drive: per-component Gaussian sigma of 3.1 INPUT
    pixels. Known window-calibration defect: the reference 3.10 px mean
    detection error is measured at heatmap scale (its companion 5.6 px
    threshold is one tenth of the 56-cell heatmap height), i.e. 12.4 input
    px on this raster, so a 3.1-input-px drive injects one quarter of the
    reference detection error and the lower edges of the factor-2 windows
    are not reachable for tilt/roll/REPE. The unit-consistent drive is
    printed alongside for comparison.
    """
    t0 = time.monotonic()
    row = simulate_cell(
        seed=7, cell_index=0, sigma=3.1, dropout=0.0, n_images=1000, cfg=SampleConfig()
    )
    elapsed = time.monotonic() - t0
    windows = {
        "mae_pan": (2.20 / 2, 2.20 * 2),
        "mae_tilt": (3.15 / 2, 3.15 * 2),
        "mae_roll": (3.00 / 2, 3.00 * 2),
        "repe_px": (5.50 / 2, 5.50 * 2),
    }
    checks = {k: windows[k][0] <= row[k] <= windows[k][1] for k in windows}
    ok = all(checks.values()) and elapsed < 300.0
    report(
        7,
        ok,
        f"sigma=3.1 input px: MAE {row['mae_pan']:.2f}/{row['mae_tilt']:.2f}/"
        f"{row['mae_roll']:.2f} deg, REPE {row['repe_px']:.2f} px vs windows "
        f"pan[1.10,4.40] tilt[1.575,6.30] roll[1.50,6.00] repe[2.75,11.0]; "
        f"exec {row['executable_rate_pct']:.1f}%, {elapsed:.0f}s",
    )
    if not ok:
        ref = simulate_cell(
            seed=7, cell_index=1, sigma=3.1 * 4, dropout=0.0, n_images=1000,
            cfg=SampleConfig(),
        )
        print(
            f"[criterion 7] at the unit-consistent drive "
            f"(3.1 heatmap px = 12.4 input px): MAE {ref['mae_pan']:.2f}/"
            f"{ref['mae_tilt']:.2f}/{ref['mae_roll']:.2f} deg, REPE "
            f"{ref['repe_px']:.2f} px (reference values: 2.20/3.15/3.00, 5.50)"
        )
    assert ok, (
        "window-calibration defect: the targets treat the heatmap-scale "
        "3.10 px detection error as input-scale; see the test docstring"
    )


def test_criterion_8_recovery_quality():
    rng = np.random.default_rng(8)
    pano = make_panorama(512)
    cfg = SampleConfig()
    # the whole face cone must sit inside the FOV, otherwise the recovered
    # image is legitimately black where the oracle has content
    corner = math.atan(math.sqrt(2.0) * math.tan(math.radians(35.0)))
    values = []
    while len(values) < 50:
        gt = generate_sample(rng, cfg)
        if gt.align_applied:
            continue  # keep the panorama frame equal to the ground-truth frame
        rot = gt.rotation_matrix()
        ray = rot @ direction_of(L.FRONT)
        if math.acos(np.clip(ray[2], -1, 1)) + corner > gt.params.eta_max:
            continue
        fisheye = render_fisheye(pano, gt.params, rot)
        recovered = recover_image(fisheye, gt.params, rot, face="front", out_fov_deg=70.0)
        oracle = render_face_from_panorama(pano, face="front", out_fov_deg=70.0)
        values.append(psnr(recovered, oracle))
    worst = min(values)
    ok = worst >= 30.0
    report(
        8,
        ok,
        f"recover_image vs pinhole oracle on 50 images: PSNR min {worst:.2f} dB, "
        f"mean {np.mean(values):.2f} dB",
    )
    assert ok


def test_criterion_9_determinism(tmp_path):
    from PIL import Image

    pano_dir = tmp_path / "panos"
    pano_dir.mkdir()
    Image.fromarray(make_panorama(128)).save(pano_dir / "p.png")

    gen_bytes = []
    for tag in ("a", "b"):
        out = tmp_path / f"gen_{tag}"
        assert (
            main(
                [
                    "generate", "--pano-dir", str(pano_dir), "--count", "4",
                    "--seed", "99", "--out", str(out), "--jobs", "1",
                ]
            )
            == 0
        )
        gen_bytes.append(
            b"".join(sorted(p.read_bytes() for p in out.glob("*.json")))
        )

    cfg = tmp_path / "cfg.json"
    cfg.write_text(
        json.dumps({"noise_sigmas": [0.0, 2.0], "dropouts": [0.0], "images_per_cell": 25})
    )
    sim_bytes = []
    for tag in ("a", "b"):
        out = tmp_path / f"sim_{tag}.json"
        assert main(["simulate", "--seed", "42", "--config", str(cfg), "--out", str(out)]) == 0
        sim_bytes.append(out.read_bytes())

    ok = gen_bytes[0] == gen_bytes[1] and sim_bytes[0] == sim_bytes[1]
    report(
        9,
        ok,
        f"generate JSONs byte-identical: {gen_bytes[0] == gen_bytes[1]}, "
        f"simulate report byte-identical: {sim_bytes[0] == sim_bytes[1]}",
    )
    assert ok
