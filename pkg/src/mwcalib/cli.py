"""Command-line front door: dataset generation, calibration, rectification,
evaluation, arrangement analysis and Monte-Carlo noise sweeps.

All randomness flows from one master seed; each image draws its own generator
from SeedSequence([seed, indices...]) so results never depend on worker order
or restart state. Every JSON output is written with sorted keys so reruns of
the same seed are byte-identical.

Exit codes: 0 success (including partial batch failures), 2 configuration
error, 3 total failure.
"""

from __future__ import annotations

import argparse
import csv
import functools
import json
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np
from PIL import Image

from . import heatmap as heatmap_mod
from . import metrics as metrics_mod
from . import synthesis
from .camera import CameraParams, OutOfFovError, pixel_in_fov
from .manhattan import (
    Detection,
    builtin_arrangements,
    load_arrangement,
    min_axis_angle,
    verify_octahedral_symmetry,
)
from .rotation import (
    EulerPTR,
    angle_diff_deg,
    estimate_rotation,
    euler_to_matrix,
    matrix_to_euler,
)
from .synthesis import GroundTruth, SampleConfig

IMAGE_EXTENSIONS = (".png", ".jpg", ".jpeg")


class ConfigError(Exception):
    """Bad paths, malformed config files or impossible settings."""


def _dump_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _load_json(path: Path):
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read JSON from {path}: {exc}") from exc


def _load_config(path: str | None) -> dict:
    if path is None:
        return {}
    cfg = _load_json(Path(path))
    if not isinstance(cfg, dict):
        raise ConfigError(f"config {path} must hold a JSON object")
    return cfg


def _parallel_map(fn, items, jobs: int):
    items = list(items)
    if jobs <= 1 or len(items) < 2:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items, chunksize=max(1, len(items) // (jobs * 4))))


@functools.lru_cache(maxsize=8)
def _cached_panorama(path: str) -> np.ndarray:
    return synthesis.load_panorama(path)


# ---------------------------------------------------------------------------
# generate


def _generate_one(task: dict) -> str:
    out_dir = Path(task["out_dir"])
    stem = f"{task['index']:06d}"
    img_path = out_dir / f"{stem}.png"
    sidecar_path = out_dir / f"{stem}.json"
    if img_path.exists() and sidecar_path.exists():
        return stem  # restartable: completed items are skipped
    rng = np.random.default_rng(np.random.SeedSequence([task["seed"], task["index"]]))
    cfg = SampleConfig.from_dict(task["config"])
    pano_idx = int(rng.integers(0, len(task["panos"])))
    gt = synthesis.generate_sample(rng, cfg)
    pano = _cached_panorama(task["panos"][pano_idx])
    image = synthesis.render_fisheye(pano, gt.params, gt.rotation_matrix())
    Image.fromarray(image).save(img_path)
    sidecar = gt.to_dict()
    sidecar["panorama"] = Path(task["panos"][pano_idx]).name
    _dump_json(sidecar_path, sidecar)
    return stem


def cmd_generate(args) -> int:
    pano_dir = Path(args.pano_dir)
    if not pano_dir.is_dir():
        raise ConfigError(f"panorama directory {pano_dir} does not exist")
    panos = sorted(
        str(p) for p in pano_dir.iterdir() if p.suffix.lower() in IMAGE_EXTENSIONS
    )
    if not panos:
        raise ConfigError(f"panorama directory {pano_dir} holds no PNG/JPEG images")
    raw_cfg = _load_config(args.config)
    cfg = SampleConfig.from_dict(raw_cfg.get("sample", {}))
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    tasks = [
        {
            "index": i,
            "seed": args.seed,
            "config": cfg.to_dict(),
            "panos": panos,
            "out_dir": str(out_dir),
        }
        for i in range(args.count)
    ]
    stems = _parallel_map(_generate_one, tasks, args.jobs)
    manifest = {
        "command": "generate",
        "seed": args.seed,
        "count": args.count,
        "config": {"sample": cfg.to_dict()},
        "panoramas": [Path(p).name for p in panos],
        "entries": sorted(stems),
    }
    _dump_json(out_dir / "manifest.json", manifest)
    print(f"generated {len(stems)} images into {out_dir}")
    return 0


# ---------------------------------------------------------------------------
# calibrate


def _calibrate_one(entry: dict) -> dict:
    stem = entry["stem"]
    try:
        params = CameraParams.from_dict(entry["params"])
        raw = [Detection.from_dict(d) for d in entry["detections"]]
        # a detection beyond the backprojectable radius is a failed detection
        # of that point, not a failed image (keeps the executable rate at 100%)
        detections = [d for d in raw if pixel_in_fov(d.u, d.v, params)]
        est = estimate_rotation(detections, params, min_score=entry["min_score"])
        est.diagnostics["n_dropped_out_of_fov"] = len(raw) - len(detections)
    except Exception as exc:  # recorded per image, never aborts the batch
        return {"image": stem, "ok": False, "error": f"{type(exc).__name__}: {exc}"}
    rot = est.rotation
    return {
        "image": stem,
        "ok": True,
        "euler_ptr_deg": est.euler.to_dict(),
        "rotation": {
            "gibbs": None if rot.gibbs is None else [float(x) for x in rot.gibbs],
            "quaternion": [float(x) for x in rot.quaternion],
            "matrix": [[float(x) for x in row] for row in rot.matrix],
        },
        "params": params.to_dict(),
        "detections": [d.to_dict() for d in detections],
        "diagnostics": est.diagnostics,
    }


def _gather_calibration_entries(args) -> list[dict]:
    entries = []
    if args.dataset:
        dataset = Path(args.dataset)
        if not dataset.is_dir():
            raise ConfigError(f"dataset directory {dataset} does not exist")
        sidecars = sorted(p for p in dataset.glob("*.json") if p.name != "manifest.json")
        if not sidecars:
            raise ConfigError(f"dataset directory {dataset} holds no sidecars")
        for sc in sidecars:
            stem = sc.stem
            try:
                raw = _load_json(sc)
                entries.append(
                    {
                        "stem": stem,
                        "params": raw["params"],
                        "detections": raw["keypoints"],
                        "min_score": args.min_score,
                    }
                )
            except (ConfigError, KeyError, TypeError) as exc:
                entries.append({"stem": stem, "corrupt": f"{exc}"})
        return entries

    if args.camera is None:
        raise ConfigError("--camera is required with --detections-dir or --heatmaps-dir")
    params_raw = _load_json(Path(args.camera))

    if args.detections_dir:
        det_dir = Path(args.detections_dir)
        if not det_dir.is_dir():
            raise ConfigError(f"detections directory {det_dir} does not exist")
        for path in sorted(det_dir.glob("*.json")):
            try:
                raw = _load_json(path)
                dets = [
                    {"label": d["label"], "u": d["u"], "v": d["v"], "score": d.get("score", 1.0)}
                    for d in raw
                ]
                entries.append(
                    {
                        "stem": path.stem,
                        "params": params_raw,
                        "detections": dets,
                        "min_score": args.min_score,
                    }
                )
            except (ConfigError, KeyError, TypeError) as exc:
                entries.append({"stem": path.stem, "corrupt": f"{exc}"})
        if not entries:
            raise ConfigError(f"detections directory {det_dir} holds no JSON files")
        return entries

    if args.heatmaps_dir:
        hm_dir = Path(args.heatmaps_dir)
        if not hm_dir.is_dir():
            raise ConfigError(f"heatmap directory {hm_dir} does not exist")
        for path in sorted(hm_dir.glob("*.hm")):
            try:
                dets = heatmap_mod.decode_heatmap_file(
                    path, presence_threshold=args.presence_threshold
                )
                entries.append(
                    {
                        "stem": path.stem,
                        "params": params_raw,
                        "detections": [d.to_dict() for d in dets],
                        "min_score": args.min_score,
                    }
                )
            except (OSError, ValueError) as exc:
                entries.append({"stem": path.stem, "corrupt": f"{exc}"})
        if not entries:
            raise ConfigError(f"heatmap directory {hm_dir} holds no .hm files")
        return entries

    raise ConfigError("one of --dataset, --detections-dir or --heatmaps-dir is required")


def cmd_calibrate(args) -> int:
    entries = _gather_calibration_entries(args)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)

    ready = [e for e in entries if "corrupt" not in e]
    results = _parallel_map(_calibrate_one, ready, args.jobs)
    results += [
        {"image": e["stem"], "ok": False, "error": f"corrupt input: {e['corrupt']}"}
        for e in entries
        if "corrupt" in e
    ]
    results.sort(key=lambda r: r["image"])
    for res in results:
        _dump_json(out_dir / f"{res['image']}.json", res)
    n_ok = sum(1 for r in results if r["ok"])
    summary = {
        "command": "calibrate",
        "n_images": len(results),
        "n_ok": n_ok,
        "n_failed": len(results) - n_ok,
        "executable_rate_pct": 100.0 * n_ok / len(results) if results else 0.0,
    }
    _dump_json(out_dir / "summary.json", summary)
    print(
        f"calibrated {n_ok}/{len(results)} images "
        f"(executable rate {summary['executable_rate_pct']:.1f}%)"
    )
    return 0 if n_ok > 0 else 3


# ---------------------------------------------------------------------------
# evaluate


def _evaluate_records(records: list[dict], repe_samples: int, stride: int):
    ok = [r for r in records if r["pred"] is not None and r["pred"]["ok"]]
    pred_eulers, gt_eulers = [], []
    f_errs, k1_errs, repe_vals = [], [], []
    det_lists, gt_lists = [], []
    per_image_rows = []
    for rec in ok:
        gt: GroundTruth = rec["gt"]
        pred = rec["pred"]
        pe = EulerPTR.from_dict(pred["euler_ptr_deg"])
        pparams = CameraParams.from_dict(pred["params"])
        pred_eulers.append(pe)
        gt_eulers.append(gt.euler)
        f_errs.append(abs(pparams.f - gt.params.f))
        k1_errs.append(abs(pparams.k1 - gt.params.k1))
        rp = metrics_mod.repe(
            pparams, pe, gt.params, gt.euler, n_samples=repe_samples
        )
        repe_vals.append(rp)
        dets = [Detection.from_dict(d) for d in pred.get("detections", [])]
        det_lists.append(dets)
        gt_lists.append(gt.keypoints)
        e, _ = matrix_to_euler(euler_to_matrix(pe), reference=gt.euler)
        per_image_rows.append(
            {
                "image": rec["stem"],
                "ok": True,
                "pan_err": angle_diff_deg(e.pan, gt.euler.pan),
                "tilt_err": angle_diff_deg(e.tilt, gt.euler.tilt),
                "roll_err": angle_diff_deg(e.roll, gt.euler.roll),
                "repe_px": rp,
            }
        )
    per_image_rows += [
        {"image": r["stem"], "ok": False, "pan_err": "", "tilt_err": "", "roll_err": "", "repe_px": ""}
        for r in records
        if r["pred"] is None or not r["pred"]["ok"]
    ]
    per_image_rows.sort(key=lambda r: r["image"])

    mae = metrics_mod.angle_mae(pred_eulers, gt_eulers)
    kp = metrics_mod.oks_ap_ar(det_lists, gt_lists, distance_scale=stride)
    report = metrics_mod.EvalReport(
        n_images=len(records),
        executable_rate_pct=100.0 * len(ok) / len(records) if records else 0.0,
        mae_pan=mae[0],
        mae_tilt=mae[1],
        mae_roll=mae[2],
        mae_f=float(np.mean(f_errs)) if f_errs else 0.0,
        mae_k1=float(np.mean(k1_errs)) if k1_errs else 0.0,
        repe_px=float(np.mean(repe_vals)) if repe_vals else 0.0,
        pck=metrics_mod.pck(det_lists, gt_lists, distance_scale=stride),
        ap=kp["AP"],
        ap50=kp["AP50"],
        ap75=kp["AP75"],
        ar=kp["AR"],
        ar50=kp["AR50"],
        ar75=kp["AR75"],
        per_label_mean_distance=metrics_mod.per_label_mean_distance(
            det_lists, gt_lists, distance_scale=stride
        ),
    )
    return report, per_image_rows


def cmd_evaluate(args) -> int:
    gt_dir = Path(args.gt_dir)
    pred_dir = Path(args.pred_dir)
    if not gt_dir.is_dir():
        raise ConfigError(f"ground-truth directory {gt_dir} does not exist")
    if not pred_dir.is_dir():
        raise ConfigError(f"prediction directory {pred_dir} does not exist")
    records = []
    for sc in sorted(gt_dir.glob("*.json")):
        if sc.name == "manifest.json":
            continue
        gt = GroundTruth.from_dict(_load_json(sc))
        pred_path = pred_dir / sc.name
        pred = None
        if pred_path.exists():
            raw = _load_json(pred_path)
            pred = raw if isinstance(raw, dict) and "ok" in raw else None
        records.append({"stem": sc.stem, "gt": gt, "pred": pred})
    if not records:
        raise ConfigError(f"no ground-truth sidecars found in {gt_dir}")

    report, rows = _evaluate_records(records, args.repe_samples, args.stride)
    if report.executable_rate_pct == 0.0:
        print("evaluation failed: no successfully calibrated images", file=sys.stderr)
        return 3
    _dump_json(Path(args.out), report.to_dict())
    if args.csv:
        with open(args.csv, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(
                fh, fieldnames=["image", "ok", "pan_err", "tilt_err", "roll_err", "repe_px"]
            )
            writer.writeheader()
            writer.writerows(rows)
    print(
        f"{report.notes}: MAE pan/tilt/roll = "
        f"{report.mae_pan:.4f}/{report.mae_tilt:.4f}/{report.mae_roll:.4f} deg, "
        f"REPE = {report.repe_px:.4f} px, PCK = {report.pck:.4f}, AP = {report.ap:.4f}"
    )
    return 0


# ---------------------------------------------------------------------------
# simulate


def simulate_cell(
    seed: int,
    cell_index: int,
    sigma: float,
    dropout: float,
    n_images: int,
    cfg: SampleConfig,
    repe_samples: int = 1000,
) -> dict:
    """One (noise, dropout) sweep cell: synthesize, detect, calibrate, score.

    Noisy detections that leave the backprojectable radius count as failed
    detections of that point and are dropped; images whose surviving
    detections span fewer than two unique axes are undeterminable and are
    excluded from the error averages (reported separately), so the sigma=0
    row is exactly clean. Hard per-image errors lower the executable rate.
    """
    pred_eulers, gt_eulers, repe_vals = [], [], []
    n_failed = 0
    n_undetermined = 0
    n_dropped = 0
    for i in range(n_images):
        rng = np.random.default_rng(np.random.SeedSequence([seed, cell_index, i]))
        gt = synthesis.generate_sample(rng, cfg)
        raw = synthesis.oracle_detect(gt, noise_sigma=sigma, dropout=dropout, rng=rng)
        detections = [d for d in raw if pixel_in_fov(d.u, d.v, gt.params)]
        n_dropped += len(raw) - len(detections)
        try:
            est = estimate_rotation(detections, gt.params)
            if est.diagnostics["unique_axes"] < 2:
                n_undetermined += 1
                continue
            repe_vals.append(
                metrics_mod.repe(
                    gt.params, est.euler, gt.params, gt.euler, n_samples=repe_samples
                )
            )
        except (OutOfFovError, ValueError, RuntimeError):
            n_failed += 1
            continue
        pred_eulers.append(est.euler)
        gt_eulers.append(gt.euler)
    mae = metrics_mod.angle_mae(pred_eulers, gt_eulers)
    n_ok = n_images - n_failed
    return {
        "sigma": sigma,
        "dropout": dropout,
        "n_images": n_images,
        "n_ok": n_ok,
        "n_undetermined": n_undetermined,
        "n_dropped_detections": n_dropped,
        "executable_rate_pct": 100.0 * n_ok / n_images if n_images else 0.0,
        "mae_pan": mae[0],
        "mae_tilt": mae[1],
        "mae_roll": mae[2],
        "repe_px": float(np.mean(repe_vals)) if repe_vals else 0.0,
    }


def cmd_simulate(args) -> int:
    raw_cfg = _load_config(args.config)
    cfg = SampleConfig.from_dict(raw_cfg.get("sample", {}))
    sigmas = raw_cfg.get("noise_sigmas", [0.0, 1.0, 3.1, 5.0])
    dropouts = raw_cfg.get("dropouts", [0.0])
    n_images = int(raw_cfg.get("images_per_cell", args.images))
    rows = []
    cell = 0
    for sigma in sigmas:
        for dropout in dropouts:
            rows.append(
                simulate_cell(args.seed, cell, float(sigma), float(dropout), n_images, cfg)
            )
            cell += 1
    payload = {
        "command": "simulate",
        "notes": metrics_mod.REPE_NOTE,
        "seed": args.seed,
        "images_per_cell": n_images,
        "config": {"sample": cfg.to_dict()},
        "rows": rows,
    }
    if args.out:
        _dump_json(Path(args.out), payload)
    header = f"{'sigma':>6} {'drop':>5} {'pan':>8} {'tilt':>8} {'roll':>8} {'repe':>9} {'exec%':>6}"
    print(header)
    for r in rows:
        print(
            f"{r['sigma']:>6.2f} {r['dropout']:>5.2f} {r['mae_pan']:>8.4f} "
            f"{r['mae_tilt']:>8.4f} {r['mae_roll']:>8.4f} {r['repe_px']:>9.4f} "
            f"{r['executable_rate_pct']:>6.1f}"
        )
    return 0


# ---------------------------------------------------------------------------
# analyze-arrangement


def cmd_analyze_arrangement(args) -> int:
    arrangements = []
    if args.file:
        arrangements.append(load_arrangement(args.file, args.name or Path(args.file).stem))
    else:
        builtins = builtin_arrangements()
        if args.name:
            if args.name not in builtins:
                raise ConfigError(
                    f"unknown arrangement {args.name!r}; builtins: {sorted(builtins)}"
                )
            arrangements.append(builtins[args.name])
        else:
            arrangements.extend(builtins.values())
    rows = []
    for arr in arrangements:
        rows.append(
            {
                "name": arr.name,
                "auxiliary_points": int(len(arr.auxiliary)),
                "min_axis_angle_deg": round(min_axis_angle(arr), 4),
                "octahedral_symmetry": bool(verify_octahedral_symmetry(arr)),
            }
        )
    print(f"{'arrangement':<16} {'points':>6} {'min angle':>10} {'symmetric':>10}")
    for r in rows:
        print(
            f"{r['name']:<16} {r['auxiliary_points']:>6d} "
            f"{r['min_axis_angle_deg']:>10.1f} {str(r['octahedral_symmetry']):>10}"
        )
    if args.out:
        _dump_json(Path(args.out), {"arrangements": rows})
    return 0


# ---------------------------------------------------------------------------
# rectify


def cmd_rectify(args) -> int:
    image_path = Path(args.image)
    if not image_path.exists():
        raise ConfigError(f"image {image_path} does not exist")
    if args.sidecar:
        gt = GroundTruth.from_dict(_load_json(Path(args.sidecar)))
        params, euler = gt.params, gt.euler
    elif args.params:
        params = CameraParams.from_dict(_load_json(Path(args.params)))
        euler = EulerPTR(args.pan, args.tilt, args.roll)
    else:
        raise ConfigError("either --sidecar or --params is required")
    fisheye = np.asarray(Image.open(image_path).convert("RGB"))
    out = synthesis.recover_image(
        fisheye, params, euler, face=args.face, out_fov_deg=args.fov, out_size=args.size
    )
    out_path = Path(args.out)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(out).save(out_path)
    print(f"rectified {image_path.name} -> {out_path} (face {args.face})")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="mwcalib",
        description="Manhattan-world fisheye calibration toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p):
        p.add_argument("--seed", type=int, default=0)
        p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
        p.add_argument("--config", type=str, default=None, help="JSON config file")

    p = sub.add_parser("generate", help="synthesize a fisheye dataset from panoramas")
    add_common(p)
    p.add_argument("--pano-dir", required=True)
    p.add_argument("--count", type=int, default=10)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("calibrate", help="recover rotations from detections")
    add_common(p)
    p.add_argument("--dataset", help="generated dataset directory (sidecar keypoints)")
    p.add_argument("--detections-dir", help="directory of per-image detection JSON")
    p.add_argument("--heatmaps-dir", help="directory of raw .hm heatmap files")
    p.add_argument("--camera", help="camera parameter JSON (external detections)")
    p.add_argument("--min-score", type=float, default=0.0)
    p.add_argument("--presence-threshold", type=float, default=0.3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("evaluate", help="score predictions against ground truth")
    add_common(p)
    p.add_argument("--pred-dir", required=True)
    p.add_argument("--gt-dir", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--csv", default=None, help="optional per-image CSV")
    p.add_argument("--repe-samples", type=int, default=1000)
    p.add_argument("--stride", type=int, default=4, help="heatmap stride for keypoint metrics")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("simulate", help="Monte-Carlo noise/dropout sweep")
    add_common(p)
    p.add_argument("--images", type=int, default=100, help="images per sweep cell")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("analyze-arrangement", help="report auxiliary-point arrangements")
    add_common(p)
    p.add_argument("--name", default=None)
    p.add_argument("--file", default=None, help="JSON list of unit 3-vectors")
    p.add_argument("--out", default=None)
    p.set_defaults(func=cmd_analyze_arrangement)

    p = sub.add_parser("rectify", help="perspective recovery of one Manhattan face")
    add_common(p)
    p.add_argument("--image", required=True)
    p.add_argument("--params", default=None, help="camera parameter JSON")
    p.add_argument("--sidecar", default=None, help="use a dataset sidecar for params+rotation")
    p.add_argument("--face", default="front")
    p.add_argument("--pan", type=float, default=0.0)
    p.add_argument("--tilt", type=float, default=0.0)
    p.add_argument("--roll", type=float, default=0.0)
    p.add_argument("--fov", type=float, default=90.0)
    p.add_argument("--size", type=int, default=224)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_rectify)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
