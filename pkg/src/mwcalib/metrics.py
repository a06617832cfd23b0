"""Evaluation metrics: angle MAE, reprojection error, keypoint scores and
image quality.

The reprojection error (REPE) follows this repo's pinned definition: project
a deterministic Fibonacci-sphere direction set restricted to the
ground-truth-visible FOV through both camera models and average the pixel
displacement over mutually visible samples. Reports carry the
"REPE (repo definition)" note because absolute values are only comparable
within this codebase.

Keypoint distances follow the heatmap-scale convention: the default 5.6
threshold corresponds to one tenth of the 56-cell heatmap height, so
input-pixel distances are divided by the heatmap stride (4 by default)
before thresholding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import gaussian_filter

from . import camera
from .camera import CameraParams
from .manhattan import Detection
from .rotation import (
    EulerPTR,
    angle_diff_deg,
    euler_to_matrix,
    matrix_to_euler,
    rotation_matrix_of,
)

REPE_NOTE = "REPE (repo definition)"
DEFAULT_KEYPOINT_THRESHOLD = 5.6
OKS_THRESHOLDS = tuple(round(0.50 + 0.05 * i, 2) for i in range(10))
PSNR_CAP_DB = 99.0


@dataclass
class EvalReport:
    """Aggregate evaluation output for one image set."""

    n_images: int = 0
    executable_rate_pct: float = 100.0
    mae_pan: float = 0.0
    mae_tilt: float = 0.0
    mae_roll: float = 0.0
    mae_f: float = 0.0
    mae_k1: float = 0.0
    repe_px: float = 0.0
    pck: float = 0.0
    ap: float = 0.0
    ap50: float = 0.0
    ap75: float = 0.0
    ar: float = 0.0
    ar50: float = 0.0
    ar75: float = 0.0
    per_label_mean_distance: dict = field(default_factory=dict)
    psnr_db: float | None = None
    ssim: float | None = None
    notes: str = REPE_NOTE

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["per_label_mean_distance"] = dict(self.per_label_mean_distance)
        return d


def fibonacci_sphere(n: int) -> np.ndarray:
    """n near-uniform unit directions (deterministic golden-angle spiral)."""
    i = np.arange(n, dtype=float)
    z = 1.0 - 2.0 * (i + 0.5) / n
    az = i * math.pi * (3.0 - math.sqrt(5.0))
    r = np.sqrt(np.clip(1.0 - z * z, 0.0, 1.0))
    return np.stack([r * np.cos(az), r * np.sin(az), z], axis=-1)


def angle_mae(pred: list[EulerPTR], gt: list[EulerPTR]):
    """Mean absolute pan/tilt/roll error in degrees.

    Each prediction is re-factored with the ground truth as branch reference
    so the comparison picks the Euler branch closest to the truth.
    """
    if len(pred) != len(gt):
        raise ValueError("prediction and ground-truth lists differ in length")
    if not pred:
        return 0.0, 0.0, 0.0
    sums = np.zeros(3)
    for p, g in zip(pred, gt):
        e, _ = matrix_to_euler(euler_to_matrix(p), reference=g)
        sums += (
            angle_diff_deg(e.pan, g.pan),
            angle_diff_deg(e.tilt, g.tilt),
            angle_diff_deg(e.roll, g.roll),
        )
    mae = sums / len(pred)
    return float(mae[0]), float(mae[1]), float(mae[2])


def repe(
    pred_params: CameraParams,
    pred_rotation,
    gt_params: CameraParams,
    gt_rotation,
    n_samples: int = 1000,
) -> float:
    """Mean pixel displacement between the two camera models.

    Samples a Fibonacci-sphere direction set, keeps the directions visible
    under the ground-truth model, and averages the Euclidean pixel distance
    over those also visible under the prediction.
    """
    dirs = fibonacci_sphere(n_samples)
    uv_gt, vis_gt = camera.project(dirs, gt_params, rotation_matrix_of(gt_rotation))
    uv_pr, vis_pr = camera.project(dirs, pred_params, rotation_matrix_of(pred_rotation))
    both = vis_gt & vis_pr
    if not np.any(both):
        raise ValueError("no mutually visible sample directions")
    diff = uv_gt[both] - uv_pr[both]
    return float(np.mean(np.hypot(diff[:, 0], diff[:, 1])))


def _match_distances(detections: list[Detection], gt_points: list[Detection]):
    """Per ground-truth point: distance to the same-label detection, or None."""
    best: dict = {}
    for d in detections:
        cur = best.get(d.label)
        if cur is None or d.score > cur.score:
            best[d.label] = d
    out = []
    for g in gt_points:
        d = best.get(g.label)
        dist = math.hypot(d.u - g.u, d.v - g.v) if d is not None else None
        out.append((g.label, dist))
    return out


def pck(
    detections_per_image: list[list[Detection]],
    gt_per_image: list[list[Detection]],
    threshold: float = DEFAULT_KEYPOINT_THRESHOLD,
    distance_scale: float = 1.0,
) -> float:
    """Fraction of ground-truth points matched within the threshold (inclusive).

    Unmatched ground truth counts as incorrect; distances are divided by
    distance_scale before comparison (pass the heatmap stride to evaluate at
    heatmap scale).
    """
    if len(detections_per_image) != len(gt_per_image):
        raise ValueError("detection and ground-truth lists differ in length")
    total = 0
    correct = 0
    for dets, gts in zip(detections_per_image, gt_per_image):
        for _, dist in _match_distances(dets, gts):
            total += 1
            # nanopixel slack keeps the boundary inclusive through float
            # round-off of the coordinates
            if dist is not None and dist / distance_scale <= threshold + 1e-9:
                correct += 1
    return 1.0 if total == 0 else correct / total


def image_oks(
    detections: list[Detection],
    gt_points: list[Detection],
    s: float = DEFAULT_KEYPOINT_THRESHOLD,
    distance_scale: float = 1.0,
) -> float:
    """Mean keypoint similarity exp(-d^2 / (2 s^2)) over visible ground truth."""
    matches = _match_distances(detections, gt_points)
    if not matches:
        return 1.0
    sims = [
        math.exp(-((dist / distance_scale) ** 2) / (2.0 * s * s)) if dist is not None else 0.0
        for _, dist in matches
    ]
    return float(np.mean(sims))


def oks_ap_ar(
    detections_per_image: list[list[Detection]],
    gt_per_image: list[list[Detection]],
    s: float = DEFAULT_KEYPOINT_THRESHOLD,
    distance_scale: float = 1.0,
) -> dict:
    """AP/AR over the COCO threshold sweep, one keypoint instance per image.

    With a single instance per image and uniform detection scores, precision
    and recall coincide at every threshold: both equal the fraction of images
    whose similarity clears it. AP averages that fraction over thresholds
    0.50:0.05:0.95; AP50/AP75 pick out single thresholds.
    """
    if len(detections_per_image) != len(gt_per_image):
        raise ValueError("detection and ground-truth lists differ in length")
    oks = [
        image_oks(dets, gts, s, distance_scale)
        for dets, gts in zip(detections_per_image, gt_per_image)
        if gts
    ]
    if not oks:
        return {k: 0.0 for k in ("AP", "AP50", "AP75", "AR", "AR50", "AR75")}
    oks_arr = np.asarray(oks)
    fracs = {t: float(np.mean(oks_arr >= t)) for t in OKS_THRESHOLDS}
    ap = float(np.mean(list(fracs.values())))
    return {
        "AP": ap,
        "AP50": fracs[0.50],
        "AP75": fracs[0.75],
        "AR": ap,
        "AR50": fracs[0.50],
        "AR75": fracs[0.75],
    }


def per_label_mean_distance(
    detections_per_image: list[list[Detection]],
    gt_per_image: list[list[Detection]],
    distance_scale: float = 1.0,
) -> dict:
    """Mean matched distance per label plus pooled VP/ADP/All aggregates.

    Ground-truth points without a matching detection are excluded from the
    means (their effect shows up in PCK/AP instead).
    """
    per_label: dict[str, list[float]] = {}
    vp: list[float] = []
    adp: list[float] = []
    for dets, gts in zip(detections_per_image, gt_per_image):
        for label, dist in _match_distances(dets, gts):
            if dist is None:
                continue
            d = dist / distance_scale
            per_label.setdefault(label.value, []).append(d)
            (adp if label.is_adp else vp).append(d)
    out = {k: float(np.mean(v)) for k, v in sorted(per_label.items())}
    if vp:
        out["VP"] = float(np.mean(vp))
    if adp:
        out["ADP"] = float(np.mean(adp))
    if vp or adp:
        out["All"] = float(np.mean(vp + adp))
    return out


def psnr(img_a: np.ndarray, img_b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB on a 255 scale, capped at 99."""
    a = np.asarray(img_a, dtype=float)
    b = np.asarray(img_b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("images must share dimensions")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(PSNR_CAP_DB, 20.0 * math.log10(255.0 / math.sqrt(mse)))


def _ssim_2d(a: np.ndarray, b: np.ndarray) -> float:
    # 11x11 Gaussian window, sigma 1.5 (truncate 3.5 gives a radius-5 kernel),
    # stabilizers (0.01*255)^2 and (0.03*255)^2.
    c1 = (0.01 * 255.0) ** 2
    c2 = (0.03 * 255.0) ** 2
    def win(x):
        return gaussian_filter(x, sigma=1.5, truncate=3.5)
    mu_a = win(a)
    mu_b = win(b)
    var_a = win(a * a) - mu_a * mu_a
    var_b = win(b * b) - mu_b * mu_b
    cov = win(a * b) - mu_a * mu_b
    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2)
    return float(np.mean(num / den))


def ssim(img_a: np.ndarray, img_b: np.ndarray) -> float:
    """Structural similarity on the 255 scale; channels are averaged."""
    a = np.asarray(img_a, dtype=float)
    b = np.asarray(img_b, dtype=float)
    if a.shape != b.shape:
        raise ValueError("images must share dimensions")
    if a.ndim == 2:
        return _ssim_2d(a, b)
    return float(np.mean([_ssim_2d(a[..., c], b[..., c]) for c in range(a.shape[-1])]))
