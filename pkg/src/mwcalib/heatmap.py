"""Gaussian heatmap encoding and sub-pixel decoding for labeled keypoints.

Encoding evaluates an amplitude-1 Gaussian at integer heatmap cells around
the keypoint. Decoding takes the argmax and refines it with one log-Taylor
step (gradient and Hessian of the log-heatmap by central differences),
optionally after a Gaussian pre-smoothing pass, which keeps the refinement
exact on Gaussian-shaped peaks. A raw binary interface lets externally
produced score grids enter the pipeline.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from scipy.ndimage import gaussian_filter

from .manhattan import Detection, KeypointLabel, USED_LABELS

DEFAULT_STRIDE = 4
DEFAULT_SIGMA = 2.0
DEFAULT_PRESENCE_THRESHOLD = 0.3
_LOG_FLOOR = 1e-10


@dataclass
class Heatmap:
    """A single-label score grid at input_size / stride resolution."""

    grid: np.ndarray  # (H_h, W_h), scores in [0, 1]
    stride: int
    label: KeypointLabel | None = None


@dataclass
class DecodedPoint:
    u: float
    v: float
    score: float
    present: bool
    used_fallback: bool = False


def encode(
    point: tuple[float, float],
    image_size: tuple[int, int] = (224, 224),
    stride: int = DEFAULT_STRIDE,
    sigma: float = DEFAULT_SIGMA,
    label: KeypointLabel | None = None,
) -> Heatmap:
    """Render the Gaussian heatmap of one input-image point.

    The point maps to heatmap coordinates by dividing by the stride; grid
    values are exp(-((x - x0)^2 + (y - y0)^2) / (2 sigma^2)) with sigma in
    heatmap cells.
    """
    w, h = image_size
    if w % stride or h % stride:
        raise ValueError("image size must be divisible by the stride")
    u, v = float(point[0]), float(point[1])
    if not (0.0 <= u <= w - 1 and 0.0 <= v <= h - 1):
        raise ValueError(f"point ({u}, {v}) lies outside the {w}x{h} raster")
    x0, y0 = u / stride, v / stride
    xs = np.arange(w // stride, dtype=float)
    ys = np.arange(h // stride, dtype=float)
    xx, yy = np.meshgrid(xs, ys)
    grid = np.exp(-((xx - x0) ** 2 + (yy - y0) ** 2) / (2.0 * sigma * sigma))
    return Heatmap(grid=grid, stride=stride, label=label)


def decode_argmax(
    hm: Heatmap, presence_threshold: float = DEFAULT_PRESENCE_THRESHOLD
) -> DecodedPoint:
    """Plain integer-cell argmax decode (the baseline DARK improves on)."""
    peak = float(hm.grid.max(initial=0.0))
    if peak < presence_threshold:
        return DecodedPoint(0.0, 0.0, peak, present=False)
    my, mx = np.unravel_index(int(np.argmax(hm.grid)), hm.grid.shape)
    return DecodedPoint(mx * hm.stride, my * hm.stride, peak, present=True)


def decode_dark(
    hm: Heatmap,
    presence_threshold: float = DEFAULT_PRESENCE_THRESHOLD,
    presmooth: bool = True,
    smooth_sigma: float | None = None,
) -> DecodedPoint:
    """Sub-pixel decode: argmax plus one log-Taylor refinement step.

    The refinement offset is -H^-1 g with gradient and Hessian of the
    log-heatmap estimated by central differences at the peak cell, clamped to
    one cell per axis. Non-finite or unusable refinements fall back to the
    plain argmax, flagged on the result.
    """
    grid = hm.grid
    peak = float(grid.max(initial=0.0))
    if peak < presence_threshold:
        return DecodedPoint(0.0, 0.0, peak, present=False)

    work = grid
    if presmooth:
        sig = DEFAULT_SIGMA if smooth_sigma is None else smooth_sigma
        work = gaussian_filter(grid, sigma=sig, mode="constant")
    my, mx = np.unravel_index(int(np.argmax(work)), work.shape)

    h_h, w_h = work.shape
    if not (1 <= mx < w_h - 1 and 1 <= my < h_h - 1):
        out = decode_argmax(hm, presence_threshold)
        out.used_fallback = True
        return out

    log_w = np.log(np.clip(work[my - 1 : my + 2, mx - 1 : mx + 2], _LOG_FLOOR, None))
    gx = (log_w[1, 2] - log_w[1, 0]) / 2.0
    gy = (log_w[2, 1] - log_w[0, 1]) / 2.0
    dxx = log_w[1, 2] - 2.0 * log_w[1, 1] + log_w[1, 0]
    dyy = log_w[2, 1] - 2.0 * log_w[1, 1] + log_w[0, 1]
    dxy = (log_w[2, 2] - log_w[2, 0] - log_w[0, 2] + log_w[0, 0]) / 4.0
    det = dxx * dyy - dxy * dxy
    if not np.isfinite(det) or abs(det) < 1e-12:
        out = decode_argmax(hm, presence_threshold)
        out.used_fallback = True
        return out
    ox = -(dyy * gx - dxy * gy) / det
    oy = -(dxx * gy - dxy * gx) / det
    if not (np.isfinite(ox) and np.isfinite(oy)):
        out = decode_argmax(hm, presence_threshold)
        out.used_fallback = True
        return out
    ox = float(np.clip(ox, -1.0, 1.0))
    oy = float(np.clip(oy, -1.0, 1.0))
    return DecodedPoint((mx + ox) * hm.stride, (my + oy) * hm.stride, peak, present=True)


def write_heatmap_file(path, grids: np.ndarray, stride: int) -> None:
    """Write stacked heatmaps as little-endian binary.

    Layout: header of four uint32 (n_labels, H_h, W_h, stride) followed by
    n_labels * H_h * W_h float32 scores in canonical label order.
    """
    grids = np.asarray(grids, dtype=np.float32)
    if grids.ndim != 3:
        raise ValueError("expected an (n_labels, H_h, W_h) array")
    n, h, w = grids.shape
    with open(path, "wb") as fh:
        fh.write(struct.pack("<4I", n, h, w, stride))
        fh.write(grids.astype("<f4").tobytes())


def read_heatmap_file(path) -> tuple[np.ndarray, int]:
    with open(path, "rb") as fh:
        header = fh.read(16)
        if len(header) != 16:
            raise ValueError("truncated heatmap file header")
        n, h, w, stride = struct.unpack("<4I", header)
        data = np.frombuffer(fh.read(), dtype="<f4")
    if data.size != n * h * w:
        raise ValueError("heatmap file payload does not match its header")
    return data.reshape(n, h, w).copy(), int(stride)


def decode_heatmap_file(
    path,
    labels: tuple[KeypointLabel, ...] = USED_LABELS,
    presence_threshold: float = DEFAULT_PRESENCE_THRESHOLD,
) -> list[Detection]:
    """Decode an externally produced heatmap stack into detections."""
    grids, stride = read_heatmap_file(path)
    if grids.shape[0] != len(labels):
        raise ValueError(
            f"file holds {grids.shape[0]} heatmaps but {len(labels)} labels were given"
        )
    detections = []
    for grid, label in zip(grids, labels):
        point = decode_dark(Heatmap(grid.astype(float), stride, label), presence_threshold)
        if point.present:
            detections.append(Detection(label, point.u, point.v, point.score))
    return detections
