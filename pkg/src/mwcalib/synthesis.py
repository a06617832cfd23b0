"""Synthetic fisheye data from equirectangular panoramas, with exact ground truth.

Panorama convention: width = 2 * height; longitude runs [-pi, pi) left to
right with the forward direction at x = W/2; y = 0 is latitude +pi/2 (the up
direction). Rendering backprojects every output pixel, rotates the ray into
the Manhattan frame and bilinearly samples the panorama (horizontal wrap,
vertical clamp); pixels beyond the FOV stay black.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from PIL import Image

from . import camera
from .camera import CameraParams, OutOfFovError
from .manhattan import (
    ALIGNMENT_SWAP,
    ALL_LABELS,
    Detection,
    KeypointLabel,
    alignment_applies,
    direction_of,
)
from .rotation import (
    EulerPTR,
    euler_to_matrix,
    matrix_to_euler,
    rot_x,
    rot_y,
    rotation_matrix_of,
)

_R_Y180 = rot_y(math.pi)

# Face frames for perspective recovery: columns are the face's right, down
# and viewing directions in Manhattan coordinates.
FACE_ROTATIONS: dict[KeypointLabel, np.ndarray] = {
    KeypointLabel.FRONT: np.eye(3),
    KeypointLabel.RIGHT: rot_y(math.pi / 2.0),
    KeypointLabel.LEFT: rot_y(-math.pi / 2.0),
    KeypointLabel.TOP: rot_x(math.pi / 2.0),
    KeypointLabel.BOTTOM: rot_x(-math.pi / 2.0),
}


def load_panorama(path) -> np.ndarray:
    """Load an 8-bit panorama as float RGB in [0, 255]; enforces W == 2H."""
    img = np.asarray(Image.open(path).convert("RGB"), dtype=float)
    h, w = img.shape[:2]
    if w != 2 * h:
        raise ValueError(f"panorama must satisfy width == 2 * height, got {w}x{h}")
    return img


def direction_to_pano_xy(dirs: np.ndarray, width: int, height: int):
    """Continuous panorama coordinates of unit Manhattan directions."""
    dirs = np.asarray(dirs, dtype=float)
    lon = np.arctan2(dirs[..., 0], dirs[..., 2])
    lat = np.arcsin(np.clip(-dirs[..., 1], -1.0, 1.0))
    x = (lon / (2.0 * math.pi) + 0.5) * width
    y = (0.5 - lat / math.pi) * height
    return np.mod(x, width), np.clip(y, 0.0, height - 1.0)


def pano_xy_to_direction(x, y, width: int, height: int) -> np.ndarray:
    """Unit Manhattan direction seen at a panorama coordinate."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    lon = (x / width - 0.5) * 2.0 * math.pi
    lat = (0.5 - y / height) * math.pi
    cos_lat = np.cos(lat)
    return np.stack([cos_lat * np.sin(lon), -np.sin(lat), cos_lat * np.cos(lon)], axis=-1)


def bilinear_sample(img: np.ndarray, x, y, wrap_x: bool = False) -> np.ndarray:
    """Bilinear lookup of an (H, W, C) image at float coordinates.

    x wraps around when wrap_x is set (longitude seam), otherwise clamps;
    y always clamps.
    """
    h, w = img.shape[:2]
    x = np.asarray(x, dtype=float)
    y = np.clip(np.asarray(y, dtype=float), 0.0, h - 1.0)
    if wrap_x:
        x = np.mod(x, w)
        x0 = np.floor(x).astype(int)
        x1 = (x0 + 1) % w
    else:
        x = np.clip(x, 0.0, w - 1.0)
        x0 = np.floor(x).astype(int)
        x1 = np.minimum(x0 + 1, w - 1)
    y0 = np.floor(y).astype(int)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    top = img[y0, x0] * (1.0 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1.0 - fx) + img[y1, x1] * fx
    return top * (1.0 - fy) + bot * fy


_rotation_matrix = rotation_matrix_of


def render_fisheye(pano: np.ndarray, params: CameraParams, rotation) -> np.ndarray:
    """Render a distorted fisheye view of a panorama; returns uint8 RGB."""
    rot = _rotation_matrix(rotation)
    rays, valid = camera.backproject_grid(params)
    dirs = rays @ rot  # row-vector form of R^T @ ray
    h, w = pano.shape[:2]
    x, y = direction_to_pano_xy(dirs, w, h)
    colors = bilinear_sample(pano, x, y, wrap_x=True)
    colors[~valid] = 0.0
    return np.clip(np.rint(colors), 0, 255).astype(np.uint8)


@dataclass
class GroundTruth:
    """Camera parameters, rotation and the exact visible keypoints of one
    synthesized image.

    Keypoints reproject exactly: project(direction_of(label)) under the
    stored parameters and rotation recovers (u, v) to well below a
    micropixel.
    """

    params: CameraParams
    euler: EulerPTR
    keypoints: list[Detection] = field(default_factory=list)
    align_applied: bool = False

    def rotation_matrix(self) -> np.ndarray:
        return euler_to_matrix(self.euler)

    def to_dict(self) -> dict:
        return {
            "params": self.params.to_dict(),
            "euler_ptr_deg": self.euler.to_dict(),
            "align_applied": self.align_applied,
            "keypoints": [
                {"label": k.label.value, "u": k.u, "v": k.v} for k in self.keypoints
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GroundTruth":
        return cls(
            params=CameraParams.from_dict(d["params"]),
            euler=EulerPTR.from_dict(d["euler_ptr_deg"]),
            keypoints=[Detection.from_dict(k) for k in d["keypoints"]],
            align_applied=bool(d.get("align_applied", False)),
        )


def gt_keypoints(params: CameraParams, rotation):
    """Visible labeled keypoints plus the alignment-adjusted rotation.

    All 14 directions are projected so the relabeling conditions can see a
    lone back label; back is dropped from the output afterwards. When the
    relabeling fires, the returned rotation absorbs the 180-degree vertical
    flip so the keypoints stay exact reprojections of their (new) labels.

    Returns (points, align_applied, adjusted_rotation_matrix).
    """
    rot = _rotation_matrix(rotation)
    dirs = np.stack([direction_of(l) for l in ALL_LABELS])
    uv, vis = camera.project(dirs, params, rot)
    visible = [(l, uv[i]) for i, l in enumerate(ALL_LABELS) if vis[i]]
    applied = alignment_applies(l for l, _ in visible)
    if applied:
        visible = [(ALIGNMENT_SWAP[l], p) for l, p in visible]
        rot = rot @ _R_Y180
    order = {l: i for i, l in enumerate(ALL_LABELS)}
    visible.sort(key=lambda item: order[item[0]])
    points = [
        Detection(l, float(p[0]), float(p[1]))
        for l, p in visible
        if l is not KeypointLabel.BACK
    ]
    return points, applied, rot


@dataclass
class SampleConfig:
    """Parameter distribution for synthetic draws.

    The default focal range makes the image-circle radius at the FOV cap
    (evaluated at k1 = 0) span 0.5 to 1.2 times the sensor half-height.
    """

    image_size: int = 224
    sensor_height: float = camera.SENSOR_HEIGHT_MM
    eta_cap: float = camera.DEFAULT_ETA_CAP
    f_range: tuple[float, float] | None = None
    f_fill_range: tuple[float, float] = (0.5, 1.2)
    k1_range: tuple[float, float] = (-0.1, 0.1)
    pan_range: tuple[float, float] = (-90.0, 90.0)
    tilt_range: tuple[float, float] = (-45.0, 45.0)
    roll_range: tuple[float, float] = (-45.0, 45.0)

    def resolved_f_range(self) -> tuple[float, float]:
        if self.f_range is not None:
            return self.f_range
        half = self.sensor_height / 2.0
        return (
            self.f_fill_range[0] * half / self.eta_cap,
            self.f_fill_range[1] * half / self.eta_cap,
        )

    def to_dict(self) -> dict:
        return {
            "image_size": self.image_size,
            "sensor_height": self.sensor_height,
            "eta_cap": self.eta_cap,
            "f_range": list(self.resolved_f_range()),
            "k1_range": list(self.k1_range),
            "pan_range": list(self.pan_range),
            "tilt_range": list(self.tilt_range),
            "roll_range": list(self.roll_range),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SampleConfig":
        cfg = cls()
        for key in (
            "image_size",
            "sensor_height",
            "eta_cap",
        ):
            if key in d:
                setattr(cfg, key, type(getattr(cfg, key))(d[key]))
        for key in ("f_range", "f_fill_range", "k1_range", "pan_range", "tilt_range", "roll_range"):
            if key in d and d[key] is not None:
                setattr(cfg, key, (float(d[key][0]), float(d[key][1])))
        return cfg


def _uniform(rng: np.random.Generator, lo: float, hi: float) -> float:
    if hi < lo:
        raise ValueError(f"empty sampling range [{lo}, {hi}]")
    return float(rng.uniform(lo, hi))


def sample_params(rng: np.random.Generator, config: SampleConfig | None = None):
    """Draw (CameraParams, EulerPTR) from the configured distributions."""
    cfg = config or SampleConfig()
    f_lo, f_hi = cfg.resolved_f_range()
    f = _uniform(rng, f_lo, f_hi)
    k1 = _uniform(rng, *cfg.k1_range)
    params = CameraParams(
        f=f,
        k1=k1,
        image_w=cfg.image_size,
        image_h=cfg.image_size,
        eta_cap=cfg.eta_cap,
        sensor_height=cfg.sensor_height,
    )
    euler = EulerPTR(
        pan=_uniform(rng, *cfg.pan_range),
        tilt=_uniform(rng, *cfg.tilt_range),
        roll=_uniform(rng, *cfg.roll_range),
    )
    return params, euler


def generate_sample(rng: np.random.Generator, config: SampleConfig | None = None) -> GroundTruth:
    """Sample camera parameters and build the aligned ground truth."""
    params, euler = sample_params(rng, config)
    points, applied, rot = gt_keypoints(params, euler)
    final_euler = matrix_to_euler(rot)[0] if applied else euler
    return GroundTruth(params=params, euler=final_euler, keypoints=points, align_applied=applied)


def oracle_detect(
    gt: GroundTruth,
    noise_sigma: float = 0.0,
    dropout: float = 0.0,
    rng: np.random.Generator | None = None,
) -> list[Detection]:
    """Detections from ground truth: isotropic Gaussian pixel noise plus
    independent dropout; scores are 1."""
    if noise_sigma < 0.0:
        raise ValueError("noise sigma must be non-negative")
    if not 0.0 <= dropout <= 1.0:
        raise ValueError("dropout must lie in [0, 1]")
    if rng is None:
        rng = np.random.default_rng()
    out = []
    for kp in gt.keypoints:
        if dropout > 0.0 and rng.random() < dropout:
            continue
        du = dv = 0.0
        if noise_sigma > 0.0:
            du, dv = rng.normal(0.0, noise_sigma, size=2)
        out.append(Detection(kp.label, kp.u + du, kp.v + dv, 1.0))
    return out


def _pinhole_grid(out_size: int, out_fov_deg: float) -> np.ndarray:
    f_out = (out_size / 2.0) / math.tan(math.radians(out_fov_deg) / 2.0)
    c = out_size / 2.0
    xs = (np.arange(out_size, dtype=float) - c) / f_out
    ys = (np.arange(out_size, dtype=float) - c) / f_out
    xx, yy = np.meshgrid(xs, ys)
    rays = np.stack([xx, yy, np.ones_like(xx)], axis=-1)
    return rays / np.linalg.norm(rays, axis=-1, keepdims=True)


def _face_label(face) -> KeypointLabel:
    label = face if isinstance(face, KeypointLabel) else KeypointLabel.from_string(str(face))
    if label not in FACE_ROTATIONS:
        raise ValueError(f"face must be one of front/left/right/top/bottom, got {label.value}")
    return label


def recover_image(
    fisheye: np.ndarray,
    params: CameraParams,
    rotation,
    face="front",
    out_fov_deg: float = 90.0,
    out_size: int = 224,
) -> np.ndarray:
    """Perspective (pinhole) rendering of one Manhattan face from a fisheye image.

    Every output pixel's pinhole ray is rotated from the face frame into the
    Manhattan frame, then through the camera rotation into the fisheye image,
    and sampled bilinearly; rays outside the fisheye FOV stay black. Raises
    OutOfFovError when the face's viewing direction itself is invisible.
    """
    label = _face_label(face)
    rot = _rotation_matrix(rotation)
    face_rot = FACE_ROTATIONS[label]
    center_cam = rot @ direction_of(label)
    if math.acos(float(np.clip(center_cam[2], -1.0, 1.0))) > params.eta_max:
        raise OutOfFovError(f"face {label.value!r} lies outside the fisheye FOV")
    rays_face = _pinhole_grid(out_size, out_fov_deg)
    dirs_m = rays_face @ face_rot.T
    uv, vis = camera.project(dirs_m, params, rot)
    img = np.asarray(fisheye, dtype=float)
    colors = bilinear_sample(img, uv[..., 0], uv[..., 1], wrap_x=False)
    colors[~vis] = 0.0
    return np.clip(np.rint(colors), 0, 255).astype(np.uint8)


def render_face_from_panorama(
    pano: np.ndarray,
    face="front",
    out_fov_deg: float = 90.0,
    out_size: int = 224,
) -> np.ndarray:
    """Direct pinhole rendering of a Manhattan face from the panorama.

    Bypasses the fisheye camera model entirely; the reference image for
    judging recover_image's double resampling.
    """
    label = _face_label(face)
    face_rot = FACE_ROTATIONS[label]
    rays_face = _pinhole_grid(out_size, out_fov_deg)
    dirs_m = rays_face @ face_rot.T
    h, w = pano.shape[:2]
    x, y = direction_to_pano_xy(dirs_m, w, h)
    colors = bilinear_sample(np.asarray(pano, dtype=float), x, y, wrap_x=True)
    return np.clip(np.rint(colors), 0, 255).astype(np.uint8)
