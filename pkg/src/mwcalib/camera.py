"""Radially symmetric fisheye camera model.

Forward projection maps a unit direction in camera coordinates to a pixel
through the radial profile r = f * (eta + k1 * eta**3), where eta is the
incident angle between the ray and the optical axis. Backprojection inverts
the profile on its monotone range.

Conventions, used repo-wide: camera axes X right, Y down, Z forward (image v
grows downward); focal length, pitch and radial distances in millimeters;
angles in radians; pixel coordinates in pixels with integer pixel centers.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

# Half-FOV of a 195 degree fisheye; cameras with monotone profiles keep this cap.
DEFAULT_ETA_CAP = math.radians(97.5)
SENSOR_HEIGHT_MM = 24.0


class OutOfFovError(ValueError):
    """An angle, radius or pixel falls outside the camera's monotone range."""


def fov_limit(k1: float, eta_cap: float = DEFAULT_ETA_CAP) -> float:
    """Largest incident angle on which the radial profile is invertible.

    For k1 >= 0 the profile increases everywhere, so the configured cap
    applies. For k1 < 0 it peaks where the derivative 1 + 3*k1*eta**2
    vanishes, i.e. at sqrt(-1/(3*k1)).
    """
    if k1 < 0.0:
        return min(eta_cap, math.sqrt(-1.0 / (3.0 * k1)))
    return eta_cap


@dataclass(frozen=True)
class CameraParams:
    """Fisheye intrinsics.

    The pixel pitch is square and derived from the fixed 24 mm sensor height
    (d_u = d_v = sensor_height / image_h); the principal point sits at the
    image center. Asymmetric pitch is not representable by construction.
    """

    f: float
    k1: float
    image_w: int
    image_h: int
    eta_cap: float = DEFAULT_ETA_CAP
    sensor_height: float = SENSOR_HEIGHT_MM

    def __post_init__(self) -> None:
        if self.f <= 0.0:
            raise ValueError(f"focal length must be positive, got {self.f}")
        if self.image_w <= 0 or self.image_h <= 0:
            raise ValueError("image dimensions must be positive")
        if not 0.0 < self.eta_cap <= math.pi:
            raise ValueError("eta_cap must lie in (0, pi]")
        if self.sensor_height <= 0.0:
            raise ValueError("sensor height must be positive")

    @property
    def d_v(self) -> float:
        return self.sensor_height / self.image_h

    @property
    def d_u(self) -> float:
        return self.d_v

    @property
    def c_u(self) -> float:
        return self.image_w / 2.0

    @property
    def c_v(self) -> float:
        return self.image_h / 2.0

    @property
    def eta_max(self) -> float:
        return fov_limit(self.k1, self.eta_cap)

    @property
    def r_max(self) -> float:
        """Largest representable radial distance on the sensor, millimeters."""
        eta = self.eta_max
        return self.f * (eta + self.k1 * eta**3)

    def to_dict(self) -> dict:
        return {
            "f_mm": self.f,
            "k1": self.k1,
            "image_w": self.image_w,
            "image_h": self.image_h,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CameraParams":
        kwargs = {}
        if "eta_cap" in d:
            kwargs["eta_cap"] = float(d["eta_cap"])
        return cls(
            f=float(d["f_mm"]),
            k1=float(d["k1"]),
            image_w=int(d["image_w"]),
            image_h=int(d["image_h"]),
            **kwargs,
        )


@dataclass(frozen=True)
class Extrinsics:
    """Rotation-only extrinsic block; the translation is pinned to zero."""

    rotation: np.ndarray  # (3, 3) world-to-camera
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self) -> None:
        rot = np.asarray(self.rotation, dtype=float)
        if rot.shape != (3, 3):
            raise ValueError("rotation must be a 3x3 matrix")
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > 1e-8:
            raise ValueError("rotation matrix is not orthonormal")
        if np.any(np.asarray(self.translation) != 0.0):
            raise ValueError("translation is fixed to the zero vector")
        object.__setattr__(self, "rotation", rot)
        object.__setattr__(self, "translation", np.zeros(3))


def gamma(eta, f: float, k1: float, eta_max: float | None = None):
    """Radial distance on the sensor (mm) for incident angle eta (rad).

    Raises OutOfFovError outside [0, eta_max]; the profile is strictly
    increasing on that interval.
    """
    eta_arr = np.asarray(eta, dtype=float)
    if eta_max is None:
        eta_max = fov_limit(k1)
    if np.any(eta_arr < -1e-12) or np.any(eta_arr > eta_max + 1e-12):
        raise OutOfFovError(
            f"incident angle outside the valid range [0, {eta_max:.9f}]"
        )
    r = f * (eta_arr + k1 * eta_arr**3)
    return float(r) if np.isscalar(eta) else r


def inverse_gamma(r, f: float, k1: float, eta_max: float | None = None):
    """Incident angle whose radial distance is r; inverts gamma.

    Solves k1*eta**3 + eta - r/f = 0 for the root inside [0, eta_max]
    (closed form plus a Newton polish). Raises OutOfFovError when r exceeds
    the monotone range.
    """
    if eta_max is None:
        eta_max = fov_limit(k1)
    r_arr = np.asarray(r, dtype=float)
    r_lim = f * (eta_max + k1 * eta_max**3)
    if np.any(r_arr < -1e-12) or np.any(r_arr > r_lim + 1e-9 * f):
        raise OutOfFovError(f"radial distance outside the valid range [0, {r_lim:.9f}]")
    c = np.clip(r_arr, 0.0, r_lim) / f
    eta = _solve_radial_cubic(c, k1, eta_max)
    return float(eta) if np.isscalar(r) else eta


def _solve_radial_cubic(c: np.ndarray, k1: float, eta_max: float) -> np.ndarray:
    """Root of k1*x**3 + x = c inside [0, eta_max], elementwise."""
    c = np.asarray(c, dtype=float)
    if abs(k1) < 1e-14:
        return np.clip(c, 0.0, eta_max)
    if k1 > 0.0:
        # Depressed cubic with one real root (Cardano).
        p = 1.0 / k1
        q = -c / k1
        disc = np.sqrt(q * q / 4.0 + p**3 / 27.0)
        eta = np.cbrt(-q / 2.0 + disc) + np.cbrt(-q / 2.0 - disc)
    else:
        # Three real roots; the one below the profile peak is
        # 2*m*cos(theta/3 - 2*pi/3) with m the peak location.
        m = math.sqrt(-1.0 / (3.0 * k1))
        arg = np.clip(-1.5 * c * math.sqrt(-3.0 * k1), -1.0, 1.0)
        theta = np.arccos(arg)
        eta = 2.0 * m * np.cos(theta / 3.0 - 2.0 * math.pi / 3.0)
    # Newton polish; the derivative stays positive strictly inside the range.
    for _ in range(3):
        deriv = 3.0 * k1 * eta * eta + 1.0
        safe = np.where(np.abs(deriv) > 1e-12, deriv, 1.0)
        step = np.where(np.abs(deriv) > 1e-12, (k1 * eta**3 + eta - c) / safe, 0.0)
        eta = eta - step
    return np.clip(eta, 0.0, eta_max)


def _as_rotation_matrix(rotation) -> np.ndarray | None:
    if rotation is None:
        return None
    if isinstance(rotation, Extrinsics):
        return rotation.rotation
    mat = getattr(rotation, "matrix", rotation)
    return np.asarray(mat, dtype=float)


def project(dirs, params: CameraParams, rotation=None):
    """Project unit world directions to pixel coordinates.

    Args:
        dirs: (..., 3) unit directions in world (Manhattan) coordinates.
        rotation: optional world-to-camera rotation; a 3x3 array, an
            Extrinsics, or anything with a ``.matrix`` attribute. Identity
            when None.

    Returns:
        (uv, visible): uv is (..., 2) float pixels, visible a boolean mask
        that is False where the incident angle exceeds the FOV limit or the
        pixel leaves the raster. Invisible points are flagged, never raised.
    """
    dirs = np.asarray(dirs, dtype=float)
    rot = _as_rotation_matrix(rotation)
    ray = dirs if rot is None else dirs @ rot.T
    z = np.clip(ray[..., 2], -1.0, 1.0)
    eta = np.arccos(z)
    planar = np.hypot(ray[..., 0], ray[..., 1])
    safe = np.where(planar > 1e-15, planar, 1.0)
    nx = np.where(planar > 1e-15, ray[..., 0] / safe, 0.0)
    ny = np.where(planar > 1e-15, ray[..., 1] / safe, 0.0)
    r_mm = params.f * (eta + params.k1 * eta**3)
    u = params.c_u + (r_mm / params.d_u) * nx
    v = params.c_v + (r_mm / params.d_v) * ny
    visible = (
        (eta <= params.eta_max + 1e-12)
        & (u >= 0.0)
        & (u <= params.image_w - 1.0)
        & (v >= 0.0)
        & (v <= params.image_h - 1.0)
    )
    uv = np.stack([u, v], axis=-1)
    return uv, visible


def backproject(uv, params: CameraParams) -> np.ndarray:
    """Unit rays (camera frame) for pixel coordinates.

    The azimuth of (u - c_u, v - c_v) is preserved exactly; the incident
    angle comes from inverting the radial profile. Raises OutOfFovError for
    pixels beyond the monotone range.
    """
    uv = np.asarray(uv, dtype=float)
    du = (uv[..., 0] - params.c_u) * params.d_u
    dv = (uv[..., 1] - params.c_v) * params.d_v
    r = np.hypot(du, dv)
    eta = inverse_gamma(r, params.f, params.k1, params.eta_max)
    eta = np.asarray(eta, dtype=float)
    safe = np.where(r > 1e-15, r, 1.0)
    nx = np.where(r > 1e-15, du / safe, 0.0)
    ny = np.where(r > 1e-15, dv / safe, 0.0)
    sin_eta = np.sin(eta)
    ray = np.stack([sin_eta * nx, sin_eta * ny, np.cos(eta)], axis=-1)
    return ray


def pixel_in_fov(u: float, v: float, params: CameraParams) -> bool:
    """Whether a pixel lies inside the backprojectable radial range."""
    r = math.hypot((u - params.c_u) * params.d_u, (v - params.c_v) * params.d_v)
    return r <= params.r_max + 1e-12


def backproject_grid(params: CameraParams):
    """Rays and validity mask for every pixel center of the raster.

    Unlike backproject this never raises: pixels outside the monotone range
    are masked out. Intended for bulk remapping.
    """
    u = np.arange(params.image_w, dtype=float)
    v = np.arange(params.image_h, dtype=float)
    uu, vv = np.meshgrid(u, v)
    du = (uu - params.c_u) * params.d_u
    dv = (vv - params.c_v) * params.d_v
    r = np.hypot(du, dv)
    valid = r <= params.r_max + 1e-12
    c = np.where(valid, r, 0.0) / params.f
    eta = _solve_radial_cubic(c, params.k1, params.eta_max)
    safe = np.where(r > 1e-15, r, 1.0)
    nx = np.where(r > 1e-15, du / safe, 0.0)
    ny = np.where(r > 1e-15, dv / safe, 0.0)
    sin_eta = np.sin(eta)
    rays = np.stack([sin_eta * nx, sin_eta * ny, np.cos(eta)], axis=-1)
    return rays, valid
