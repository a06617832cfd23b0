"""Rotation recovery from labeled direction correspondences.

The attitude fit uses the Gibbs-vector identity
(observed - reference) = g x (observed + reference), which turns the
least-squares absolute-orientation problem into one 3x3 linear solve, with
no eigen or singular value decomposition on the happy path. The Gibbs vector
converts to a unit quaternion and on to a rotation matrix.

Euler factorization follows the repo convention
R = R_Y(pan) @ R_X(tilt) @ R_Z(roll), where R maps Manhattan-frame vectors
into the camera frame. All public Euler angles are degrees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from . import camera
from .camera import CameraParams, OutOfFovError
from .manhattan import Detection, KeypointLabel, count_unique_axes, direction_of

COND_LIMIT = 1e8


class IllConditionedError(RuntimeError):
    """The OLAE normal matrix is numerically singular (near-180-degree
    rotation or collinear axes)."""


class NearParallelError(ValueError):
    """Two correspondences subtend too small an angle to span a second axis."""


def skew(v: np.ndarray) -> np.ndarray:
    x, y, z = v
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def _unit(v: np.ndarray) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    n = np.linalg.norm(v)
    if n < 1e-12:
        raise ValueError("cannot normalize a zero vector")
    return v / n


@dataclass(frozen=True)
class Correspondence:
    """A backprojected observation paired with its reference direction."""

    observed: np.ndarray  # unit ray, camera frame
    reference: np.ndarray  # unit direction, Manhattan frame

    def __post_init__(self) -> None:
        object.__setattr__(self, "observed", _unit(self.observed))
        object.__setattr__(self, "reference", _unit(self.reference))


@dataclass
class EulerPTR:
    """Pan/tilt/roll angles in degrees.

    Under the aligned Manhattan convention pan stays within [-90, 90]; the
    type itself accepts any value so synthetic rotations can roam freely.
    """

    pan: float
    tilt: float
    roll: float

    def to_dict(self) -> dict:
        return {"pan": self.pan, "tilt": self.tilt, "roll": self.roll}

    @classmethod
    def from_dict(cls, d: dict) -> "EulerPTR":
        return cls(pan=float(d["pan"]), tilt=float(d["tilt"]), roll=float(d["roll"]))


def _olae_system(observed: np.ndarray, reference: np.ndarray, weights: np.ndarray):
    s = observed + reference
    d = observed - reference
    ss = (s * s).sum(axis=1)
    normal = (
        weights[:, None, None]
        * (ss[:, None, None] * np.eye(3)[None] - s[:, :, None] * s[:, None, :])
    ).sum(axis=0)
    rhs = (weights[:, None] * np.cross(s, d)).sum(axis=0)
    return normal, rhs


def olae_fit(observed, reference, weights=None) -> np.ndarray:
    """Gibbs vector minimizing sum w_i * |d_i - g x s_i|^2.

    Here s_i = observed_i + reference_i and d_i = observed_i - reference_i;
    the minimizer solves one 3x3 linear system. Raises IllConditionedError
    when the normal matrix condition number exceeds COND_LIMIT, which happens
    near 180-degree rotations or when all summed directions are collinear.
    """
    observed = np.atleast_2d(np.asarray(observed, dtype=float))
    reference = np.atleast_2d(np.asarray(reference, dtype=float))
    if observed.shape != reference.shape:
        raise ValueError("observed and reference must have matching shapes")
    n = observed.shape[0]
    if weights is None:
        weights = np.ones(n)
    else:
        weights = np.asarray(weights, dtype=float)
        if weights.shape != (n,):
            raise ValueError("weights must be one scalar per correspondence")
        if np.any(weights < 0.0):
            raise ValueError("weights must be non-negative")
    normal, rhs = _olae_system(observed, reference, weights)
    cond = np.linalg.cond(normal)
    if not np.isfinite(cond) or cond > COND_LIMIT:
        raise IllConditionedError(f"normal matrix condition number {cond:.3e}")
    return np.linalg.solve(normal, rhs)


def rodrigues_to_quaternion(g: np.ndarray) -> np.ndarray:
    """Unit quaternion (x, y, z, w) from a Gibbs vector: (g, 1) normalized."""
    g = np.asarray(g, dtype=float)
    q = np.array([g[0], g[1], g[2], 1.0])
    return q / math.sqrt(float(g @ g) + 1.0)


def quaternion_to_matrix(q: np.ndarray) -> np.ndarray:
    """Rotation matrix from a unit quaternion (x, y, z, w)."""
    q = np.asarray(q, dtype=float)
    if abs(np.linalg.norm(q) - 1.0) > 1e-9:
        raise ValueError("quaternion must be unit length")
    x, y, z, w = q
    ax, ay, az, aw = 2 * x * x, 2 * y * y, 2 * z * z, 2 * w * w
    axy, ayz, azw, awx = 2 * x * y, 2 * y * z, 2 * z * w, 2 * w * x
    axz, ayw = 2 * x * z, 2 * y * w
    return np.array(
        [
            [aw + ax - 1.0, axy - azw, axz + ayw],
            [axy + azw, aw + ay - 1.0, ayz - awx],
            [axz - ayw, ayz + awx, aw + az - 1.0],
        ]
    )


def matrix_to_quaternion(rot: np.ndarray) -> np.ndarray:
    """Unit quaternion (x, y, z, w) with w >= 0 from a rotation matrix."""
    rot = np.asarray(rot, dtype=float)
    t = np.trace(rot)
    if t > 0.0:
        s = math.sqrt(t + 1.0) * 2.0
        w = 0.25 * s
        x = (rot[2, 1] - rot[1, 2]) / s
        y = (rot[0, 2] - rot[2, 0]) / s
        z = (rot[1, 0] - rot[0, 1]) / s
    elif rot[0, 0] >= rot[1, 1] and rot[0, 0] >= rot[2, 2]:
        s = math.sqrt(1.0 + rot[0, 0] - rot[1, 1] - rot[2, 2]) * 2.0
        w = (rot[2, 1] - rot[1, 2]) / s
        x = 0.25 * s
        y = (rot[0, 1] + rot[1, 0]) / s
        z = (rot[0, 2] + rot[2, 0]) / s
    elif rot[1, 1] >= rot[2, 2]:
        s = math.sqrt(1.0 + rot[1, 1] - rot[0, 0] - rot[2, 2]) * 2.0
        w = (rot[0, 2] - rot[2, 0]) / s
        x = (rot[0, 1] + rot[1, 0]) / s
        y = 0.25 * s
        z = (rot[1, 2] + rot[2, 1]) / s
    else:
        s = math.sqrt(1.0 + rot[2, 2] - rot[0, 0] - rot[1, 1]) * 2.0
        w = (rot[1, 0] - rot[0, 1]) / s
        x = (rot[0, 2] + rot[2, 0]) / s
        y = (rot[1, 2] + rot[2, 1]) / s
        z = 0.25 * s
    q = np.array([x, y, z, w])
    q /= np.linalg.norm(q)
    if q[3] < 0.0 or (q[3] == 0.0 and q[np.argmax(np.abs(q[:3]))] < 0.0):
        q = -q
    return q


def gibbs_from_quaternion(q: np.ndarray) -> np.ndarray | None:
    """Gibbs vector q_xyz / q_w; None at the 180-degree singularity."""
    q = np.asarray(q, dtype=float)
    if abs(q[3]) < 1e-12:
        return None
    return q[:3] / q[3]


def rot_x(rad: float) -> np.ndarray:
    c, s = math.cos(rad), math.sin(rad)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def rot_y(rad: float) -> np.ndarray:
    c, s = math.cos(rad), math.sin(rad)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def rot_z(rad: float) -> np.ndarray:
    c, s = math.cos(rad), math.sin(rad)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def euler_to_matrix(euler: EulerPTR) -> np.ndarray:
    """World-to-camera matrix R_Y(pan) @ R_X(tilt) @ R_Z(roll)."""
    return (
        rot_y(math.radians(euler.pan))
        @ rot_x(math.radians(euler.tilt))
        @ rot_z(math.radians(euler.roll))
    )


def wrap_deg(a: float) -> float:
    """Wrap an angle to (-180, 180]."""
    a = (a + 180.0) % 360.0 - 180.0
    return 180.0 if a == -180.0 else a


def angle_diff_deg(a: float, b: float) -> float:
    """Absolute circular difference in degrees, in [0, 180]."""
    return abs(wrap_deg(a - b))


def matrix_to_euler(rot: np.ndarray, reference: EulerPTR | None = None):
    """Factor R into pan/tilt/roll degrees.

    Of the two Euler branches the one with |tilt| <= 90 is returned, unless a
    reference is given, in which case the branch minimizing the mean absolute
    circular difference to it wins. Returns (EulerPTR, gimbal_degenerate):
    near the tilt = +-90 degeneracy roll is set to 0 and absorbed into pan.
    """
    rot = np.asarray(rot, dtype=float)
    cos_t = math.hypot(rot[1, 0], rot[1, 1])
    if cos_t < 1e-7:
        sin_t = -rot[1, 2]
        tilt = math.copysign(90.0, sin_t)
        if sin_t > 0.0:
            pan = math.degrees(math.atan2(rot[0, 1], rot[0, 0]))
        else:
            pan = math.degrees(math.atan2(-rot[0, 1], rot[0, 0]))
        return EulerPTR(pan, tilt, 0.0), True

    tilt_a = math.degrees(math.atan2(-rot[1, 2], cos_t))
    pan_a = math.degrees(math.atan2(rot[0, 2], rot[2, 2]))
    roll_a = math.degrees(math.atan2(rot[1, 0], rot[1, 1]))
    branch_a = EulerPTR(pan_a, tilt_a, roll_a)
    if reference is None:
        return branch_a, False

    tilt_b = math.degrees(math.atan2(-rot[1, 2], -cos_t))
    branch_b = EulerPTR(wrap_deg(pan_a + 180.0), tilt_b, wrap_deg(roll_a + 180.0))
    def cost(e: EulerPTR) -> float:
        return (
            angle_diff_deg(e.pan, reference.pan)
            + angle_diff_deg(e.tilt, reference.tilt)
            + angle_diff_deg(e.roll, reference.roll)
        ) / 3.0
    return (branch_a, False) if cost(branch_a) <= cost(branch_b) else (branch_b, False)


@dataclass(frozen=True)
class Rotation:
    """One rotation in three consistent encodings.

    The Gibbs vector is None at the 180-degree singularity where it is
    undefined; quaternion and matrix always exist.
    """

    matrix: np.ndarray
    quaternion: np.ndarray
    gibbs: np.ndarray | None

    @classmethod
    def identity(cls) -> "Rotation":
        return cls(np.eye(3), np.array([0.0, 0.0, 0.0, 1.0]), np.zeros(3))

    @classmethod
    def from_gibbs(cls, g) -> "Rotation":
        g = np.asarray(g, dtype=float)
        q = rodrigues_to_quaternion(g)
        return cls(quaternion_to_matrix(q), q, g)

    @classmethod
    def from_quaternion(cls, q) -> "Rotation":
        q = np.asarray(q, dtype=float)
        q = q / np.linalg.norm(q)
        if q[3] < 0.0:
            q = -q
        return cls(quaternion_to_matrix(q), q, gibbs_from_quaternion(q))

    @classmethod
    def from_matrix(cls, rot) -> "Rotation":
        rot = np.asarray(rot, dtype=float)
        if np.max(np.abs(rot.T @ rot - np.eye(3))) > 1e-6 or np.linalg.det(rot) < 0.0:
            raise ValueError("not a proper rotation matrix")
        q = matrix_to_quaternion(rot)
        return cls(rot, q, gibbs_from_quaternion(q))

    @classmethod
    def from_euler(cls, euler: EulerPTR) -> "Rotation":
        return cls.from_matrix(euler_to_matrix(euler))

    def euler(self, reference: EulerPTR | None = None) -> EulerPTR:
        return matrix_to_euler(self.matrix, reference)[0]


def _orthogonal_max_z(v: np.ndarray) -> np.ndarray:
    """Unit vector orthogonal to v with maximal Z component; ties toward +X."""
    v = _unit(v)
    z = np.array([0.0, 0.0, 1.0])
    cand = z - (z @ v) * v
    n = np.linalg.norm(cand)
    if n > 1e-9:
        return cand / n
    x = np.array([1.0, 0.0, 0.0])
    cand = x - (x @ v) * v
    return cand / np.linalg.norm(cand)


def minimal_rotation(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Smallest-angle rotation taking unit vector a onto unit vector b."""
    a = _unit(a)
    b = _unit(b)
    v = np.cross(a, b)
    c = float(a @ b)
    s2 = float(v @ v)
    if s2 < 1e-24:
        if c > 0.0:
            return np.eye(3)
        axis = _orthogonal_max_z(a)
        return 2.0 * np.outer(axis, axis) - np.eye(3)
    vx = skew(v)
    return np.eye(3) + vx + vx @ vx * ((1.0 - c) / s2)


@dataclass
class DegenerateInfo:
    """How the correspondence set was augmented before fitting."""

    case: str  # "none" | "two_point" | "one_point" | "zero_point"
    zero_angle: str | None = None  # "pan" | "tilt" | "roll" for one_point
    identity: bool = False


def _zero_angle_for(reference: np.ndarray) -> str:
    # The Euler axis most aligned with the point's axis is the one the data
    # cannot constrain; ties break roll > tilt > pan.
    comps = [abs(reference[2]), abs(reference[0]), abs(reference[1])]
    return ("roll", "tilt", "pan")[int(np.argmax(comps))]


def augment_degenerate(correspondences: list[Correspondence]):
    """Augment 0-, 1- and 2-point correspondence sets per the fallback rules.

    Two points: append the normalized cross-product pair. One point: append a
    temporal reference point orthogonal to the reference direction (maximal
    Z component, ties toward +X), carried to the observed side by the minimal
    rotation between the pair, then the cross-product pair; the returned info
    names the Euler angle that must be zeroed afterwards. Zero points: flag
    the identity.
    """
    corrs = list(correspondences)
    n = len(corrs)
    if n == 0:
        return [], DegenerateInfo("zero_point", identity=True)
    if n == 1:
        c = corrs[0]
        t_ref = _orthogonal_max_z(c.reference)
        t_obs = minimal_rotation(c.reference, c.observed) @ t_ref
        out = [
            c,
            Correspondence(t_obs, t_ref),
            Correspondence(np.cross(c.observed, t_obs), np.cross(c.reference, t_ref)),
        ]
        return out, DegenerateInfo("one_point", zero_angle=_zero_angle_for(c.reference))
    if n == 2:
        a, b = corrs
        cross_obs = np.cross(a.observed, b.observed)
        cross_ref = np.cross(a.reference, b.reference)
        if np.linalg.norm(cross_obs) < 1e-6 or np.linalg.norm(cross_ref) < 1e-6:
            raise NearParallelError("the two correspondences are nearly parallel")
        return corrs + [Correspondence(cross_obs, cross_ref)], DegenerateInfo("two_point")
    return corrs, DegenerateInfo("none")


def procrustes_fit(observed, reference, weights=None) -> np.ndarray:
    """Orthogonal-Procrustes rotation maximizing sum w_i * obs_i . R ref_i.

    SVD-based fallback for the Gibbs singularity near 180 degrees.
    """
    observed = np.atleast_2d(np.asarray(observed, dtype=float))
    reference = np.atleast_2d(np.asarray(reference, dtype=float))
    if weights is None:
        weights = np.ones(observed.shape[0])
    b = (weights[:, None, None] * observed[:, :, None] * reference[:, None, :]).sum(axis=0)
    u, _, vt = np.linalg.svd(b)
    d = np.diag([1.0, 1.0, float(np.linalg.det(u @ vt))])
    return u @ d @ vt


@dataclass
class RotationEstimate:
    rotation: Rotation
    euler: EulerPTR
    diagnostics: dict


def estimate_rotation(
    detections: list[Detection],
    params: CameraParams,
    min_score: float = 0.0,
) -> RotationEstimate:
    """Full rotation recovery from labeled pixel detections.

    Backprojects each detection into a unit ray, pairs it with the canonical
    direction of its label, applies the degenerate-case augmentation, fits
    the Gibbs vector and converts to quaternion/matrix/Euler form. Sets with
    fewer than two distinct axes cannot pin every angle; the unconstrained
    ones are reported as 0.

    Raises OutOfFovError (with the offending label in the message) when a
    detection cannot be backprojected.
    """
    used = [d for d in detections if d.score >= min_score]
    diagnostics: dict = {
        "n_detections": len(detections),
        "n_used": len(used),
        "unique_axes": count_unique_axes(d.label for d in used),
        "degenerate_case": "none",
        "zeroed_angle": None,
        "condition_number": None,
        "solver": None,
        "gimbal_degenerate": False,
    }

    corrs: list[Correspondence] = []
    for det in used:
        try:
            ray = camera.backproject((det.u, det.v), params)
        except OutOfFovError as exc:
            raise OutOfFovError(
                f"detection {det.label.value!r} at ({det.u:.2f}, {det.v:.2f}): {exc}"
            ) from exc
        corrs.append(Correspondence(ray, direction_of(det.label)))

    if diagnostics["unique_axes"] <= 1 and len(corrs) > 1:
        # Multiple points on one axis constrain no more than a single point.
        best = max(
            range(len(used)),
            key=lambda i: (used[i].score, -list(KeypointLabel).index(used[i].label)),
        )
        corrs = [corrs[best]]

    corrs, info = augment_degenerate(corrs)
    diagnostics["degenerate_case"] = info.case
    diagnostics["zeroed_angle"] = info.zero_angle

    if info.identity:
        diagnostics["solver"] = "identity"
        return RotationEstimate(Rotation.identity(), EulerPTR(0.0, 0.0, 0.0), diagnostics)

    observed = np.stack([c.observed for c in corrs])
    reference = np.stack([c.reference for c in corrs])
    normal, _ = _olae_system(observed, reference, np.ones(len(corrs)))
    diagnostics["condition_number"] = float(np.linalg.cond(normal))
    try:
        g = olae_fit(observed, reference)
        rotation = Rotation.from_gibbs(g)
        diagnostics["solver"] = "olae"
    except IllConditionedError:
        rotation = Rotation.from_matrix(procrustes_fit(observed, reference))
        diagnostics["solver"] = "procrustes"

    euler, gimbal = matrix_to_euler(rotation.matrix)
    diagnostics["gimbal_degenerate"] = gimbal
    if info.zero_angle is not None:
        euler = replace(euler, **{info.zero_angle: 0.0})
        rotation = Rotation.from_euler(euler)
    return RotationEstimate(rotation, euler, diagnostics)


def rotation_matrix_of(rotation) -> np.ndarray:
    """Coerce an EulerPTR, Rotation, Extrinsics or 3x3 array to a matrix."""
    if isinstance(rotation, EulerPTR):
        return euler_to_matrix(rotation)
    if isinstance(rotation, Rotation):
        return rotation.matrix
    mat = getattr(rotation, "rotation", rotation)
    mat = getattr(mat, "matrix", mat)
    return np.asarray(mat, dtype=float)


def geodesic_angle(rot_a: np.ndarray, rot_b: np.ndarray) -> float:
    """Geodesic distance between two rotation matrices, radians.

    Uses |R_rel - I|_F = 2*sqrt(2)*|sin(theta/2)|, which stays accurate down
    to zero where the acos-of-trace form loses eight digits.
    """
    rel = np.asarray(rot_a, dtype=float).T @ np.asarray(rot_b, dtype=float)
    half_sin = np.linalg.norm(rel - np.eye(3)) / (2.0 * math.sqrt(2.0))
    return 2.0 * math.asin(min(1.0, half_sin))
