"""Canonical Manhattan-world directions and arrangement analysis.

Hosts the 14 labeled unit directions (6 axis points, 8 cube-corner diagonal
points), their nominal equirectangular label coordinates, the travel-direction
alignment relabeling, unique-axis counting, and the octahedral-symmetry checks
used to compare auxiliary point arrangements.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from enum import Enum

import numpy as np

_SQRT3 = math.sqrt(3.0)


class DegenerateArrangementError(ValueError):
    """An arrangement spans fewer than two distinct axes."""


class KeypointLabel(Enum):
    FRONT = "front"
    BACK = "back"
    LEFT = "left"
    RIGHT = "right"
    TOP = "top"
    BOTTOM = "bottom"
    FLT = "FLT"
    FRT = "FRT"
    FLB = "FLB"
    FRB = "FRB"
    BLT = "BLT"
    BRT = "BRT"
    BLB = "BLB"
    BRB = "BRB"

    @property
    def is_adp(self) -> bool:
        return self.value.isupper()

    @classmethod
    def from_string(cls, name: str) -> "KeypointLabel":
        for label in cls:
            if label.value.lower() == name.lower():
                return label
        raise ValueError(f"unknown keypoint label {name!r}")


ALL_LABELS: tuple[KeypointLabel, ...] = tuple(KeypointLabel)
# The estimator works with 13 labels; "back" only exists transiently before
# direction alignment.
USED_LABELS: tuple[KeypointLabel, ...] = tuple(
    l for l in KeypointLabel if l is not KeypointLabel.BACK
)

# Unit directions in Manhattan coordinates (X right, Y down, Z forward).
_DIRECTIONS: dict[KeypointLabel, np.ndarray] = {
    KeypointLabel.FRONT: np.array([0.0, 0.0, 1.0]),
    KeypointLabel.BACK: np.array([0.0, 0.0, -1.0]),
    KeypointLabel.LEFT: np.array([-1.0, 0.0, 0.0]),
    KeypointLabel.RIGHT: np.array([1.0, 0.0, 0.0]),
    KeypointLabel.TOP: np.array([0.0, -1.0, 0.0]),
    KeypointLabel.BOTTOM: np.array([0.0, 1.0, 0.0]),
    KeypointLabel.FLT: np.array([-1.0, -1.0, 1.0]) / _SQRT3,
    KeypointLabel.FRT: np.array([1.0, -1.0, 1.0]) / _SQRT3,
    KeypointLabel.FLB: np.array([-1.0, 1.0, 1.0]) / _SQRT3,
    KeypointLabel.FRB: np.array([1.0, 1.0, 1.0]) / _SQRT3,
    KeypointLabel.BLT: np.array([-1.0, -1.0, -1.0]) / _SQRT3,
    KeypointLabel.BRT: np.array([1.0, -1.0, -1.0]) / _SQRT3,
    KeypointLabel.BLB: np.array([-1.0, 1.0, -1.0]) / _SQRT3,
    KeypointLabel.BRB: np.array([1.0, 1.0, -1.0]) / _SQRT3,
}

ANTIPODES: dict[KeypointLabel, KeypointLabel] = {
    KeypointLabel.FRONT: KeypointLabel.BACK,
    KeypointLabel.BACK: KeypointLabel.FRONT,
    KeypointLabel.LEFT: KeypointLabel.RIGHT,
    KeypointLabel.RIGHT: KeypointLabel.LEFT,
    KeypointLabel.TOP: KeypointLabel.BOTTOM,
    KeypointLabel.BOTTOM: KeypointLabel.TOP,
    KeypointLabel.FLT: KeypointLabel.BRB,
    KeypointLabel.BRB: KeypointLabel.FLT,
    KeypointLabel.FRT: KeypointLabel.BLB,
    KeypointLabel.BLB: KeypointLabel.FRT,
    KeypointLabel.FLB: KeypointLabel.BRT,
    KeypointLabel.BRT: KeypointLabel.FLB,
    KeypointLabel.FRB: KeypointLabel.BLT,
    KeypointLabel.BLT: KeypointLabel.FRB,
}

# Antipodal pairs collapse onto 7 undirected axes.
_AXIS_INDEX: dict[KeypointLabel, int] = {
    KeypointLabel.FRONT: 0,
    KeypointLabel.BACK: 0,
    KeypointLabel.LEFT: 1,
    KeypointLabel.RIGHT: 1,
    KeypointLabel.TOP: 2,
    KeypointLabel.BOTTOM: 2,
    KeypointLabel.FLT: 3,
    KeypointLabel.BRB: 3,
    KeypointLabel.FRT: 4,
    KeypointLabel.BLB: 4,
    KeypointLabel.FLB: 5,
    KeypointLabel.BRT: 5,
    KeypointLabel.FRB: 6,
    KeypointLabel.BLT: 6,
}

# 180-degree rotation about the vertical axis: X -> -X, Z -> -Z.
ALIGNMENT_SWAP: dict[KeypointLabel, KeypointLabel] = {
    KeypointLabel.FRONT: KeypointLabel.BACK,
    KeypointLabel.BACK: KeypointLabel.FRONT,
    KeypointLabel.LEFT: KeypointLabel.RIGHT,
    KeypointLabel.RIGHT: KeypointLabel.LEFT,
    KeypointLabel.TOP: KeypointLabel.TOP,
    KeypointLabel.BOTTOM: KeypointLabel.BOTTOM,
    KeypointLabel.FLT: KeypointLabel.BRT,
    KeypointLabel.BRT: KeypointLabel.FLT,
    KeypointLabel.FLB: KeypointLabel.BRB,
    KeypointLabel.BRB: KeypointLabel.FLB,
    KeypointLabel.FRT: KeypointLabel.BLT,
    KeypointLabel.BLT: KeypointLabel.FRT,
    KeypointLabel.FRB: KeypointLabel.BLB,
    KeypointLabel.BLB: KeypointLabel.FRB,
}

# Nominal label coordinates on a W x H equirectangular panorama, as fractions
# of (W, H). The axis-point rows are the exact equirectangular images of their
# directions; the diagonal-point rows are the grid midpoints of the
# neighbouring axis-point coordinates, i.e. label positions, not projections.
_PANORAMA_COORD: dict[KeypointLabel, tuple[float, float]] = {
    KeypointLabel.FRONT: (1 / 2, 1 / 2),
    KeypointLabel.BACK: (0.0, 1 / 2),
    KeypointLabel.LEFT: (1 / 4, 1 / 2),
    KeypointLabel.RIGHT: (3 / 4, 1 / 2),
    KeypointLabel.TOP: (0.0, 0.0),
    KeypointLabel.BOTTOM: (0.0, 1.0),
    KeypointLabel.FLT: (3 / 8, 1 / 4),
    KeypointLabel.FRT: (5 / 8, 1 / 4),
    KeypointLabel.FLB: (3 / 8, 3 / 4),
    KeypointLabel.FRB: (5 / 8, 3 / 4),
    KeypointLabel.BLT: (1 / 8, 1 / 4),
    KeypointLabel.BRT: (7 / 8, 1 / 4),
    KeypointLabel.BLB: (1 / 8, 3 / 4),
    KeypointLabel.BRB: (7 / 8, 3 / 4),
}

VP_DIRECTIONS = np.stack(
    [
        _DIRECTIONS[l]
        for l in (
            KeypointLabel.FRONT,
            KeypointLabel.BACK,
            KeypointLabel.LEFT,
            KeypointLabel.RIGHT,
            KeypointLabel.TOP,
            KeypointLabel.BOTTOM,
        )
    ]
)


@dataclass(frozen=True)
class Detection:
    """One labeled image point with a confidence score."""

    label: KeypointLabel
    u: float
    v: float
    score: float = 1.0

    def to_dict(self) -> dict:
        return {"label": self.label.value, "u": self.u, "v": self.v, "score": self.score}

    @classmethod
    def from_dict(cls, d: dict) -> "Detection":
        return cls(
            label=KeypointLabel.from_string(d["label"]),
            u=float(d["u"]),
            v=float(d["v"]),
            score=float(d.get("score", 1.0)),
        )


def direction_of(label: KeypointLabel) -> np.ndarray:
    """Unit direction of a label in Manhattan coordinates (copy)."""
    return _DIRECTIONS[label].copy()


def panorama_coord(label: KeypointLabel, width: int, height: int) -> tuple[float, float]:
    """Nominal (x, y) label coordinate on an equirectangular panorama."""
    if width != 2 * height:
        raise ValueError("equirectangular panoramas require width == 2 * height")
    fx, fy = _PANORAMA_COORD[label]
    return fx * width, fy * height


def alignment_applies(labels) -> bool:
    """Whether the travel-direction relabeling fires for a visible label set.

    Condition 1: back labels present without front labels. Condition 2: right
    labels present without front and left labels.
    """
    labels = set(labels)
    if KeypointLabel.BACK in labels and KeypointLabel.FRONT not in labels:
        return True
    if (
        KeypointLabel.RIGHT in labels
        and KeypointLabel.FRONT not in labels
        and KeypointLabel.LEFT not in labels
    ):
        return True
    return False


def align_directions(labels) -> tuple[set[KeypointLabel], bool]:
    """Apply the 180-degree vertical-axis relabeling when a condition fires."""
    labels = set(labels)
    if alignment_applies(labels):
        return {ALIGNMENT_SWAP[l] for l in labels}, True
    return labels, False


def count_unique_axes(labels) -> int:
    """Number of distinct antipodal axis classes covered by the labels."""
    return len({_AXIS_INDEX[l] for l in labels})


def axis_index(label: KeypointLabel) -> int:
    return _AXIS_INDEX[label]


@dataclass(frozen=True)
class Arrangement:
    """A named set of auxiliary unit directions evaluated together with the
    six axis points."""

    name: str
    auxiliary: np.ndarray  # (n, 3)

    def directions(self) -> np.ndarray:
        return np.vstack([self.auxiliary, VP_DIRECTIONS])


def _collapse_axes(directions: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Group antipodal/duplicate directions into undirected axis representatives."""
    axes: list[np.ndarray] = []
    for d in np.asarray(directions, dtype=float):
        n = np.linalg.norm(d)
        if n < tol:
            raise ValueError("zero vector in arrangement")
        d = d / n
        if not any(abs(abs(float(a @ d)) - 1.0) < tol for a in axes):
            axes.append(d)
    return np.asarray(axes)


def min_axis_angle(arrangement: Arrangement | np.ndarray) -> float:
    """Minimum pairwise angle between undirected axes, in degrees [0, 90]."""
    dirs = (
        arrangement.directions()
        if isinstance(arrangement, Arrangement)
        else np.asarray(arrangement, dtype=float)
    )
    axes = _collapse_axes(dirs)
    if len(axes) < 2:
        raise DegenerateArrangementError("arrangement spans fewer than two axes")
    dots = np.abs(axes @ axes.T)
    np.fill_diagonal(dots, 0.0)
    return math.degrees(math.acos(np.clip(dots.max(), 0.0, 1.0)))


def octahedral_rotations() -> list[np.ndarray]:
    """The 24 rotations of the octahedral group, from 90-degree generators."""
    rx = np.array([[1, 0, 0], [0, 0, -1], [0, 1, 0]])
    ry = np.array([[0, 0, 1], [0, 1, 0], [-1, 0, 0]])
    seen = {np.eye(3, dtype=int).tobytes(): np.eye(3, dtype=int)}
    frontier = [np.eye(3, dtype=int)]
    while frontier:
        nxt = []
        for m in frontier:
            for g in (rx, ry):
                cand = g @ m
                key = cand.tobytes()
                if key not in seen:
                    seen[key] = cand
                    nxt.append(cand)
        frontier = nxt
    rotations = list(seen.values())
    assert len(rotations) == 24
    return rotations


def verify_octahedral_symmetry(arrangement: Arrangement | np.ndarray, tol: float = 1e-9) -> bool:
    """True iff the direction set is invariant under the 24 octahedral rotations."""
    dirs = (
        arrangement.directions()
        if isinstance(arrangement, Arrangement)
        else np.asarray(arrangement, dtype=float)
    )
    for rot in octahedral_rotations():
        mapped = dirs @ rot.T.astype(float)
        # every mapped direction must coincide with some original one
        dists = np.linalg.norm(mapped[:, None, :] - dirs[None, :, :], axis=-1)
        if np.any(dists.min(axis=1) > tol):
            return False
    return True


def _edge_midpoint_directions() -> np.ndarray:
    """The 12 normalized (+-1, +-1, 0)-pattern directions."""
    out = []
    for i, j in ((0, 1), (0, 2), (1, 2)):
        for si in (1.0, -1.0):
            for sj in (1.0, -1.0):
                v = np.zeros(3)
                v[i] = si
                v[j] = sj
                out.append(v / math.sqrt(2.0))
    return np.asarray(out)


def builtin_arrangements() -> dict[str, Arrangement]:
    """Named auxiliary-point candidates analysed by the toolkit.

    The two 12-point candidates (axis-angle bisectors, cube edge midpoints)
    resolve to the same direction set; both names stay addressable.
    """
    adp = np.stack([_DIRECTIONS[l] for l in USED_LABELS if l.is_adp])
    edge12 = _edge_midpoint_directions()
    return {
        "ADP-8": Arrangement("ADP-8", adp),
        "C4-based-12": Arrangement("C4-based-12", edge12),
        "C2-based-12": Arrangement("C2-based-12", edge12.copy()),
    }


def load_arrangement(path: str, name: str | None = None) -> Arrangement:
    """Load an auxiliary arrangement from a JSON list of unit 3-vectors."""
    with open(path, "r", encoding="utf-8") as fh:
        raw = json.load(fh)
    arr = np.asarray(raw, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ValueError("arrangement file must hold a list of 3-vectors")
    norms = np.linalg.norm(arr, axis=1)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise ValueError("arrangement vectors must be unit length")
    return Arrangement(name or path, arr / norms[:, None])
