"""2D landmark sets and the 68-point slot schema.

Slot order follows the common 68-point face annotation layout: jaw contour
(0-16), brows (17-26), nose bridge and base (27-35), eyes (36-47), outer lip
(48-59) and inner lip (60-67). "right" and "left" refer to the subject, so
right-side slots sit at smaller image u on a frontal face.

Landmark file format (UTF-8, whitespace separated)::

    schema=ibug68
    0 101.25 140.0 1
    1 102.5 152.75 1
    ...

one ``index u v visible`` row per slot; missing rows are read as invisible.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

SCHEMA_NAME = "ibug68"


def _slot_names() -> list[str]:
    names = [f"jaw_{i:02d}" for i in range(17)]
    names += [f"rbrow_{i}" for i in range(5)]
    names += [f"lbrow_{i}" for i in range(5)]
    names += [f"nose_bridge_{i}" for i in range(4)]
    names += [f"nose_base_{i}" for i in range(5)]
    names += [f"reye_{i}" for i in range(6)]
    names += [f"leye_{i}" for i in range(6)]
    names += [f"mouth_outer_{i:02d}" for i in range(12)]
    names += [f"mouth_inner_{i}" for i in range(8)]
    return names


SLOT_NAMES: tuple[str, ...] = tuple(_slot_names())
N_SLOTS = len(SLOT_NAMES)

NOSE_TIP = 30
RIGHT_EYE = tuple(range(36, 42))
LEFT_EYE = tuple(range(42, 48))
MOUTH = tuple(range(48, 68))
# Jaw slots below the ears follow the mandible when the mouth opens.
LOWER_JAW = tuple(range(4, 13))

# Nine slots of the frontal alignment template: outer and inner eye corners,
# nose tip, nose base centre, mouth corners and chin.
FRONTAL9 = (36, 39, 42, 45, 30, 33, 48, 54, 8)

# Slots that stay put under every expression delta; used for rigid pose.
RIGID = tuple(i for i in range(N_SLOTS) if i not in MOUTH and i not in LOWER_JAW)


@dataclass(frozen=True)
class LandmarkSet2D:
    """Ordered 2D landmarks with per-slot visibility.

    ``points`` is ``(N_SLOTS, 2)`` in pixel ``(u, v)``; invisible slots may hold
    any finite placeholder.
    """

    points: np.ndarray
    visible: np.ndarray
    schema: str = SCHEMA_NAME

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=np.float64)
        vis = np.asarray(self.visible, dtype=bool)
        if pts.shape != (N_SLOTS, 2):
            raise ValueError(f"expected {N_SLOTS}x2 points for {self.schema}, got {pts.shape}")
        if vis.shape != (N_SLOTS,):
            raise ValueError("visibility must have one flag per slot")
        if not np.all(np.isfinite(pts)):
            raise ValueError("landmark coordinates must be finite")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "visible", vis)

    @classmethod
    def from_points(cls, points, visible=None) -> "LandmarkSet2D":
        points = np.asarray(points, dtype=np.float64)
        if visible is None:
            visible = np.ones(len(points), dtype=bool)
        return cls(points, visible)

    def subset(self, slots) -> "LandmarkSet2D":
        """Copy with only ``slots`` kept visible."""
        keep = np.zeros(N_SLOTS, dtype=bool)
        keep[list(slots)] = True
        return LandmarkSet2D(self.points, self.visible & keep, self.schema)

    def translated(self, offset) -> "LandmarkSet2D":
        return LandmarkSet2D(self.points + np.asarray(offset, dtype=np.float64), self.visible, self.schema)

    @property
    def n_visible(self) -> int:
        return int(self.visible.sum())


def read_landmarks(path) -> LandmarkSet2D:
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln.strip() for ln in text.splitlines() if ln.strip() and not ln.lstrip().startswith("#")]
    if not lines or not lines[0].startswith("schema="):
        raise ValueError(f"{path}: first line must be 'schema=<name>'")
    schema = lines[0].split("=", 1)[1].strip()
    if schema != SCHEMA_NAME:
        raise ValueError(f"{path}: unsupported landmark schema {schema!r}")
    points = np.zeros((N_SLOTS, 2))
    visible = np.zeros(N_SLOTS, dtype=bool)
    for ln in lines[1:]:
        fields = ln.split()
        if len(fields) != 4:
            raise ValueError(f"{path}: bad landmark row {ln!r}")
        idx = int(fields[0])
        if not 0 <= idx < N_SLOTS:
            raise ValueError(f"{path}: slot index {idx} out of range")
        points[idx] = float(fields[1]), float(fields[2])
        visible[idx] = fields[3] not in ("0", "false", "False")
    return LandmarkSet2D(points, visible, schema)


def write_landmarks(path, landmarks: LandmarkSet2D) -> None:
    rows = [f"schema={landmarks.schema}"]
    for i, ((u, v), vis) in enumerate(zip(landmarks.points, landmarks.visible)):
        rows.append(f"{i} {u:.6f} {v:.6f} {int(vis)}")
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")
