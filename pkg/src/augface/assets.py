"""Mesh and image file formats, and the bundled shape/blendshape assets.

Meshes use a subset of Wavefront OBJ: ``v x y z`` and ``f i j k`` lines
(1-based, ``i/vt/vn`` forms accepted, only the vertex index is kept); every
other line is ignored. Landmarks live in a sidecar text file with one
``slot vertex_index`` row per schema slot, ``slot`` being a slot name from
:data:`augface.landmarks.SLOT_NAMES`. The mirror map is not stored; it is
recovered by nearest-neighbour matching of x-mirrored vertices.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources
from pathlib import Path

import numpy as np
from PIL import Image
from scipy.spatial import cKDTree

from .geometry import Mesh
from .landmarks import N_SLOTS, SLOT_NAMES

DATA_PACKAGE = "augface.data"


def write_obj(path, vertices, triangles) -> None:
    lines = [f"v {x:.6f} {y:.6f} {z:.6f}" for x, y, z in np.asarray(vertices)]
    lines += [f"f {a + 1} {b + 1} {c + 1}" for a, b, c in np.asarray(triangles)]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_obj(path):
    verts, tris = [], []
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        fields = raw.split()
        if not fields:
            continue
        if fields[0] == "v":
            verts.append([float(x) for x in fields[1:4]])
        elif fields[0] == "f":
            idx = [int(f.split("/")[0]) for f in fields[1:]]
            if len(idx) != 3:
                raise ValueError(f"{path}: only triangular faces are supported")
            tris.append([i - 1 for i in idx])
    return np.array(verts, dtype=np.float64).reshape(-1, 3), np.array(tris, dtype=np.int64).reshape(-1, 3)


def write_landmark_map(path, landmark_map) -> None:
    rows = [f"{name} {int(v)}" for name, v in zip(SLOT_NAMES, landmark_map)]
    Path(path).write_text("\n".join(rows) + "\n", encoding="utf-8")


def read_landmark_map(path) -> np.ndarray:
    lookup = {name: i for i, name in enumerate(SLOT_NAMES)}
    out = np.full(N_SLOTS, -1, dtype=np.int64)
    for raw in Path(path).read_text(encoding="utf-8").splitlines():
        if not raw.strip() or raw.lstrip().startswith("#"):
            continue
        name, idx = raw.split()
        if name not in lookup:
            raise ValueError(f"{path}: unknown landmark slot {name!r}")
        out[lookup[name]] = int(idx)
    missing = [SLOT_NAMES[i] for i in np.flatnonzero(out < 0)]
    if missing:
        raise ValueError(f"{path}: landmark map is missing slots {missing[:5]}")
    return out


def mirror_map(vertices, tol=1e-3) -> np.ndarray | None:
    """Vertex involution under x -> -x, or None if the mesh is not symmetric."""
    v = np.asarray(vertices)
    mirrored = v * [-1.0, 1.0, 1.0]
    dist, idx = cKDTree(v).query(mirrored)
    scale = np.ptp(v, axis=0).max()
    if np.any(dist > tol * scale) or np.any(idx[idx] != np.arange(len(v))):
        return None
    return idx


def load_mesh(obj_path, landmark_path) -> Mesh:
    verts, tris = read_obj(obj_path)
    return Mesh(verts, tris, read_landmark_map(landmark_path), mirror_map(verts))


def save_mesh(mesh: Mesh, obj_path, landmark_path=None) -> None:
    write_obj(obj_path, mesh.vertices, mesh.triangles)
    if landmark_path is not None:
        write_landmark_map(landmark_path, mesh.landmark_map)


@dataclass(frozen=True)
class BlendshapeBasis:
    """Neutral mesh plus named displacement fields, coefficients in [0, 1]."""

    neutral: Mesh
    deltas: dict

    def __post_init__(self):
        for name, d in self.deltas.items():
            if np.shape(d) != self.neutral.vertices.shape:
                raise ValueError(f"delta {name!r} does not match the neutral vertex count")

    @property
    def names(self) -> tuple[str, ...]:
        return tuple(self.deltas)

    def shape(self, coefficients) -> Mesh:
        """Mesh for ``{name: coefficient}``; missing names count as 0."""
        v = self.neutral.vertices.copy()
        for name, c in coefficients.items():
            v += float(c) * self.deltas[name]
        return self.neutral.with_vertices(v)


def _data_dir() -> Path:
    return Path(str(resources.files(DATA_PACKAGE)))


@lru_cache(maxsize=None)
def load_shape_set(directory=None) -> tuple[Mesh, ...]:
    """The ten generic shapes ``shape_0.obj`` .. ``shape_9.obj`` + ``landmarks.txt``."""
    d = Path(directory) if directory is not None else _data_dir()
    lm = d / "landmarks.txt"
    shapes = tuple(load_mesh(d / f"shape_{i}.obj", lm) for i in range(10))
    n = {len(s.vertices) for s in shapes}
    if len(n) != 1 or any(not np.array_equal(s.triangles, shapes[0].triangles) for s in shapes):
        raise ValueError("shape set must share vertex count and topology")
    return shapes


@lru_cache(maxsize=None)
def load_basis(directory=None) -> BlendshapeBasis:
    """Blendshape basis: ``neutral.obj`` and one full-mesh OBJ per expression."""
    d = Path(directory) if directory is not None else _data_dir()
    neutral = load_mesh(d / "neutral.obj", d / "landmarks.txt")
    deltas = {}
    for name in ("mouth_open", "mouth_closed", "smile"):
        verts, _ = read_obj(d / f"{name}.obj")
        deltas[name] = verts - neutral.vertices
    return BlendshapeBasis(neutral, deltas)


def asset_hashes(directory=None) -> dict[str, str]:
    d = Path(directory) if directory is not None else _data_dir()
    return {p.name: hashlib.sha256(p.read_bytes()).hexdigest()[:16]
            for p in sorted(d.iterdir()) if p.suffix in (".obj", ".txt")}


# -- images ------------------------------------------------------------------

def read_image(path) -> np.ndarray:
    """8-bit gray or RGB PNG as float64 in [0, 1], shape (H, W) or (H, W, 3)."""
    with Image.open(path) as im:
        if im.mode.startswith(("L", "I", "1")):
            arr = np.asarray(im.convert("L"))
        else:
            arr = np.asarray(im.convert("RGB"))
    return arr.astype(np.float64) / 255.0


def to_uint8(image) -> np.ndarray:
    return np.clip(np.rint(np.asarray(image) * 255.0), 0, 255).astype(np.uint8)


def write_image(path, image, mask=None) -> None:
    """Write an image in [0, 1]; ``mask`` is stored as the alpha channel."""
    arr = to_uint8(image)
    if mask is not None:
        arr = np.dstack([arr, np.where(mask, 255, 0).astype(np.uint8)])
    Image.fromarray(arr).save(path, format="PNG")
