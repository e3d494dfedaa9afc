"""Procedural generic heads and the expression blendshape basis.

All heads share one parametric grid over (azimuth, elevation) so they have
identical vertex count, topology and landmark map; a landmark picked once on
the grid transfers to every shape. Shapes vary in head proportions, nose,
brow, lips and chin. Units are millimetres.

The blendshape basis is built on the reference shape (id 0) with three
displacement fields: ``mouth_open``, ``mouth_closed`` and ``smile``. It is a
small hand-made basis, not a scanned one.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Mesh
from .landmarks import N_SLOTS

AZIMUTH = np.linspace(-100.0, 100.0, 61)
ELEVATION = np.linspace(-65.0, 70.0, 55)
N_SHAPES = 10
EXPRESSIONS = ("mouth_open", "mouth_closed", "smile")


def _landmark_angles() -> np.ndarray:
    """(azimuth, elevation) in degrees for each of the 68 slots."""
    pts = []
    for a in np.linspace(-90.0, 90.0, 17):
        pts.append((75.0 * np.sin(np.deg2rad(a)), 5.0 - 65.0 * np.cos(np.deg2rad(a))))
    brow = [(-38, 22), (-31, 25), (-23, 26.5), (-15, 25), (-8, 22.5)]
    pts += brow
    pts += [(-x, y) for x, y in reversed(brow)]
    pts += [(0, 17.5), (0, 10), (0, 2.5), (0, -10)]
    pts += [(-10, -17.5), (-5, -17.5), (0, -17.5), (5, -17.5), (10, -17.5)]
    reye = [(-32, 12.5), (-25, 15), (-18, 15), (-12, 12.5), (-18, 10), (-25, 10)]
    pts += reye
    # left eye listed inner corner first, mirrored order
    pts += [(12, 12.5), (18, 15), (25, 15), (32, 12.5), (25, 10), (18, 10)]
    pts += [(-19.5, -32.5), (-12, -30), (-5, -27.5), (0, -27.5), (5, -27.5), (12, -30),
            (19.5, -32.5), (12, -35), (5, -37.5), (0, -37.5), (-5, -37.5), (-12, -35)]
    pts += [(-13.5, -32.5), (-5, -30), (0, -30), (5, -30), (13.5, -32.5), (5, -32.5),
            (0, -32.5), (-5, -32.5)]
    out = np.array(pts, dtype=np.float64)
    assert len(out) == N_SLOTS
    return out


def _grid_topology():
    na, ne = len(AZIMUTH), len(ELEVATION)
    idx = np.arange(na * ne).reshape(ne, na)
    a = idx[:-1, :-1].ravel()
    b = idx[:-1, 1:].ravel()
    c = idx[1:, :-1].ravel()
    d = idx[1:, 1:].ravel()
    tris = np.concatenate([np.stack([a, b, d], 1), np.stack([a, d, c], 1)])
    sym = idx[:, ::-1].ravel()
    lm_angles = _landmark_angles()
    ia = np.abs(AZIMUTH[None, :] - lm_angles[:, :1]).argmin(axis=1)
    ie = np.abs(ELEVATION[None, :] - lm_angles[:, 1:]).argmin(axis=1)
    landmark_map = idx[ie, ia]
    return tris, sym, landmark_map


def grid_angles():
    """Per-vertex (azimuth, elevation) in degrees, grid order."""
    A, E = np.meshgrid(AZIMUTH, ELEVATION)
    return A.ravel(), E.ravel()


@dataclass(frozen=True)
class ShapeParams:
    width: float = 75.0
    height: float = 100.0
    depth: float = 85.0
    nose: float = 26.0
    nose_width: float = 8.0
    brow: float = 4.0
    eye_depth: float = 6.0
    lips: float = 5.0
    chin: float = 6.0
    cheeks: float = 3.0


def _gauss(x, mu, sigma):
    return np.exp(-0.5 * ((x - mu) / sigma) ** 2)


def _smoothstep(x, lo, hi):
    s = np.clip((x - lo) / (hi - lo), 0.0, 1.0)
    return s * s * (3 - 2 * s)


def shape_vertices(p: ShapeParams) -> np.ndarray:
    az, el = grid_angles()
    a, e = np.deg2rad(az), np.deg2rad(el)
    x = p.width * np.sin(a) * np.cos(e)
    y = -p.height * np.sin(e)
    z = -p.depth * np.cos(a) * np.cos(e)
    # Relief pushed towards the camera (-z), faded out towards the ears.
    front = np.clip(np.cos(a), 0.0, None) ** 2
    nose_profile = _smoothstep(el, 20.0, -8.0) * (1 - _smoothstep(el, -10.0, -19.0))
    relief = p.nose * nose_profile * _gauss(az, 0.0, p.nose_width * (0.6 + 0.5 * _smoothstep(el, 15.0, -15.0)))
    relief += p.brow * _gauss(el, 23.0, 4.0) * _gauss(az, 0.0, 30.0)
    relief -= p.eye_depth * (_gauss(az, -22.0, 8.0) + _gauss(az, 22.0, 8.0)) * _gauss(el, 12.5, 5.0)
    relief += p.lips * _gauss(az, 0.0, 13.0) * _gauss(el, -32.0, 5.0)
    relief += p.chin * _gauss(az, 0.0, 14.0) * _gauss(el, -52.0, 6.0)
    relief += p.cheeks * (_gauss(az, -35.0, 12.0) + _gauss(az, 35.0, 12.0)) * _gauss(el, -5.0, 12.0)
    z = z - relief * front
    return np.column_stack([x, y, z])


def shape_params(shape_id: int) -> ShapeParams:
    """Deterministic proportions for each of the ten generic shapes."""
    if shape_id == 0:
        return ShapeParams()
    rng = np.random.default_rng(1000 + shape_id)
    base = ShapeParams()
    jitter = lambda v, rel: float(v * (1.0 + rel * rng.uniform(-1.0, 1.0)))  # noqa: E731
    return ShapeParams(
        width=jitter(base.width, 0.08),
        height=jitter(base.height, 0.07),
        depth=jitter(base.depth, 0.08),
        nose=jitter(base.nose, 0.25),
        nose_width=jitter(base.nose_width, 0.2),
        brow=jitter(base.brow, 0.5),
        eye_depth=jitter(base.eye_depth, 0.3),
        lips=jitter(base.lips, 0.4),
        chin=jitter(base.chin, 0.5),
        cheeks=jitter(base.cheeks, 0.6),
    )


def make_shape(shape_id: int = 0) -> Mesh:
    tris, sym, lm = _grid_topology()
    return Mesh(shape_vertices(shape_params(shape_id)), tris, lm, sym)


def make_shape_set() -> list[Mesh]:
    return [make_shape(i) for i in range(N_SHAPES)]


def expression_deltas(neutral: Mesh) -> dict[str, np.ndarray]:
    """Per-vertex displacement fields for the three basis expressions."""
    az, el = grid_angles()
    n = len(az)
    jaw_fade = _gauss(az, 0.0, 38.0)
    below = _smoothstep(el, -31.0, -32.0)  # 1 under the lip line
    lip_band = _gauss(el, -32.0, 4.0) * _gauss(az, 0.0, 16.0)

    open_ = np.zeros((n, 3))
    open_[:, 1] += 16.0 * below * jaw_fade * (1 - _smoothstep(el, -58.0, -66.0) * 0.2)
    open_[:, 1] -= 2.5 * _gauss(el, -29.0, 2.5) * _gauss(az, 0.0, 14.0) * (1 - below)
    open_[:, 2] += 3.0 * below * jaw_fade

    closed = np.zeros((n, 3))
    closed[:, 1] += 1.5 * _gauss(el, -29.0, 3.0) * _gauss(az, 0.0, 14.0)
    closed[:, 1] -= 2.0 * _gauss(el, -36.0, 3.0) * _gauss(az, 0.0, 14.0)
    closed[:, 2] -= 4.0 * lip_band
    closed[:, 0] -= 3.0 * np.tanh(az / 10.0) * lip_band

    smile = np.zeros((n, 3))
    corners = (_gauss(az, -18.0, 6.0) + _gauss(az, 18.0, 6.0)) * _gauss(el, -32.0, 5.0)
    smile[:, 1] -= 6.0 * corners
    smile[:, 0] += 4.0 * np.sign(az) * corners
    smile[:, 2] += 2.5 * corners
    return {"mouth_open": open_, "mouth_closed": closed, "smile": smile}


def write_assets(directory) -> None:
    """Regenerate the bundled OBJ + sidecar files into ``directory``."""
    from pathlib import Path

    from .assets import write_landmark_map, write_obj

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    shapes = make_shape_set()
    for i, mesh in enumerate(shapes):
        write_obj(d / f"shape_{i}.obj", mesh.vertices, mesh.triangles)
    write_landmark_map(d / "landmarks.txt", shapes[0].landmark_map)
    neutral = shapes[0]
    write_obj(d / "neutral.obj", neutral.vertices, neutral.triangles)
    for name, delta in expression_deltas(neutral).items():
        write_obj(d / f"{name}.obj", neutral.vertices + delta, neutral.triangles)
