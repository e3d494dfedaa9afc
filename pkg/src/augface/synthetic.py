"""Synthetic identities and face images for tests, demos and the toy benchmark.

An identity is a texture atlas over the shared head grid (skin tone, hair,
eyes, brows, lips and a handful of identity-specific blotches) plus a true
generic shape. Face images render that identity at a chosen pose over a
smooth random background and come with exact 68-point landmarks.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage

from .assets import BlendshapeBasis, write_image
from .geometry import Intrinsics, Mesh, Pose, euler_to_rotation, project
from .headmodel import AZIMUTH, ELEVATION, grid_angles
from .landmarks import LEFT_EYE, RIGHT_EYE, LandmarkSet2D, write_landmarks
from .render import atlas_texcoords, rasterize, vertex_visibility

ATLAS_SIZE = 256


def atlas_uv() -> np.ndarray:
    az, el = grid_angles()
    u = (az - AZIMUTH[0]) / (AZIMUTH[-1] - AZIMUTH[0]) * (ATLAS_SIZE - 1)
    v = (ELEVATION[-1] - el) / (ELEVATION[-1] - ELEVATION[0]) * (ATLAS_SIZE - 1)
    return np.column_stack([u, v])


def _atlas_angles():
    k = np.arange(ATLAS_SIZE) / (ATLAS_SIZE - 1)
    az = AZIMUTH[0] + k * (AZIMUTH[-1] - AZIMUTH[0])
    el = ELEVATION[-1] - k * (ELEVATION[-1] - ELEVATION[0])
    return np.meshgrid(az, el)


def _blob(az, el, a0, e0, sa, se):
    return np.exp(-0.5 * (((az - a0) / sa) ** 2 + ((el - e0) / se) ** 2))


@dataclass(frozen=True)
class Identity:
    seed: int
    shape_id: int
    atlas: np.ndarray


def make_identity(seed: int, n_shapes: int = 10) -> Identity:
    rng = np.random.default_rng(seed)
    az, el = _atlas_angles()
    skin = rng.uniform([0.45, 0.30, 0.22], [0.92, 0.75, 0.62])
    img = np.ones(az.shape + (3,)) * skin
    # identity-specific low-frequency blotches
    for _ in range(rng.integers(5, 9)):
        a0, e0 = rng.uniform(-70, 70), rng.uniform(-55, 45)
        sa, se = rng.uniform(6, 20), rng.uniform(6, 18)
        amp = rng.uniform(-0.35, 0.35, size=3)
        img += amp * _blob(az, el, a0, e0, sa, se)[..., None]
    hair = rng.uniform(0.02, 0.55, size=3) * rng.uniform(0.3, 1.0)
    hairline = rng.uniform(36, 50)
    hair_w = np.clip((el - hairline) / 4.0, 0, 1)
    side = np.clip((np.abs(az) - rng.uniform(70, 85)) / 5.0, 0, 1) * (el > rng.uniform(-10, 20))
    hw = np.maximum(hair_w, side)[..., None]
    img = img * (1 - hw) + hair * hw
    brow_col = hair * 0.8
    for s in (-1, 1):
        b = _blob(az, el, s * 23, 24.5, rng.uniform(9, 13), rng.uniform(1.2, 2.5))
        img = img * (1 - b[..., None]) + brow_col * b[..., None]
        sclera = _blob(az, el, s * 22, 12.5, 7, 2.2)
        img = img * (1 - sclera[..., None]) + np.array([0.92, 0.92, 0.9]) * sclera[..., None]
        iris = _blob(az, el, s * 22, 12.5, 2.6, 2.0)
        eye_col = rng.uniform(0.05, 0.45, size=3)
        img = img * (1 - iris[..., None]) + eye_col * iris[..., None]
        nostril = _blob(az, el, s * 4.5, -17.5, 2.0, 1.3)
        img *= 1 - 0.6 * nostril[..., None]
    lips = rng.uniform([0.55, 0.15, 0.15], [0.85, 0.4, 0.4])
    lw = (_blob(az, el, 0, -29, 13, 2.2) + _blob(az, el, 0, -35, 12, 2.6)).clip(0, 1)
    img = img * (1 - lw[..., None]) + lips * lw[..., None]
    mouth_line = _blob(az, el, 0, -31.25, 14, 0.8)
    img *= 1 - 0.7 * mouth_line[..., None]
    if rng.random() < 0.3:
        beard = np.clip((-el - 38) / 6, 0, 1) * (np.abs(az) < 60)
        img = img * (1 - 0.8 * beard[..., None]) + hair * 0.8 * beard[..., None]
    # fine detail so that rendering errors are measurable
    img += 0.04 * ndimage.gaussian_filter(rng.standard_normal(az.shape + (3,)), (1.5, 1.5, 0))
    return Identity(seed, int(rng.integers(n_shapes)), np.clip(img, 0.0, 1.0))


def smooth_background(rng, size, channels=3) -> np.ndarray:
    w, h = size
    noise = rng.standard_normal((h, w, channels))
    field = ndimage.gaussian_filter(noise, (12, 12, 0))
    field = (field - field.min()) / max(np.ptp(field), 1e-9)
    return 0.15 + 0.7 * field


@dataclass(frozen=True)
class SyntheticFace:
    image: np.ndarray
    landmarks: LandmarkSet2D
    intrinsics: Intrinsics
    pose: Pose
    mask: np.ndarray
    yaw: float


def face_camera(mesh: Mesh, yaw, pitch=0.0, roll=0.0, size=(256, 256), eye_px=62.0,
                offset=(0.0, 0.0), distance=600.0):
    """Camera that places the face centred with eyes ``eye_px`` apart."""
    lm = mesh.landmark_points
    eye_dist = np.linalg.norm(lm[list(RIGHT_EYE)].mean(axis=0) - lm[list(LEFT_EYE)].mean(axis=0))
    focal = eye_px * distance / eye_dist
    R = euler_to_rotation(yaw, pitch, roll)
    t = np.array([offset[0], offset[1], distance]) - R @ lm.mean(axis=0)
    return Intrinsics.centered(size, focal), Pose(R, t)


def render_face(identity: Identity, mesh: Mesh, yaw: float, pitch: float = 0.0, roll: float = 0.0,
                size=(256, 256), rng=None, background=None, eye_px=62.0, offset=(0.0, 0.0),
                gain: float = 1.0, noise: float = 0.0) -> SyntheticFace:
    """Render ``identity`` on ``mesh``; landmarks hidden by the head are invisible."""
    rng = np.random.default_rng(0) if rng is None else rng
    intr, pose = face_camera(mesh, yaw, pitch, roll, size, eye_px, offset)
    tex = atlas_texcoords(atlas_uv())
    out = rasterize(mesh, tex, identity.atlas * gain, pose, intr, size, symmetry=False)
    if background is None:
        background = smooth_background(rng, size)
    m = out.mask[..., None]
    img = np.where(m, out.image, background)
    if noise:
        img = img + noise * rng.standard_normal(img.shape)
    img = np.clip(img, 0.0, 1.0)
    uv = project(mesh.landmark_points, intr, pose)
    vis = vertex_visibility(mesh, pose, intr)[mesh.landmark_map]
    return SyntheticFace(img, LandmarkSet2D(uv, vis), intr, pose, out.mask, float(yaw))


def expression_mesh(basis: BlendshapeBasis, coefficients) -> Mesh:
    return basis.shape(coefficients)


def build_dataset(root, n_subjects: int, n_images: int, shape_set, seed: int = 0,
                  yaw_range=(-60.0, 60.0), size=(256, 256)) -> list[Path]:
    """Write ``root/<subject>/<image>.png`` + ``.pts`` landmark files.

    Returns the written image paths in sorted order.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    paths = []
    for s in range(n_subjects):
        ident = make_identity(seed * 1000 + s, len(shape_set))
        sub = root / f"subject_{s:04d}"
        sub.mkdir(parents=True, exist_ok=True)
        for k in range(n_images):
            yaw = rng.uniform(*yaw_range)
            pitch, roll = rng.uniform(-8, 8), rng.uniform(-8, 8)
            face = render_face(ident, shape_set[ident.shape_id], yaw, pitch, roll, size, rng,
                               offset=tuple(rng.uniform(-8, 8, size=2)), gain=rng.uniform(0.9, 1.1))
            p = sub / f"img_{k:04d}.png"
            write_image(p, face.image)
            write_landmarks(p.with_suffix(".pts"), face.landmarks)
            paths.append(p)
    return sorted(paths)
