"""Augmentation generators: novel yaw views, generic-shape swaps, mouth neutralization."""
from __future__ import annotations

import hashlib
from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from scipy.optimize import lsq_linear

from .assets import BlendshapeBasis
from .errors import ExpressionFitError
from .geometry import (
    Intrinsics,
    Mesh,
    Pose,
    estimate_pose,
    euler_to_rotation,
    project,
    rotation_to_euler,
)
from .landmarks import LEFT_EYE, MOUTH, RIGHT_EYE, RIGID, LandmarkSet2D
from .render import FEATHER_PX, RenderOutput, rasterize, texture_from_image

OUTPUT_SIZE = (256, 256)
EYE_FRACTION = 0.35
CAMERA_DISTANCE = 600.0
DEFAULT_YAWS = (0.0, 40.0, 75.0)
MIN_MOUTH_POINTS = 6


def signed_yaws(source_yaw: float, magnitudes=DEFAULT_YAWS) -> list[float]:
    """Target yaws with non-zero entries turned to the side the source faces."""
    sign = -1.0 if source_yaw < 0 else 1.0
    return [sign * abs(m) if m else 0.0 for m in magnitudes]


def canonical_camera(mesh: Mesh, yaw: float, pitch: float = 0.0, roll: float = 0.0,
                     out_size=OUTPUT_SIZE):
    """Intrinsics and pose for the fixed-scale output canvas.

    The landmark centroid lands on the canvas centre and, at yaw 0, the eye
    centres are ``EYE_FRACTION`` of the canvas width apart.
    """
    lm = mesh.landmark_points
    eye_dist = np.linalg.norm(lm[list(RIGHT_EYE)].mean(axis=0) - lm[list(LEFT_EYE)].mean(axis=0))
    focal = EYE_FRACTION * out_size[0] * CAMERA_DISTANCE / eye_dist
    R = euler_to_rotation(yaw, pitch, roll)
    t = np.array([0.0, 0.0, CAMERA_DISTANCE]) - R @ lm.mean(axis=0)
    return Intrinsics.centered(out_size, focal), Pose(R, t)


def render_novel_views(image, landmarks: LandmarkSet2D, shape: Mesh, yaws=DEFAULT_YAWS,
                       out_size=OUTPUT_SIZE, keep_source_camera: bool = False) -> list[RenderOutput]:
    """Re-render the face in ``image`` at each requested yaw (degrees).

    Estimated pitch and roll are kept. By default each view uses the fixed
    output canvas; ``keep_source_camera`` renders with the estimated source
    intrinsics and translation on a canvas of the source size instead.
    Pose failures propagate.
    """
    h, w = np.shape(image)[:2]
    intr, pose, _ = estimate_pose(landmarks, shape, (w, h))
    tex = texture_from_image(shape, image, pose, intr)
    angles = rotation_to_euler(pose.rotation)
    outputs = []
    for yaw in yaws:
        if keep_source_camera:
            R = euler_to_rotation(yaw, angles.pitch, angles.roll)
            target = Pose(R, pose.translation)
            out = rasterize(shape, tex, image, target, intr, (w, h))
        else:
            cam, target = canonical_camera(shape, yaw, angles.pitch, angles.roll, out_size)
            out = rasterize(shape, tex, image, target, cam, out_size)
        outputs.append(out)
    return outputs


def pick_shape(rng_seed: int, source_image_id: str, n_shapes: int = 10) -> int:
    """Uniform, reproducible shape id for one source image."""
    digest = hashlib.sha256(str(source_image_id).encode("utf-8")).digest()
    key = int.from_bytes(digest[:8], "little")
    rng = np.random.default_rng(np.random.SeedSequence([int(rng_seed) & (2**64 - 1), key]))
    return int(rng.integers(n_shapes))


@dataclass(frozen=True)
class ExpressionFit:
    pose: Pose
    intrinsics: Intrinsics
    coefficients: dict
    residual: float


def fit_expression(landmarks: LandmarkSet2D, mesh_neutral: Mesh, basis: BlendshapeBasis,
                   pose: Pose, intrinsics: Intrinsics, max_iter: int = 50) -> ExpressionFit:
    """Box-constrained blendshape coefficients from the mouth landmarks.

    Pose is held fixed. Each Gauss-Newton step solves the linearised problem
    under the [0, 1] bounds.
    """
    slots = [i for i in MOUTH if landmarks.visible[i]]
    if len(slots) < MIN_MOUTH_POINTS:
        raise ExpressionFitError(f"expression needs >= {MIN_MOUTH_POINTS} mouth landmarks, got {len(slots)}")
    names = basis.names
    vid = mesh_neutral.landmark_map[slots]
    base = mesh_neutral.vertices[vid]
    D = np.stack([basis.deltas[n][vid] for n in names], axis=-1)  # (P, 3, K)
    obs = landmarks.points[slots]
    R, t, f = pose.rotation, pose.translation, intrinsics.focal

    def residual(c):
        X = base + D @ c
        cam = X @ R.T + t
        z = cam[:, 2]
        pred = np.column_stack([intrinsics.cx + f * cam[:, 0] / z, intrinsics.cy + f * cam[:, 1] / z])
        return (pred - obs).ravel(), cam

    c = np.zeros(len(names))
    r, cam = residual(c)
    for _ in range(max_iter):
        x, y, z = cam[:, 0], cam[:, 1], cam[:, 2]
        dcam = np.einsum("ij,pjk->pik", R, D)  # (P, 3, K)
        du = f * (dcam[:, 0, :] / z[:, None] - x[:, None] * dcam[:, 2, :] / z[:, None] ** 2)
        dv = f * (dcam[:, 1, :] / z[:, None] - y[:, None] * dcam[:, 2, :] / z[:, None] ** 2)
        J = np.empty((2 * len(slots), len(names)))
        J[0::2], J[1::2] = du, dv
        c_new = lsq_linear(J, J @ c - r, bounds=(0.0, 1.0), method="bvls").x
        c_new = np.clip(c_new, 0.0, 1.0)
        r_new, cam_new = residual(c_new)
        done = np.max(np.abs(c_new - c)) < 1e-10
        if r_new @ r_new > r @ r and not done:
            break
        c, r, cam = c_new, r_new, cam_new
        if done:
            break
    rms = float(np.sqrt(np.mean(r[0::2] ** 2 + r[1::2] ** 2)))
    return ExpressionFit(pose, intrinsics, dict(zip(names, (float(v) for v in c))), rms)


def neutral_coefficients(fit: ExpressionFit) -> dict:
    """Mouth closed: open goes to 0, the other fitted coefficients are kept."""
    coeffs = dict(fit.coefficients)
    coeffs["mouth_open"] = 0.0
    return coeffs


@dataclass(frozen=True)
class NeutralizedImage:
    image: np.ndarray
    mask: np.ndarray
    skipped: bool
    fit: ExpressionFit | None = None
    coefficients: dict | None = None


def composite(background, render: RenderOutput, band: float = FEATHER_PX):
    """Blend ``render`` over ``background`` inside its mask, feathered inwards."""
    alpha = np.clip(ndimage.distance_transform_edt(render.mask) / band, 0.0, 1.0)
    out = np.array(background, dtype=np.float64, copy=True)
    inside = render.mask
    a = alpha[inside]
    if out.ndim == 3:
        a = a[:, None]
    out[inside] = a * render.image[inside] + (1.0 - a) * out[inside]
    return out


def neutralize_expression(image, landmarks: LandmarkSet2D, mesh_neutral: Mesh,
                          basis: BlendshapeBasis) -> NeutralizedImage:
    """Close the mouth of the face in ``image``, leaving everything else intact.

    Pose comes from the expression-invariant landmarks; the fitted model is
    textured from the image, re-posed with the mouth closed and rendered back
    at the original camera. Pixels outside the rendered silhouette are copied
    from the input unchanged.
    """
    img = np.asarray(image, dtype=np.float64)
    h, w = img.shape[:2]
    try:
        intr, pose, _ = estimate_pose(landmarks.subset(RIGID), mesh_neutral, (w, h))
        fit = fit_expression(landmarks, mesh_neutral, basis, pose, intr)
    except Exception:  # noqa: BLE001 - any fit failure degrades to a skip
        return NeutralizedImage(img, np.zeros((h, w), dtype=bool), True)
    fitted = _posed(mesh_neutral, basis, fit.coefficients)
    target_coeffs = neutral_coefficients(fit)
    target = _posed(mesh_neutral, basis, target_coeffs)
    tex = texture_from_image(fitted, img, pose, intr)
    render = rasterize(target, tex, img, pose, intr, (w, h))
    return NeutralizedImage(composite(img, render), render.mask, False, fit, target_coeffs)


def _posed(mesh_neutral: Mesh, basis: BlendshapeBasis, coeffs) -> Mesh:
    v = mesh_neutral.vertices.copy()
    for name, c in coeffs.items():
        v += c * basis.deltas[name]
    return mesh_neutral.with_vertices(v)


def mouth_reprojection(mesh: Mesh, intrinsics: Intrinsics, pose: Pose) -> np.ndarray:
    return project(mesh.landmark_points[list(MOUTH)], intrinsics, pose)
