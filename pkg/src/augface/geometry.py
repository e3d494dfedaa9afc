"""Camera model, landmark-driven pose estimation and 2D similarity alignment.

Conventions, used everywhere in the package:

* Camera frame: x right, y down, z forward (into the scene). A pixel
  ``(u, v)`` has ``u`` along image columns and ``v`` along rows, with pixel
  centres at integer coordinates.
* Model frame: the same axes; a frontal face looks towards ``-z`` and has
  rotation ``R = I``.
* Euler order: ``R = Ry(yaw) @ Rx(pitch) @ Rz(roll)`` (yaw about the vertical
  axis applied last). ``yaw_rotation(90)`` maps the unit x-axis to ``-z``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import (
    DegenerateConfigurationError,
    InsufficientLandmarksError,
    PoseFailureError,
)
from .landmarks import LandmarkSet2D

MIN_POSE_POINTS = 6


@dataclass(frozen=True)
class Mesh:
    """Triangle mesh with a landmark slot map and an optional mirror map."""

    vertices: np.ndarray
    triangles: np.ndarray
    landmark_map: np.ndarray
    symmetry_map: np.ndarray | None = None

    def __post_init__(self):
        v = np.ascontiguousarray(self.vertices, dtype=np.float64)
        f = np.ascontiguousarray(self.triangles, dtype=np.int64)
        lm = np.asarray(self.landmark_map, dtype=np.int64)
        if v.ndim != 2 or v.shape[1] != 3:
            raise ValueError("vertices must be (V, 3)")
        if f.ndim != 2 or f.shape[1] != 3:
            raise ValueError("triangles must be (T, 3)")
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise ValueError("triangle index out of range")
        if lm.size and (lm.min() < 0 or lm.max() >= len(v)):
            raise ValueError("landmark vertex index out of range")
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "triangles", f)
        object.__setattr__(self, "landmark_map", lm)
        if self.symmetry_map is not None:
            sym = np.asarray(self.symmetry_map, dtype=np.int64)
            if sym.shape != (len(v),) or np.any(sym[sym] != np.arange(len(v))):
                raise ValueError("symmetry_map must be an involution over vertices")
            object.__setattr__(self, "symmetry_map", sym)

    @property
    def landmark_points(self) -> np.ndarray:
        return self.vertices[self.landmark_map]

    def with_vertices(self, vertices) -> "Mesh":
        return Mesh(vertices, self.triangles, self.landmark_map, self.symmetry_map)


@dataclass(frozen=True)
class Intrinsics:
    focal: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (np.isfinite(self.focal) and self.focal > 0):
            raise ValueError(f"focal must be positive, got {self.focal}")

    @classmethod
    def centered(cls, image_size, focal) -> "Intrinsics":
        """Principal point at the centre of a ``(width, height)`` image."""
        w, h = image_size
        return cls(float(focal), (w - 1) / 2.0, (h - 1) / 2.0)

    @property
    def K(self) -> np.ndarray:
        return np.array([[self.focal, 0.0, self.cx], [0.0, self.focal, self.cy], [0.0, 0.0, 1.0]])

    def inside(self, image_size) -> bool:
        w, h = image_size
        return 0 <= self.cx <= w - 1 and 0 <= self.cy <= h - 1


@dataclass(frozen=True)
class Pose:
    """Rigid model-to-camera transform ``X_cam = R X + t``."""

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64).reshape(3, 3)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if not np.allclose(R.T @ R, np.eye(3), atol=1e-9) or abs(np.linalg.det(R) - 1) > 1e-9:
            raise ValueError("rotation must be orthonormal with det +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @property
    def matrix(self) -> np.ndarray:
        return np.hstack([self.rotation, self.translation[:, None]])

    def to_camera(self, points) -> np.ndarray:
        return np.asarray(points, dtype=np.float64) @ self.rotation.T + self.translation


def project(points, intrinsics: Intrinsics, pose: Pose) -> np.ndarray:
    """Perspective projection of model points to pixels.

    Points with non-positive camera depth come back as NaN rows.
    """
    cam = pose.to_camera(points)
    z = cam[:, 2]
    front = z > 0
    uv = np.full((len(cam), 2), np.nan)
    uv[front, 0] = intrinsics.cx + intrinsics.focal * cam[front, 0] / z[front]
    uv[front, 1] = intrinsics.cy + intrinsics.focal * cam[front, 1] / z[front]
    return uv


# -- rotations ---------------------------------------------------------------

def _rx(deg):
    a = np.deg2rad(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _ry(deg):
    a = np.deg2rad(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rz(deg):
    a = np.deg2rad(deg)
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def yaw_rotation(theta: float) -> np.ndarray:
    """Rotation by ``theta`` degrees about the vertical (y) axis."""
    if not np.isfinite(theta):
        raise ValueError("yaw must be finite")
    return _ry(theta)


def euler_to_rotation(yaw: float, pitch: float, roll: float) -> np.ndarray:
    return _ry(yaw) @ _rx(pitch) @ _rz(roll)


class EulerAngles(NamedTuple):
    yaw: float
    pitch: float
    roll: float
    reliable: bool


class UnreliableYawWarning(UserWarning):
    pass


def rotation_to_euler(R) -> EulerAngles:
    """Inverse of :func:`euler_to_rotation`, angles in degrees."""
    R = np.asarray(R, dtype=np.float64)
    pitch = np.degrees(np.arcsin(np.clip(-R[1, 2], -1.0, 1.0)))
    yaw = np.degrees(np.arctan2(R[0, 2], R[2, 2]))
    roll = np.degrees(np.arctan2(R[1, 0], R[1, 1]))
    return EulerAngles(float(yaw), float(pitch), float(roll), bool(abs(pitch) <= 80.0))


def decompose_yaw(pose: Pose) -> float:
    angles = rotation_to_euler(pose.rotation)
    if not angles.reliable:
        warnings.warn(f"unreliable yaw: pitch {angles.pitch:.1f} deg is near gimbal lock",
                      UnreliableYawWarning, stacklevel=2)
    return angles.yaw


def _skew(w):
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])


def rodrigues(w) -> np.ndarray:
    w = np.asarray(w, dtype=np.float64)
    theta = np.linalg.norm(w)
    K = _skew(w)
    if theta < 1e-12:
        return np.eye(3) + K
    return np.eye(3) + np.sin(theta) / theta * K + (1 - np.cos(theta)) / theta**2 * (K @ K)


def nearest_rotation(M) -> np.ndarray:
    U, _, Vt = np.linalg.svd(M)
    D = np.diag([1.0, 1.0, np.sign(np.linalg.det(U @ Vt))])
    return U @ D @ Vt


# -- pose estimation ---------------------------------------------------------

def _calibrated_dlt(X, uv, intr):
    """Linear [R|t] estimate from >= 6 correspondences at a fixed focal."""
    xn = (uv - [intr.cx, intr.cy]) / intr.focal
    centroid = X.mean(axis=0)
    scale = np.sqrt(3.0) / max(np.sqrt(((X - centroid) ** 2).sum(axis=1)).mean(), 1e-12)
    Xh = np.hstack([(X - centroid) * scale, np.ones((len(X), 1))])
    A = np.zeros((2 * len(X), 12))
    A[0::2, 0:4] = Xh
    A[0::2, 8:12] = -xn[:, :1] * Xh
    A[1::2, 4:8] = Xh
    A[1::2, 8:12] = -xn[:, 1:] * Xh
    P = np.linalg.svd(A)[2][-1].reshape(3, 4)
    T = np.eye(4)
    T[:3, :3] *= scale
    T[:3, 3] = -scale * centroid
    P = P @ T
    if P[2, :3] @ centroid + P[2, 3] < 0:
        P = -P
    M = P[:, :3]
    R = nearest_rotation(M)
    lam = np.linalg.svd(M, compute_uv=False).mean()
    return R, P[:, 3] / lam


def _residuals(R, t, f, X, uv, cx, cy):
    cam = X @ R.T + t
    z = cam[:, 2]
    pred = np.column_stack([cx + f * cam[:, 0] / z, cy + f * cam[:, 1] / z])
    return (pred - uv).ravel(), cam


def _jacobian(R, f, X, cam):
    n = len(X)
    x, y, z = cam[:, 0], cam[:, 1], cam[:, 2]
    du = np.zeros((n, 3))
    dv = np.zeros((n, 3))
    du[:, 0] = f / z
    du[:, 2] = -f * x / z**2
    dv[:, 1] = f / z
    dv[:, 2] = -f * y / z**2
    # d(cam)/d(omega) = -R [P]_x for the right-multiplied increment R exp([omega]_x)
    skews = np.zeros((n, 3, 3))
    skews[:, 0, 1], skews[:, 0, 2] = -X[:, 2], X[:, 1]
    skews[:, 1, 0], skews[:, 1, 2] = X[:, 2], -X[:, 0]
    skews[:, 2, 0], skews[:, 2, 1] = -X[:, 1], X[:, 0]
    dcam_dw = -np.einsum("ij,njk->nik", R, skews)
    J = np.zeros((2 * n, 7))
    J[0::2, 0:3] = np.einsum("nj,njk->nk", du, dcam_dw)
    J[1::2, 0:3] = np.einsum("nj,njk->nk", dv, dcam_dw)
    J[0::2, 3:6] = du
    J[1::2, 3:6] = dv
    J[0::2, 6] = x / z
    J[1::2, 6] = y / z
    return J


def _levenberg_marquardt(R, t, f, X, uv, cx, cy, max_iter=300):
    """Damped Gauss-Newton over (rotation increment, t, focal)."""
    r, cam = _residuals(R, t, f, X, uv, cx, cy)
    if np.any(cam[:, 2] <= 0):
        return R, t, f, np.inf
    cost = 0.5 * r @ r
    mu, nu = None, 2.0
    for _ in range(max_iter):
        J = _jacobian(R, f, X, cam)
        A = J.T @ J
        g = J.T @ r
        D = np.maximum(np.diag(A), 1e-12 * max(np.diag(A).max(), 1e-300))
        if mu is None:
            mu = 1e-3
        if np.abs(g).max() < 1e-14 * max(1.0, cost) or cost < 1e-24:
            break
        try:
            step = np.linalg.solve(A + mu * np.diag(D), -g)
        except np.linalg.LinAlgError:
            mu *= nu
            nu *= 2
            continue
        R_new = R @ rodrigues(step[:3])
        t_new = t + step[3:6]
        f_new = f + step[6]
        ok = f_new > 0
        if ok:
            r_new, cam_new = _residuals(R_new, t_new, f_new, X, uv, cx, cy)
            ok = bool(np.all(cam_new[:, 2] > 0))
        if ok:
            cost_new = 0.5 * r_new @ r_new
            predicted = 0.5 * step @ (mu * D * step - g)
            rho = (cost - cost_new) / predicted if predicted > 0 else -1.0
        else:
            rho = -1.0
        if rho > 0:
            small = cost - cost_new <= 1e-15 * cost
            R, t, f, r, cam, cost = nearest_rotation(R_new), t_new, f_new, r_new, cam_new, cost_new
            mu *= max(1.0 / 3.0, 1.0 - (2.0 * rho - 1.0) ** 3)
            nu = 2.0
            if small and np.linalg.norm(step) < 1e-12 * (np.linalg.norm(t) + f):
                break
        else:
            mu *= nu
            nu *= 2.0
            if mu > 1e16:
                break
    return R, t, f, cost


def estimate_pose(landmarks: LandmarkSet2D, mesh: Mesh, image_size, principal_point=None):
    """Fit focal, rotation and translation to 2D-3D landmark correspondences.

    The principal point is held at the image centre (or ``principal_point``).
    Initialisation is a linear calibrated DLT at focal = image width, after
    which focal, rotation and translation are refined jointly by minimising
    the squared landmark re-projection error.

    Returns:
        ``(Intrinsics, Pose, rms_residual_px)``
    """
    vis = landmarks.visible
    if vis.sum() < MIN_POSE_POINTS:
        raise InsufficientLandmarksError(
            f"pose needs >= {MIN_POSE_POINTS} visible landmarks, got {int(vis.sum())}")
    uv = landmarks.points[vis]
    X = mesh.landmark_points[vis]
    w, h = image_size
    if principal_point is None:
        base = Intrinsics.centered(image_size, float(w))
    else:
        base = Intrinsics(float(w), float(principal_point[0]), float(principal_point[1]))
    cx, cy = base.cx, base.cy

    sv = np.linalg.svd(uv - uv.mean(axis=0), compute_uv=False)
    if sv[0] <= 0 or sv[1] < 1e-3 * sv[0]:
        raise PoseFailureError("landmarks are collinear")

    starts = []
    try:
        starts.append(_calibrated_dlt(X, uv, base))
    except np.linalg.LinAlgError:
        pass
    # Coarse frontal start: depth chosen so the landmark spread matches.
    spread_img = np.sqrt(((uv - uv.mean(axis=0)) ** 2).sum(axis=1)).mean()
    spread_3d = np.sqrt(((X[:, :2] - X[:, :2].mean(axis=0)) ** 2).sum(axis=1)).mean()
    tz = base.focal * spread_3d / max(spread_img, 1e-9)
    c_img = (uv.mean(axis=0) - [cx, cy]) * tz / base.focal
    starts.append((np.eye(3), np.array([c_img[0], c_img[1], tz]) - X.mean(axis=0)))

    best = None
    for R0, t0 in starts:
        R, t, f, cost = _levenberg_marquardt(R0, t0, base.focal, X, uv, cx, cy)
        if best is None or cost < best[3]:
            best = (R, t, f, cost)
    R, t, f, cost = best
    if not np.isfinite(cost):
        raise PoseFailureError("no start placed the landmarks in front of the camera")
    rms = float(np.sqrt(2.0 * cost / len(uv)))
    if not np.isfinite(rms) or rms > np.hypot(w, h):
        raise PoseFailureError(f"pose fit diverged (rms {rms:.3g} px)")
    return Intrinsics(float(f), cx, cy), Pose(nearest_rotation(R), t), rms


def reprojection_rms(landmarks: LandmarkSet2D, mesh: Mesh, intrinsics: Intrinsics, pose: Pose) -> float:
    vis = landmarks.visible
    pred = project(mesh.landmark_points[vis], intrinsics, pose)
    return float(np.sqrt(np.mean(np.sum((pred - landmarks.points[vis]) ** 2, axis=1))))


# -- 2D similarity -----------------------------------------------------------

def estimate_similarity_2d(src, dst):
    """Least-squares similarity ``dst ~ scale * R @ src + t`` (closed form).

    Returns ``(scale, R, t)`` with ``R`` a 2x2 rotation.
    """
    src = np.asarray(src, dtype=np.float64)
    dst = np.asarray(dst, dtype=np.float64)
    if src.shape != dst.shape or src.ndim != 2 or src.shape[1] != 2:
        raise ValueError("src and dst must both be (N, 2)")
    if len(src) < 2:
        raise DegenerateConfigurationError("a similarity needs at least 2 point pairs")
    ms, md = src.mean(axis=0), dst.mean(axis=0)
    zs = (src[:, 0] - ms[0]) + 1j * (src[:, 1] - ms[1])
    zd = (dst[:, 0] - md[0]) + 1j * (dst[:, 1] - md[1])
    denom = np.sum(np.abs(zs) ** 2)
    if denom <= 1e-12 * max(1.0, np.abs(ms).max() ** 2):
        raise DegenerateConfigurationError("source points are coincident")
    a = np.sum(np.conj(zs) * zd) / denom
    scale = float(np.abs(a))
    if scale == 0.0:
        raise DegenerateConfigurationError("destination points are coincident")
    c, s = a.real / scale, a.imag / scale
    R = np.array([[c, -s], [s, c]])
    t = md - scale * R @ ms
    return scale, R, t


def apply_similarity(points, scale, R, t) -> np.ndarray:
    return scale * np.asarray(points, dtype=np.float64) @ R.T + t
