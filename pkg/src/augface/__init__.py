"""Pose, shape and expression augmentation for face recognition, with template matching."""
from .errors import AugfaceError
from .geometry import Intrinsics, Mesh, Pose, estimate_pose, euler_to_rotation, rotation_to_euler
from .landmarks import LandmarkSet2D, read_landmarks, write_landmarks

__version__ = "0.1.0"

__all__ = [
    "AugfaceError",
    "Intrinsics",
    "LandmarkSet2D",
    "Mesh",
    "Pose",
    "estimate_pose",
    "euler_to_rotation",
    "read_landmarks",
    "rotation_to_euler",
    "write_landmarks",
    "__version__",
]
