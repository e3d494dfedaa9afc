"""Dataset augmentation: aligned originals, pose/shape renders and closed-mouth copies.

Input layout is one directory per subject holding images (``.png``/``.jpg``)
with a landmark file of the same stem (``.pts``) and an optional bounding
box (``.bbox``: ``x0 y0 x1 y1`` in pixels). The run writes images under
``<out>/<subject>/`` and one JSON row per output to ``<out>/manifest.jsonl``.
"""
from __future__ import annotations

import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np
from scipy import ndimage

from .assets import load_basis, load_shape_set, read_image, write_image
from .errors import AlignmentError, AugfaceError
from .geometry import Mesh, estimate_pose, estimate_similarity_2d, project, rotation_to_euler
from .landmarks import FRONTAL9, LEFT_EYE, NOSE_TIP, RIGHT_EYE, LandmarkSet2D, read_landmarks
from .render import vertex_visibility
from .synth import (
    DEFAULT_YAWS,
    OUTPUT_SIZE,
    canonical_camera,
    neutralize_expression,
    pick_shape,
    render_novel_views,
    signed_yaws,
)

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg")
VARIANT_ORDER = {"aligned": 0, "pose_render": 1, "expression": 2}
PROFILE_TEMPLATE_YAW = 60.0
CENTER_CROP_FRACTION = 0.8
MIN_EYE_POINTS = 3


@dataclass(frozen=True)
class DatasetEntry:
    subject_label: str
    image_path: Path
    landmark_path: Path
    bbox: tuple | None = None

    @property
    def source_id(self) -> str:
        return f"{self.subject_label}/{self.image_path.name}"


@dataclass(frozen=True)
class AugmentConfig:
    yaws: tuple = DEFAULT_YAWS
    output_size: tuple = OUTPUT_SIZE
    seed: int = 0
    frontal_threshold: float = 30.0
    expression: bool = True
    shapes: bool = True

    def __post_init__(self):
        if not 0.0 < self.frontal_threshold < 90.0:
            raise ValueError("frontal threshold must lie in (0, 90) degrees")


@dataclass
class AugmentResult:
    rows: list = field(default_factory=list)
    messages: list = field(default_factory=list)


def classify_alignment(yaw: float, threshold: float = 30.0) -> str:
    if not np.isfinite(yaw):
        raise ValueError("yaw must be finite")
    return "frontal" if abs(yaw) <= threshold else "profile"


# -- in-plane alignment ---------------------------------------------------------

@dataclass(frozen=True)
class AlignmentTemplates:
    frontal: np.ndarray        # (9, 2) target positions of FRONTAL9
    profile: dict              # sign -> (eye slots, (2, 2) eye centre + nose tip)
    size: tuple


@lru_cache(maxsize=8)
def alignment_templates(size=OUTPUT_SIZE) -> AlignmentTemplates:
    """Template coordinates taken from canonical renders of generic shape 0."""
    mesh = load_shape_set()[0]
    intr, pose = canonical_camera(mesh, 0.0, out_size=size)
    frontal = project(mesh.landmark_points[list(FRONTAL9)], intr, pose)
    profile = {}
    for sign in (1, -1):
        intr, pose = canonical_camera(mesh, sign * PROFILE_TEMPLATE_YAW, out_size=size)
        lm = project(mesh.landmark_points, intr, pose)
        vis = vertex_visibility(mesh, pose, intr)[mesh.landmark_map]
        eye = max((RIGHT_EYE, LEFT_EYE), key=lambda e: vis[list(e)].sum())
        profile[sign] = (eye, np.vstack([lm[list(eye)].mean(axis=0), lm[NOSE_TIP]]))
    return AlignmentTemplates(frontal, profile, tuple(size))


def warp_similarity(image, scale, R, t, out_size) -> np.ndarray:
    """Resample ``image`` so that output(p) = input(inverse(scale R p + t))."""
    img = np.asarray(image, dtype=np.float64)
    w, h = out_size
    # output (x, y) -> input (x, y): p_in = R^T (p_out - t) / scale; swap to (row, col)
    A = R.T / scale
    off = -A @ t
    M = A[::-1, ::-1]
    o = off[::-1]
    if img.ndim == 2:
        return ndimage.affine_transform(img, M, o, output_shape=(h, w), order=1, mode="constant")
    return np.stack([ndimage.affine_transform(img[..., c], M, o, output_shape=(h, w), order=1,
                                              mode="constant") for c in range(img.shape[2])], axis=-1)


def alignment_transform(landmarks: LandmarkSet2D, cls: str, yaw: float = 0.0, size=OUTPUT_SIZE):
    """Similarity (scale, R, t) taking image points onto the class template."""
    tpl = alignment_templates(tuple(size))
    if cls == "frontal":
        slots = list(FRONTAL9)
        if not landmarks.visible[slots].all():
            raise AlignmentError("frontal alignment needs all 9 template landmarks")
        return estimate_similarity_2d(landmarks.points[slots], tpl.frontal)
    if cls == "profile":
        eye, dst = tpl.profile[-1 if yaw < 0 else 1]
        seen = [i for i in eye if landmarks.visible[i]]
        if len(seen) < MIN_EYE_POINTS or not landmarks.visible[NOSE_TIP]:
            raise AlignmentError("profile alignment needs the visible eye and the nose tip")
        src = np.vstack([landmarks.points[seen].mean(axis=0), landmarks.points[NOSE_TIP]])
        return estimate_similarity_2d(src, dst)
    raise ValueError(f"unknown alignment class {cls!r}")


def align_in_plane(image, landmarks: LandmarkSet2D, cls: str, yaw: float = 0.0,
                   size=OUTPUT_SIZE) -> np.ndarray:
    """Similarity-warp ``image`` onto the frontal or profile template canvas."""
    s, R, t = alignment_transform(landmarks, cls, yaw, size)
    return warp_similarity(image, s, R, t, size)


def bbox_crop(image, bbox=None, size=OUTPUT_SIZE) -> np.ndarray:
    """Resize the given box, or a fixed centred square, to the output canvas."""
    h, w = np.shape(image)[:2]
    if bbox is None:
        side = CENTER_CROP_FRACTION * min(w, h)
        x0, y0 = (w - side) / 2.0, (h - side) / 2.0
        bw = bh = side
    else:
        x0, y0, x1, y1 = map(float, bbox)
        bw, bh = x1 - x0, y1 - y0
        if bw <= 0 or bh <= 0:
            raise ValueError(f"invalid bounding box {bbox}")
    # scale to fit the longer side, box centre to canvas centre
    scale = min(size[0] / bw, size[1] / bh)
    c_in = np.array([x0 + (bw - 1) / 2.0, y0 + (bh - 1) / 2.0])
    c_out = np.array([(size[0] - 1) / 2.0, (size[1] - 1) / 2.0])
    return warp_similarity(image, scale, np.eye(2), c_out - scale * c_in, size)


# -- per-entry work ---------------------------------------------------------------

def read_bbox(path) -> tuple | None:
    p = Path(path)
    if not p.exists():
        return None
    vals = [float(v) for v in p.read_text(encoding="utf-8").split()]
    if len(vals) != 4:
        raise ValueError(f"{p}: expected 4 numbers")
    return tuple(vals)


def output_name(entry: DatasetEntry, variant: str, yaw=None, shape_id=None) -> str:
    name = f"{entry.image_path.stem}_{variant}"
    if yaw is not None:
        name += f"_{int(round(yaw))}"
    if shape_id is not None:
        name += f"_s{shape_id}"
    return f"{entry.subject_label}/{name}.png"


def _row(entry, output_path, variant, yaw=None, shape_id=None, alignment=None) -> dict:
    return {
        "output_path": output_path,
        "subject_label": entry.subject_label,
        "source_path": entry.source_id,
        "variant": variant,
        "yaw": None if yaw is None else float(yaw),
        "shape_id": shape_id,
        "alignment": alignment,
    }


def _save(out_root, rel, image, mask=None):
    path = Path(out_root) / rel
    path.parent.mkdir(parents=True, exist_ok=True)
    write_image(path, image, mask)


def augment_image(entry: DatasetEntry, shape_set, basis, config: AugmentConfig,
                  out_root=None) -> AugmentResult:
    """All variants of one source image; images are written when ``out_root`` is set."""
    res = AugmentResult()
    image = read_image(entry.image_path)
    landmarks = read_landmarks(entry.landmark_path)
    size = tuple(config.output_size)

    def emit(variant, img, yaw=None, shape_id=None, alignment=None, mask=None):
        rel = output_name(entry, variant, yaw, shape_id)
        if out_root is not None:
            _save(out_root, rel, img, mask)
        res.rows.append(_row(entry, rel, variant, yaw, shape_id, alignment))

    shape_id = pick_shape(config.seed, entry.source_id, len(shape_set)) if config.shapes else 0
    shape = shape_set[shape_id]
    h, w = image.shape[:2]
    try:
        _, pose, _ = estimate_pose(landmarks, shape, (w, h))
        yaw = rotation_to_euler(pose.rotation).yaw
        cls = classify_alignment(yaw, config.frontal_threshold)
        aligned = align_in_plane(image, landmarks, cls, yaw, size)
    except (AugfaceError, ValueError) as exc:
        kind = "bbox" if entry.bbox is not None else "center crop"
        res.messages.append(f"{entry.source_id}: {type(exc).__name__}: {exc}; {kind} fallback")
        emit("aligned", bbox_crop(image, entry.bbox, size), alignment="bbox_fallback")
        return res
    alignment = "frontal9" if cls == "frontal" else "profile2"
    emit("aligned", aligned, alignment=alignment)

    yaws = signed_yaws(yaw, config.yaws)
    views = render_novel_views(image, landmarks, shape, yaws, size)
    for target, out in zip(yaws, views):
        emit("pose_render", out.image, target, shape_id if config.shapes else None, mask=out.mask)

    if config.expression:
        neutral = neutralize_expression(image, landmarks, basis.neutral, basis)
        if neutral.skipped:
            res.messages.append(f"{entry.source_id}: expression fit skipped")
        else:
            emit("expression", align_in_plane(neutral.image, landmarks, cls, yaw, size),
                 alignment=alignment)
    return res


# -- dataset level ---------------------------------------------------------------

def discover_entries(input_root) -> list[DatasetEntry]:
    root = Path(input_root)
    if not root.is_dir():
        raise AugfaceError(f"input root {root} is not a directory")
    entries = []
    for sub in sorted(p for p in root.iterdir() if p.is_dir()):
        for img in sorted(p for p in sub.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES):
            entries.append(DatasetEntry(sub.name, img, img.with_suffix(".pts"),
                                        read_bbox(img.with_suffix(".bbox"))))
    if not entries:
        raise AugfaceError(f"no images found under {root}")
    return entries


def _sort_key(row):
    return (row["subject_label"], row["source_path"], VARIANT_ORDER[row["variant"]],
            abs(row["yaw"] or 0.0), row["output_path"])


def _worker(args) -> AugmentResult:
    entry, config, out_root = args
    try:
        return augment_image(entry, load_shape_set(), load_basis(), config, out_root)
    except (OSError, ValueError) as exc:
        return AugmentResult([], [f"{entry.source_id}: skipped, {type(exc).__name__}: {exc}"])


def manifest_bytes(rows) -> bytes:
    lines = [json.dumps(r, sort_keys=True) for r in sorted(rows, key=_sort_key)]
    return ("\n".join(lines) + "\n").encode("utf-8") if lines else b""


def augment_dataset(input_root, output_root, config: AugmentConfig = AugmentConfig(),
                    workers: int = 1) -> list[dict]:
    """Augment every entry under ``input_root``; returns the sorted manifest rows."""
    entries = discover_entries(input_root)
    out = Path(output_root)
    out.mkdir(parents=True, exist_ok=True)
    jobs = [(e, config, str(out)) for e in entries]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_worker, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_worker(j) for j in jobs]
    rows = []
    with open(out / "augment.log", "w", encoding="utf-8") as logf:
        for entry, res in zip(entries, results):
            for msg in res.messages:
                log.warning(msg)
                logf.write(msg + "\n")
            rows.extend(res.rows)
        n_fb = sum(r["alignment"] == "bbox_fallback" for r in rows)
        logf.write(f"entries={len(entries)} rows={len(rows)} fallback={n_fb}\n")
    rows.sort(key=_sort_key)
    (out / "manifest.jsonl").write_bytes(manifest_bytes(rows))
    return rows


def read_manifest(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text(encoding="utf-8").splitlines() if line]
