"""Test-time embedding of protocol items: in-plane aligned plus mutually rendered views."""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .assets import load_shape_set, read_image
from .augment import align_in_plane, bbox_crop, classify_alignment
from .errors import AugfaceError
from .features import ToyBackend
from .fusion import VIEWS
from .geometry import estimate_pose, rotation_to_euler
from .landmarks import read_landmarks
from .protocol import view_key
from .synth import OUTPUT_SIZE, render_novel_views

log = logging.getLogger(__name__)

RENDER_SHAPE = 0


@dataclass(frozen=True)
class ItemEmbedding:
    item_id: str
    vectors: dict
    yaw: float | None
    fallback: bool = False


def embed_item(item_id: str, image, landmarks, backend=None, views: bool = True,
               size=OUTPUT_SIZE) -> ItemEmbedding:
    """Embed one image in-plane and, if ``views``, at every mutual view yaw.

    Rendered views use positive yaws for every item so that any two items
    are compared on the same side of the face. On pose failure the bbox
    fallback crop stands in for all variants and the yaw is taken as 0.
    """
    backend = backend or ToyBackend()
    shape = load_shape_set()[RENDER_SHAPE]
    h, w = np.shape(image)[:2]
    try:
        _, pose, _ = estimate_pose(landmarks, shape, (w, h))
        yaw = rotation_to_euler(pose.rotation).yaw
        aligned = align_in_plane(image, landmarks, classify_alignment(yaw), yaw, size)
    except (AugfaceError, ValueError) as exc:
        log.warning("%s: %s; using center crop", item_id, exc)
        crop = backend.embed(bbox_crop(image, None, size), item_id).values
        vecs = {item_id: crop}
        if views:
            vecs.update({view_key(item_id, v): crop for v in VIEWS})
        return ItemEmbedding(item_id, vecs, 0.0, True)
    vecs = {item_id: backend.embed(aligned, item_id).values}
    if views:
        for v, out in zip(VIEWS, render_novel_views(image, landmarks, shape, VIEWS, size)):
            vecs[view_key(item_id, v)] = backend.embed(out.image, view_key(item_id, v)).values
    return ItemEmbedding(item_id, vecs, float(yaw))


def _embed_job(args) -> ItemEmbedding:
    root, item_id, views = args
    base = Path(root) / item_id
    img = base.with_suffix(".png")
    return embed_item(item_id, read_image(img), read_landmarks(base.with_suffix(".pts")),
                      ToyBackend(), views)


def embed_items(image_root, item_ids, views: bool = True, workers: int = 1):
    """Toy embeddings for ``<image_root>/<item_id>.png`` (+ ``.pts``).

    Returns ``(table, yaws)``; both are keyed in sorted item order so the
    result does not depend on the worker count.
    """
    ids = sorted(set(item_ids))
    jobs = [(str(image_root), i, views) for i in ids]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_embed_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        results = [_embed_job(j) for j in jobs]
    table, yaws = {}, {}
    for r in results:
        table.update(r.vectors)
        yaws[r.item_id] = r.yaw
    return table, yaws
