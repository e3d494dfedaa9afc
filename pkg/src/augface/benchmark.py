"""Synthetic identity benchmark with mixed still/video templates.

Each evaluation identity gets a gallery and a probe template; each template
holds a few stills at random yaw in [-75, 75] plus one short video whose
frames drift slowly in yaw. Separate training identities feed the PCA.
"""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .assets import load_shape_set, write_image
from .landmarks import write_landmarks
from .protocol import Pair, Protocol, ProtocolTemplate, MediaRef, write_protocol
from .synthetic import make_identity, render_face, smooth_background

MAX_YAW = 75.0


@dataclass(frozen=True)
class BenchmarkSpec:
    n_identities: int = 20
    n_train: int = 10
    stills: int = 2
    frames: int = 3
    n_folds: int = 10
    size: tuple = (256, 256)
    noise: float = 0.01
    seed: int = 0


def _media(identity, shape, rng, spec, root, item_base, kind):
    """Render one still or one video; returns the item ids."""
    size = spec.size
    bg = smooth_background(rng, size)
    n = 1 if kind == "image" else spec.frames
    yaw0 = rng.uniform(-MAX_YAW, MAX_YAW)
    drift = rng.uniform(-4.0, 4.0) if kind == "video" else 0.0
    pitch, roll = rng.uniform(-6, 6), rng.uniform(-6, 6)
    gain = rng.uniform(0.85, 1.15)
    eye_px = rng.uniform(48, 64)
    offset = tuple(rng.uniform(-10, 10, size=2))
    items = []
    for k in range(n):
        yaw = float(np.clip(yaw0 + k * drift, -MAX_YAW, MAX_YAW))
        face = render_face(identity, shape, yaw, pitch, roll, size, rng, bg, eye_px, offset,
                           gain, spec.noise)
        item = f"{item_base}_f{k}" if kind == "video" else item_base
        path = Path(root) / f"{item}.png"
        path.parent.mkdir(parents=True, exist_ok=True)
        write_image(path, face.image)
        write_landmarks(path.with_suffix(".pts"), face.landmarks)
        items.append(item)
    return items


def _template(identity, shape, rng, spec, root, tid, subject):
    media = []
    for s in range(spec.stills):
        base = f"{subject}/{tid}_s{s}"
        media.append(MediaRef(f"{tid}_s{s}", "image", tuple(_media(identity, shape, rng, spec, root, base, "image"))))
    if spec.frames:
        base = f"{subject}/{tid}_v0"
        media.append(MediaRef(f"{tid}_v0", "video", tuple(_media(identity, shape, rng, spec, root, base, "video"))))
    return ProtocolTemplate(tid, subject, tuple(media))


def build_benchmark(root, spec: BenchmarkSpec = BenchmarkSpec()) -> Protocol:
    """Write images to ``root/images`` and the protocol CSVs to ``root``."""
    root = Path(root)
    images = root / "images"
    shapes = load_shape_set()
    rng = np.random.default_rng(spec.seed)
    templates, gallery, probes, train = {}, [], [], []
    for i in range(spec.n_identities + spec.n_train):
        ident = make_identity(10_000 * (spec.seed + 1) + i, len(shapes))
        shape = shapes[ident.shape_id]
        subject = f"id{i:03d}"
        roles = ("g", "p") if i < spec.n_identities else ("t",)
        for role in roles:
            t = _template(ident, shape, rng, spec, images, f"{subject}_{role}", subject)
            templates[t.template_id] = t
            {"g": gallery, "p": probes, "t": train}[role].append(t.template_id)
    pairs = [Pair(p, g, templates[p].subject_id == templates[g].subject_id, k % spec.n_folds)
             for k, p in enumerate(probes) for g in gallery]
    proto = Protocol(templates, pairs, gallery, probes, train)
    write_protocol(root, proto)
    return proto
