"""Image embeddings, within-video pooling and feature conditioning.

Binary formats (little endian):

``EMB1``  precomputed embeddings
    magic ``b"EMB1"``, ``u32`` dimension D, then until EOF one record per
    vector: ``u16`` id length, UTF-8 id bytes, D ``float32`` values.

``PCA1``  a fitted PCA model
    magic ``b"PCA1"``, ``u32`` D, D ``float64`` mean values, then the D x D
    component matrix as ``float64`` in row-major order (column j is the j-th
    component). float64 keeps the basis orthonormal to 1e-12 after a reload.
"""
from __future__ import annotations

import hashlib
import logging
import struct
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from PIL import Image

from .errors import EmbeddingNotFoundError, ZeroVarianceError

log = logging.getLogger(__name__)

TOY_SIZE = 32
DEFAULT_ROOT_EXPONENT = 0.65


@dataclass(frozen=True)
class FeatureVector:
    values: np.ndarray
    source_id: str = ""
    degenerate: bool = False


class ToyBackend:
    """Deterministic pixel embedding: gray, 32x32, zero mean, unit norm (D = 1024)."""

    name = "toy32"
    mode = "computed"
    dimension = TOY_SIZE * TOY_SIZE

    def embed(self, image, source_id: str = "") -> FeatureVector:
        img = np.asarray(image, dtype=np.float64)
        if img.size == 0:
            raise ValueError("cannot embed an empty image")
        gray = img if img.ndim == 2 else img[..., :3] @ np.array([0.299, 0.587, 0.114])
        small = Image.fromarray(gray.astype(np.float32)).resize(
            (TOY_SIZE, TOY_SIZE), Image.Resampling.BILINEAR)
        x = np.asarray(small, dtype=np.float64).ravel()
        x = x - x.mean()
        norm = np.linalg.norm(x)
        if norm < 1e-12:
            return FeatureVector(np.zeros_like(x), source_id, degenerate=True)
        return FeatureVector(x / norm, source_id)


class PrecomputedBackend:
    """Lookup of vectors stored in an ``EMB1`` file (or given as a mapping)."""

    name = "precomputed"
    mode = "precomputed"

    def __init__(self, table: Mapping[str, np.ndarray]):
        self._table = {k: np.asarray(v, dtype=np.float64) for k, v in table.items()}
        dims = {v.shape for v in self._table.values()}
        if len(dims) > 1:
            raise ValueError("all precomputed embeddings must share one dimension")
        self.dimension = next(iter(dims))[0] if dims else 0

    @classmethod
    def from_file(cls, path) -> "PrecomputedBackend":
        return cls(read_embeddings(path))

    def __contains__(self, source_id) -> bool:
        return source_id in self._table

    def ids(self) -> list[str]:
        return list(self._table)

    def embed(self, image=None, source_id: str = "") -> FeatureVector:
        try:
            return FeatureVector(self._table[source_id], source_id)
        except KeyError:
            raise EmbeddingNotFoundError(f"embedding not found: {source_id!r}") from None


def write_embeddings(path, table: Mapping[str, np.ndarray]) -> None:
    items = list(table.items())
    dim = len(items[0][1]) if items else 0
    with open(path, "wb") as fh:
        fh.write(b"EMB1" + struct.pack("<I", dim))
        for key, vec in items:
            vec = np.asarray(vec, dtype="<f4")
            if vec.shape != (dim,):
                raise ValueError(f"embedding {key!r} has shape {vec.shape}, expected ({dim},)")
            raw = key.encode("utf-8")
            fh.write(struct.pack("<H", len(raw)) + raw + vec.tobytes())


def read_embeddings(path) -> dict[str, np.ndarray]:
    data = Path(path).read_bytes()
    if data[:4] != b"EMB1":
        raise ValueError(f"{path}: not an EMB1 file")
    (dim,) = struct.unpack_from("<I", data, 4)
    pos, out = 8, {}
    while pos < len(data):
        (n,) = struct.unpack_from("<H", data, pos)
        pos += 2
        key = data[pos:pos + n].decode("utf-8")
        pos += n
        out[key] = np.frombuffer(data, dtype="<f4", count=dim, offset=pos).astype(np.float64)
        pos += 4 * dim
    if pos != len(data):
        raise ValueError(f"{path}: truncated record")
    return out


def video_pool(items: Iterable[tuple[str, str, np.ndarray]]) -> list[tuple[str, np.ndarray]]:
    """Average frames within each video; stills pass through.

    ``items`` holds ``(media_id, media_type, vector)`` triples with
    ``media_type`` in {"image", "video"}. Output keeps first-appearance order
    and never mixes two videos.
    """
    order: list[str] = []
    groups: dict[str, list[np.ndarray]] = {}
    out: list[tuple[str, np.ndarray]] = []
    slots: dict[str, int] = {}
    for media_id, media_type, vec in items:
        if media_type == "video":
            if media_id not in groups:
                groups[media_id] = []
                slots[media_id] = len(out)
                out.append((media_id, None))
                order.append(media_id)
            groups[media_id].append(np.asarray(vec, dtype=np.float64))
        elif media_type == "image":
            out.append((media_id, np.asarray(vec, dtype=np.float64)))
        else:
            raise ValueError(f"unknown media type {media_type!r}")
    for media_id in order:
        frames = groups[media_id]
        if not frames:
            warnings.warn(f"video {media_id} has no frames", RuntimeWarning, stacklevel=2)
            continue
        out[slots[media_id]] = (media_id, np.mean(frames, axis=0))
    return [(m, v) for m, v in out if v is not None]


@dataclass(frozen=True)
class PCAModel:
    mean: np.ndarray
    components: np.ndarray  # (D, D), columns sorted by descending variance
    variances: np.ndarray | None = None

    @property
    def dimension(self) -> int:
        return len(self.mean)

    def digest(self) -> str:
        h = hashlib.sha256()
        h.update(np.ascontiguousarray(self.mean).tobytes())
        h.update(np.ascontiguousarray(self.components).tobytes())
        return h.hexdigest()


def pca_fit(samples) -> PCAModel:
    """Full-rank PCA: every component is kept, rank gaps completed orthonormally."""
    X = np.asarray(samples, dtype=np.float64)
    if X.ndim != 2 or len(X) < 2:
        raise ValueError("PCA needs at least 2 samples of equal dimension")
    mean = X.mean(axis=0)
    Xc = X - mean
    if not np.any(np.abs(Xc) > 1e-12 * max(1.0, np.abs(X).max())):
        raise ZeroVarianceError("all training samples are identical")
    cov = Xc.T @ Xc / (len(X) - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(-evals, kind="stable")
    evals, evecs = evals[order], evecs[:, order]
    # sign convention: largest-magnitude entry of each component is positive
    flip = np.sign(evecs[np.abs(evecs).argmax(axis=0), np.arange(evecs.shape[1])])
    evecs = evecs * np.where(flip == 0, 1.0, flip)
    return PCAModel(mean, evecs, np.clip(evals, 0.0, None))


def pca_apply(model: PCAModel, x) -> np.ndarray:
    """Project ``x`` (D,) or (N, D) onto all components."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != model.dimension:
        raise ValueError(f"dimension mismatch: model {model.dimension}, input {x.shape[-1]}")
    return (x - model.mean) @ model.components


def pca_inverse(model: PCAModel, y) -> np.ndarray:
    return np.asarray(y) @ model.components.T + model.mean


def write_pca(path, model: PCAModel) -> None:
    d = model.dimension
    with open(path, "wb") as fh:
        fh.write(b"PCA1" + struct.pack("<I", d))
        fh.write(np.asarray(model.mean, dtype="<f8").tobytes())
        fh.write(np.ascontiguousarray(model.components, dtype="<f8").tobytes())


def read_pca(path) -> PCAModel:
    data = Path(path).read_bytes()
    if data[:4] != b"PCA1":
        raise ValueError(f"{path}: not a PCA1 file")
    (d,) = struct.unpack_from("<I", data, 4)
    if len(data) != 8 + 8 * d + 8 * d * d:
        raise ValueError(f"{path}: size does not match dimension {d}")
    mean = np.frombuffer(data, dtype="<f8", count=d, offset=8).copy()
    comps = np.frombuffer(data, dtype="<f8", count=d * d, offset=8 + 8 * d).reshape(d, d).copy()
    return PCAModel(mean, comps)


def root_normalize(x, c: float = DEFAULT_ROOT_EXPONENT) -> np.ndarray:
    """Signed power ``sign(x) * |x|**c``."""
    if not 0.0 < c <= 1.0:
        raise ValueError(f"root exponent must be in (0, 1], got {c}")
    x = np.asarray(x, dtype=np.float64)
    return np.sign(x) * np.abs(x) ** c


@dataclass(frozen=True)
class Conditioner:
    """PCA projection followed by root normalization."""

    pca: PCAModel | None
    exponent: float = DEFAULT_ROOT_EXPONENT

    def __call__(self, x) -> np.ndarray:
        y = pca_apply(self.pca, x) if self.pca is not None else np.asarray(x, dtype=np.float64)
        return root_normalize(y, self.exponent)
