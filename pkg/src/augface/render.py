"""Z-buffered software rasterization of textured face meshes.

Texture comes from a source image: every vertex carries its projection into
the source (``u, v``) and its source-camera depth. Per-pixel texture
coordinates are interpolated projectively, which makes a render at the source
pose reproduce the source exactly at pixel centres. Pixels whose texture is
missing (vertex hidden or outside the source) are filled from the mirrored
side of the face when that side is valid ("soft symmetry"), with a short
feathering band between the two sources.

Traversal is fully vectorized; ties in the depth buffer are broken by
triangle index, so repeated renders are bitwise identical.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage

from .geometry import Intrinsics, Mesh, Pose

NEAR = 1e-6
FEATHER_PX = 3.0
DEPTH_TOL = 1e-3  # fraction of the mesh depth extent


@dataclass(frozen=True)
class TexCoords:
    """Per-vertex lookup into a source image.

    ``uv`` holds (u, v) pixel coordinates, ``depth`` the vertex depth in the
    source camera (ones for plain atlas coordinates) and ``valid`` whether the
    vertex may be textured from the source.
    """

    uv: np.ndarray
    depth: np.ndarray
    valid: np.ndarray


@dataclass(frozen=True)
class Fragments:
    """Per-pixel rasterization result: covering triangle, weights, depth."""

    tri: np.ndarray
    weights: np.ndarray
    depth: np.ndarray

    @property
    def covered(self) -> np.ndarray:
        return self.tri >= 0


@dataclass(frozen=True)
class RenderOutput:
    image: np.ndarray
    mask: np.ndarray
    depth: np.ndarray
    # pixels textured purely from their own, source-visible vertices
    visible: np.ndarray
    fragments: Fragments | None = None
    flags: frozenset = field(default_factory=frozenset)


def _edge(ax, ay, bx, by, px, py):
    return (bx - ax) * (py - ay) - (by - ay) * (px - ax)


def rasterize_fragments(cam_vertices, triangles, intrinsics: Intrinsics, width: int, height: int) -> Fragments:
    """Depth-test camera-space triangles onto a ``width`` x ``height`` grid."""
    cam = np.asarray(cam_vertices, dtype=np.float64)
    tris = np.asarray(triangles, dtype=np.int64)
    tri_buf = np.full((height, width), -1, dtype=np.int64)
    w_buf = np.zeros((height, width, 3))
    z_buf = np.full((height, width), np.inf)
    if len(tris) == 0:
        return Fragments(tri_buf, w_buf, z_buf)

    z = cam[:, 2]
    front = np.all(z[tris] > NEAR, axis=1)
    tri_ids = np.flatnonzero(front)
    t = tris[tri_ids]
    zs = np.where(z > NEAR, z, 1.0)
    u = intrinsics.cx + intrinsics.focal * cam[:, 0] / zs
    v = intrinsics.cy + intrinsics.focal * cam[:, 1] / zs
    x0, x1, x2 = u[t[:, 0]], u[t[:, 1]], u[t[:, 2]]
    y0, y1, y2 = v[t[:, 0]], v[t[:, 1]], v[t[:, 2]]
    area = _edge(x0, y0, x1, y1, x2, y2)
    xmin = np.maximum(np.ceil(np.minimum(np.minimum(x0, x1), x2)), 0)
    xmax = np.minimum(np.floor(np.maximum(np.maximum(x0, x1), x2)), width - 1)
    ymin = np.maximum(np.ceil(np.minimum(np.minimum(y0, y1), y2)), 0)
    ymax = np.minimum(np.floor(np.maximum(np.maximum(y0, y1), y2)), height - 1)
    keep = (np.abs(area) > 1e-12) & (xmin <= xmax) & (ymin <= ymax)
    if not keep.any():
        return Fragments(tri_buf, w_buf, z_buf)
    tri_ids, t, area = tri_ids[keep], t[keep], area[keep]
    x0, x1, x2, y0, y1, y2 = (a[keep] for a in (x0, x1, x2, y0, y1, y2))
    xmin, xmax, ymin, ymax = (a[keep].astype(np.int64) for a in (xmin, xmax, ymin, ymax))

    bw = xmax - xmin + 1
    counts = bw * (ymax - ymin + 1)
    k = np.repeat(np.arange(len(tri_ids)), counts)
    local = np.arange(counts.sum()) - np.repeat(np.cumsum(counts) - counts, counts)
    px = xmin[k] + local % bw[k]
    py = ymin[k] + local // bw[k]
    fx, fy = px.astype(np.float64), py.astype(np.float64)
    l0 = _edge(x1[k], y1[k], x2[k], y2[k], fx, fy) / area[k]
    l1 = _edge(x2[k], y2[k], x0[k], y0[k], fx, fy) / area[k]
    l2 = 1.0 - l0 - l1
    eps = -1e-9
    inside = (l0 >= eps) & (l1 >= eps) & (l2 >= eps)
    k, px, py, l0, l1, l2 = k[inside], px[inside], py[inside], l0[inside], l1[inside], l2[inside]
    tk = t[k]
    q0, q1, q2 = l0 / z[tk[:, 0]], l1 / z[tk[:, 1]], l2 / z[tk[:, 2]]
    inv = q0 + q1 + q2
    depth = 1.0 / inv

    pix = py * width + px
    order = np.lexsort((k, depth, pix))
    pix_sorted = pix[order]
    first = np.ones(len(order), dtype=bool)
    first[1:] = pix_sorted[1:] != pix_sorted[:-1]
    win = order[first]
    flat = pix[win]
    tri_buf.ravel()[flat] = tri_ids[k[win]]
    z_buf.ravel()[flat] = depth[win]
    w_buf.reshape(-1, 3)[flat] = np.column_stack([q0[win], q1[win], q2[win]]) / inv[win][:, None]
    return Fragments(tri_buf, w_buf, z_buf)


def _projected(mesh: Mesh, pose: Pose, intrinsics: Intrinsics):
    cam = pose.to_camera(mesh.vertices)
    z = cam[:, 2]
    zs = np.where(z > NEAR, z, np.nan)
    uv = np.column_stack([intrinsics.cx + intrinsics.focal * cam[:, 0] / zs,
                          intrinsics.cy + intrinsics.focal * cam[:, 1] / zs])
    return cam, uv


def vertex_visibility(mesh: Mesh, pose: Pose, intrinsics: Intrinsics, tol: float = DEPTH_TOL) -> np.ndarray:
    """True where a vertex is not hidden by other parts of the mesh.

    The depth buffer is rendered over the projected extent of the mesh; a
    vertex is visible when its depth does not exceed the covering surface's
    depth at its exact projection by more than ``tol`` times the mesh depth
    extent. Vertices behind the camera are not visible.
    """
    cam, uv = _projected(mesh, pose, intrinsics)
    front = np.isfinite(uv[:, 0])
    visible = np.zeros(len(cam), dtype=bool)
    if not front.any():
        return visible
    lo = np.floor(uv[front].min(axis=0)) - 2
    hi = np.ceil(uv[front].max(axis=0)) + 2
    size = np.minimum(hi - lo + 1, 8192).astype(int)
    shifted = Intrinsics(intrinsics.focal, intrinsics.cx - lo[0], intrinsics.cy - lo[1])
    fr = rasterize_fragments(cam, mesh.triangles, shifted, int(size[0]), int(size[1]))

    z = cam[:, 2]
    tau = tol * max(np.ptp(z[front]), 1e-12)
    idx = np.flatnonzero(front)
    px = np.clip(np.rint(uv[idx, 0] - lo[0]).astype(int), 0, size[0] - 1)
    py = np.clip(np.rint(uv[idx, 1] - lo[1]).astype(int), 0, size[1] - 1)
    tri = fr.tri[py, px]
    uncovered = tri < 0
    visible[idx[uncovered]] = True
    sel = ~uncovered
    vi, tri = idx[sel], tri[sel]
    tv = mesh.triangles[tri]
    own = np.any(tv == vi[:, None], axis=1)
    visible[vi[own]] = True
    # Evaluate the covering triangle's surface depth at the vertex projection.
    vi, tv = vi[~own], tv[~own]
    if len(vi):
        ax, ay = uv[tv[:, 0], 0], uv[tv[:, 0], 1]
        bx, by = uv[tv[:, 1], 0], uv[tv[:, 1], 1]
        cx_, cy_ = uv[tv[:, 2], 0], uv[tv[:, 2], 1]
        px_, py_ = uv[vi, 0], uv[vi, 1]
        area = _edge(ax, ay, bx, by, cx_, cy_)
        area = np.where(np.abs(area) > 1e-12, area, 1e-12)
        l0 = _edge(bx, by, cx_, cy_, px_, py_) / area
        l1 = _edge(cx_, cy_, ax, ay, px_, py_) / area
        l2 = 1.0 - l0 - l1
        inv = l0 / z[tv[:, 0]] + l1 / z[tv[:, 1]] + l2 / z[tv[:, 2]]
        surf = np.where(inv > 0, 1.0 / np.where(inv > 0, inv, 1.0), np.inf)
        visible[vi] = z[vi] <= surf + tau
    return visible


def texture_from_image(mesh: Mesh, source, source_pose: Pose, intrinsics: Intrinsics) -> TexCoords:
    """Register the source image onto the mesh by projecting every vertex."""
    h, w = np.shape(source)[:2]
    cam, uv = _projected(mesh, source_pose, intrinsics)
    inside = (np.isfinite(uv).all(axis=1) & (uv[:, 0] >= 0) & (uv[:, 0] <= w - 1)
              & (uv[:, 1] >= 0) & (uv[:, 1] <= h - 1))
    valid = inside & vertex_visibility(mesh, source_pose, intrinsics)
    return TexCoords(np.nan_to_num(uv, nan=-1.0), cam[:, 2].copy(), valid)


def atlas_texcoords(uv) -> TexCoords:
    """Texture coordinates into a fixed atlas image (no projective weighting)."""
    uv = np.asarray(uv, dtype=np.float64)
    return TexCoords(uv, np.ones(len(uv)), np.ones(len(uv), dtype=bool))


def sample_bilinear(image, u, v) -> np.ndarray:
    """Bilinear lookup at pixel coordinates; returns (N,) or (N, C)."""
    img = np.asarray(image, dtype=np.float64)
    coords = np.vstack([v, u])
    if img.ndim == 2:
        return ndimage.map_coordinates(img, coords, order=1, mode="nearest")
    return np.stack([ndimage.map_coordinates(img[..., c], coords, order=1, mode="nearest")
                     for c in range(img.shape[2])], axis=-1)


def _lookup(fr: Fragments, sel, vert_ids, texcoords: TexCoords):
    """Interpolated (u, v) and validity for covered pixels ``sel``."""
    w = fr.weights[sel]
    ids = vert_ids
    wz = w * texcoords.depth[ids]
    wz /= wz.sum(axis=1, keepdims=True)
    uv = np.einsum("nk,nkc->nc", wz, texcoords.uv[ids])
    return uv, texcoords.valid[ids].all(axis=1)


def rasterize(mesh: Mesh, texcoords: TexCoords, source, target_pose: Pose,
              intrinsics: Intrinsics, out_size, symmetry: bool = True) -> RenderOutput:
    """Render the textured mesh at ``target_pose`` onto a black canvas.

    ``out_size`` is ``(width, height)``. Pixels without own texture are
    handed to :func:`soft_symmetry_fill` when ``symmetry`` is set and are
    otherwise left as background.
    """
    width, height = out_size
    src = np.asarray(source, dtype=np.float64)
    channels = () if src.ndim == 2 else (src.shape[2],)
    cam = target_pose.to_camera(mesh.vertices)
    fr = rasterize_fragments(cam, mesh.triangles, intrinsics, width, height)
    covered = fr.covered
    image = np.zeros((height, width) + channels)
    own_valid = np.zeros((height, width), dtype=bool)
    flags = set()
    if not covered.any():
        warnings.warn("render covers no pixels", RuntimeWarning, stacklevel=2)
        flags.add("empty")
    else:
        ids = mesh.triangles[fr.tri[covered]]
        uv, ok = _lookup(fr, covered, ids, texcoords)
        cy, cx = np.nonzero(covered)
        good = ok
        image[cy[good], cx[good]] = sample_bilinear(src, uv[good, 0], uv[good, 1])
        own_valid[cy[good], cx[good]] = True
    depth = np.where(own_valid, fr.depth, np.inf)
    partial = RenderOutput(image, own_valid, depth, own_valid.copy(), fr, frozenset(flags))
    if symmetry and covered.any():
        return soft_symmetry_fill(partial, mesh, texcoords, src)
    return partial


def soft_symmetry_fill(partial: RenderOutput, mesh: Mesh, texcoords: TexCoords, source,
                       band: float = FEATHER_PX) -> RenderOutput:
    """Fill untextured face pixels from the mirrored vertices.

    Within ``band`` pixels of an untextured region the own texture is blended
    with the mirrored one, weight rising linearly with distance. Pixels with no
    valid texture on either side stay black and outside the mask.
    """
    fr = partial.fragments
    if fr is None:
        raise ValueError("soft symmetry needs the render's fragments")
    covered = fr.covered
    own_valid = partial.visible
    missing = covered & ~own_valid
    if not missing.any():
        return partial
    if mesh.symmetry_map is None:
        warnings.warn("mesh has no symmetry map; soft-symmetry fill skipped", RuntimeWarning, stacklevel=2)
        return replace(partial, flags=partial.flags | {"no_symmetry"})

    src = np.asarray(source, dtype=np.float64)
    ids = mesh.symmetry_map[mesh.triangles[fr.tri[covered]]]
    uv, ok = _lookup(fr, covered, ids, texcoords)
    cy, cx = np.nonzero(covered)
    mirror_valid = np.zeros_like(covered)
    mirror_valid[cy[ok], cx[ok]] = True
    mirror = np.zeros_like(partial.image)
    mirror[cy[ok], cx[ok]] = sample_bilinear(src, uv[ok, 0], uv[ok, 1])

    dist = ndimage.distance_transform_edt(~missing)
    alpha = np.where(own_valid, np.where(mirror_valid, np.clip(dist / band, 0.0, 1.0), 1.0), 0.0)
    if partial.image.ndim == 3:
        a = alpha[..., None]
    else:
        a = alpha
    mask = covered & (own_valid | mirror_valid)
    image = np.where((mask[..., None] if partial.image.ndim == 3 else mask),
                     a * partial.image + (1.0 - a) * mirror, 0.0)
    depth = np.where(mask, fr.depth, np.inf)
    visible = own_valid & (alpha >= 1.0)
    return RenderOutput(image, mask, depth, visible, fr, partial.flags | {"symmetry"})
