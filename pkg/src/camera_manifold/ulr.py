"""Unstructured lumigraph blending of calibrated views over the proxy mesh.

Each target pixel's surface point is reprojected into every input view.
Views that see the point (in frame, unoccluded) are weighted by the inverse
angle between the target ray and the view ray, the best ``k`` are kept and
normalized.  Besides the blended color the per-pixel color variance under
the same weights is returned; ``confidence`` turns it into the
``exp(-eta * var)`` weight of the confidence-weighted l1 term.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .camera import PinholeCamera
from .imaging import pixel_centers, sample_normalized
from .mesh import TriangleMesh

TOP_K = 4
ANGLE_EPS = 1e-3
OCCLUSION_BIAS = 1e-3
DEFAULT_ETA = 100.0


@dataclass
class BlendField:
    color: np.ndarray       # (H, W, C)
    variance: np.ndarray    # (H, W)
    coverage: np.ndarray    # (H, W) contributing views
    weight_sum: np.ndarray | None = None
    weights: np.ndarray | None = None   # (H, W, n_views) normalized blend weights

    @classmethod
    def from_input_view(cls, image) -> "BlendField":
        """An input photograph as training target: variance is zero by definition."""
        img = np.asarray(image, dtype=float)
        h, w = img.shape[:2]
        return cls(img, np.zeros((h, w)), np.ones((h, w), dtype=int))


@dataclass
class ConfidenceMap:
    weights: np.ndarray
    eta: float = DEFAULT_ETA


def _ray_angles(a, b):
    """Angle between unit direction arrays, accurate near zero."""
    cross = np.linalg.norm(np.cross(a, b), axis=-1)
    dot = np.einsum("...i,...i->...", a, b)
    return np.arctan2(cross, dot)


def visible_from(mesh: TriangleMesh, cam: PinholeCamera, points, bias):
    """Visibility of surface points from a camera center.

    Equivalent to a depth-map test queried at each point's exact projection:
    a ray from the center towards the point must not hit the mesh before
    ``|point - center| - bias``.
    """
    vec = points - cam.position
    dist = np.linalg.norm(vec, axis=-1)
    hits = mesh.intersect(np.broadcast_to(cam.position, vec.shape), vec / dist[:, None])
    return hits.t >= dist - bias


def ulr_render(views, mesh: TriangleMesh, target: PinholeCamera, resolution, k=TOP_K,
               eps=ANGLE_EPS, keep_weights=False) -> BlendField:
    """Blend ``views`` into the ``target`` camera at ``resolution`` (int or (W, H))."""
    if not views:
        raise ValueError("need at least one input view")
    w, h = (resolution, resolution) if np.isscalar(resolution) else resolution
    uv = pixel_centers(w, h).reshape(-1, 2)
    dirs = target.ray_directions(uv)
    hits = mesh.intersect(np.broadcast_to(target.position, dirs.shape), dirs)
    covered = np.flatnonzero(hits.hit)
    X = hits.points[covered]
    n = len(views)
    n_ch = np.asarray(views[0].image).shape[2] if np.asarray(views[0].image).ndim == 3 else 1
    bias = OCCLUSION_BIAS * mesh.diagonal
    weights = np.zeros((len(covered), n))
    colors = np.zeros((len(covered), n, n_ch))
    t_dir = X - target.position
    t_dir /= np.linalg.norm(t_dir, axis=1, keepdims=True)
    for i, view in enumerate(views):
        cam = view.camera
        puv, front, _ = cam.project_safe(X)
        ok = front & np.all((puv >= 0.0) & (puv <= 1.0), axis=1)
        idx = np.flatnonzero(ok)
        if len(idx):
            vis = visible_from(mesh, cam, X[idx], bias)
            idx = idx[vis]
        if not len(idx):
            continue
        v_dir = X[idx] - cam.position
        v_dir /= np.linalg.norm(v_dir, axis=1, keepdims=True)
        weights[idx, i] = 1.0 / (_ray_angles(t_dir[idx], v_dir) + eps)
        c = sample_normalized(view.image, puv[idx])
        colors[idx, i] = c.reshape(len(idx), n_ch)
    if n > k:
        rank = np.argsort(np.argsort(-weights, axis=1, kind="stable"), axis=1)
        weights = np.where(rank < k, weights, 0.0)
    total = weights.sum(1)
    norm_w = np.where(total[:, None] > 0, weights / np.where(total > 0, total, 1.0)[:, None], 0.0)
    color = np.einsum("pv,pvc->pc", norm_w, colors)
    var = np.einsum("pv,pvc->pc", norm_w, (colors - color[:, None]) ** 2).mean(1)
    cov = (norm_w > 0).sum(1)
    var[cov <= 1] = 0.0

    out_c = np.zeros((h * w, n_ch))
    out_v = np.zeros(h * w)
    out_n = np.zeros(h * w, dtype=int)
    out_s = np.zeros(h * w)
    out_c[covered] = color
    out_v[covered] = np.maximum(var, 0.0)
    out_n[covered] = cov
    out_s[covered] = norm_w.sum(1)
    full_w = None
    if keep_weights:
        full_w = np.zeros((h * w, n))
        full_w[covered] = norm_w
        full_w = full_w.reshape(h, w, n)
    shape_c = (h, w, n_ch) if n_ch > 1 else (h, w)
    return BlendField(out_c.reshape(shape_c), out_v.reshape(h, w), out_n.reshape(h, w),
                      out_s.reshape(h, w), full_w)


def confidence(b: BlendField, eta=DEFAULT_ETA) -> ConfidenceMap:
    return ConfidenceMap(np.exp(-eta * np.asarray(b.variance, dtype=float)), eta)


def weighted_l1(a, b, c: ConfidenceMap | np.ndarray) -> float:
    """Sum over pixels and channels of ``c * |a - b|``."""
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise ValueError(f"image shapes differ: {a.shape} vs {b.shape}")
    wmap = np.asarray(c.weights if isinstance(c, ConfidenceMap) else c, dtype=float)
    if wmap.shape != a.shape[:2]:
        raise ValueError(f"confidence shape {wmap.shape} does not match image {a.shape[:2]}")
    diff = np.abs(a - b)
    if diff.ndim == 3:
        diff = diff.sum(-1)
    return float(np.sum(wmap * diff))
