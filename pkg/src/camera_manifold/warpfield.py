"""Inverse flow fields from free cameras to their manifold views, and warping.

A free camera (pinhole, radially distorted or one eye of a stereo rig) is
projected to the nearest valid manifold camera.  For every free-view sample
the proxy mesh gives a surface point whose projection into the manifold
camera is the lookup coordinate; rays that miss the mesh use the direction
at infinity.  Warping the manifold-view image with these lookups yields the
free view.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy import ndimage

from .camera import (
    DEFAULT_FACE,
    CanonicalFeatures3D,
    ManifoldCoefficients,
    ManifoldCoord,
    PinholeCamera,
    manifold_camera,
    spherical_coords,
)
from .imaging import read_f32r, sample_normalized, write_f32r
from .lm import LMSettings
from .manifold_range import MIN_DISTANCE, RangeParabolas, default_range, project_to_range
from .mesh import TriangleMesh
from .solver import SolveReport, solve_coefficients

logger = logging.getLogger(__name__)

MODELS = ("pinhole", "spherical", "stereo")

# rotated-grid supersampling offsets inside a pixel
RGSS_OFFSETS = np.array([[0.375, 0.125], [0.875, 0.375], [0.125, 0.625], [0.625, 0.875]])


def sample_offsets(samples_per_pixel: int) -> np.ndarray:
    if samples_per_pixel == 1:
        return np.array([[0.5, 0.5]])
    if samples_per_pixel == 4:
        return RGSS_OFFSETS
    n = int(round(math.sqrt(samples_per_pixel)))
    if n * n != samples_per_pixel:
        raise ValueError("samples_per_pixel must be 1, 4 or a perfect square")
    g = (np.arange(n) + 0.5) / n
    return np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)


@dataclass(frozen=True)
class FreeCamera:
    """A novel-view camera.

    ``model`` is ``"pinhole"``, ``"spherical"`` (radial distortion
    ``r' = r (1 + k1 r^2)`` applied to normalized ray coordinates) or
    ``"stereo"`` (center shifted by ``offset`` along the base camera's right
    axis, toed in to converge at ``convergence_depth`` in front of the base
    center unless ``parallel``).
    """

    base: PinholeCamera
    model: str = "pinhole"
    k1: float = 0.0
    offset: float = 0.0
    convergence_depth: float = 10.0
    parallel: bool = False

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown camera model {self.model!r}")
        if not abs(self.k1) < 1.0:
            raise ValueError("|k1| must be below 1")
        if not self.convergence_depth > 0:
            raise ValueError("convergence depth must be positive")

    @property
    def pinhole(self) -> PinholeCamera:
        """The undistorted pinhole camera this model is built on."""
        if self.model != "stereo":
            return self.base
        b = self.base
        right, up = b.rotation[0], b.rotation[1]
        center = b.position + self.offset * right
        if self.parallel or self.offset == 0.0:
            return PinholeCamera(b.rotation, center, b.fov, b.aspect)
        target = b.position + self.convergence_depth * b.forward
        fwd = target - center
        fwd /= np.linalg.norm(fwd)
        new_right = np.cross(fwd, up)
        new_right /= np.linalg.norm(new_right)
        R = np.stack([new_right, np.cross(new_right, fwd), -fwd])
        return PinholeCamera(R, center, b.fov, b.aspect)

    @property
    def position(self) -> np.ndarray:
        return self.pinhole.position

    def rays(self, uv):
        """World-space ``(origins, unit directions)`` through normalized image points."""
        cam = self.pinhole
        uv = np.asarray(uv, dtype=float).reshape(-1, 2)
        f = cam.focal
        x = (uv[:, 0] - 0.5) / f
        y = -(uv[:, 1] - 0.5) / f
        if self.model == "spherical" and self.k1:
            scale = 1.0 + self.k1 * (x * x + y * y)
            x, y = x * scale, y * scale
        dc = np.stack([x, y, -np.ones_like(x)], -1)
        dw = dc @ cam.rotation
        dw /= np.linalg.norm(dw, axis=1, keepdims=True)
        return np.broadcast_to(cam.position, dw.shape), dw

    def project_pinhole(self, points):
        """Projection for models without distortion (used by tests and stereo checks)."""
        if self.model == "spherical" and self.k1:
            raise ValueError("no closed-form projection with lens distortion")
        return self.pinhole.project(points)

    def to_json(self) -> dict:
        out = {"model": self.model, "camera": self.base.to_json()}
        if self.model == "spherical":
            out["k1"] = self.k1
        if self.model == "stereo":
            out.update(offset=self.offset, convergence_depth=self.convergence_depth, parallel=self.parallel)
        return out

    @classmethod
    def from_json(cls, data: dict) -> "FreeCamera":
        if "camera" not in data:
            raise ValueError("free camera record needs a 'camera' entry")
        return cls(
            PinholeCamera.from_json(data["camera"]),
            data.get("model", "pinhole"),
            float(data.get("k1", 0.0)),
            float(data.get("offset", 0.0)),
            float(data.get("convergence_depth", 10.0)),
            bool(data.get("parallel", False)),
        )


@dataclass
class FlowField:
    """Per-sample lookups into the manifold view.

    ``lookup`` is (H, W, S, 2) in normalized manifold-view coordinates,
    ``valid`` (H, W, S) marks usable lookups, ``hit`` (H, W, S) marks
    samples that hit the mesh and ``depth`` (H, W, S) their ray distance
    (inf for background).
    """

    lookup: np.ndarray
    valid: np.ndarray
    depth: np.ndarray
    hit: np.ndarray = None
    offsets: np.ndarray = field(default_factory=lambda: np.array([[0.5, 0.5]]))

    def __post_init__(self):
        if self.lookup.ndim == 3:
            self.lookup = self.lookup[:, :, None]
            self.valid = self.valid[:, :, None]
            self.depth = self.depth[:, :, None]
            if self.hit is not None:
                self.hit = self.hit[:, :, None]
        if self.hit is None:
            self.hit = np.isfinite(self.depth)

    @property
    def shape(self) -> tuple[int, int]:
        return self.lookup.shape[:2]

    @property
    def samples(self) -> int:
        return self.lookup.shape[2]

    @property
    def pixel_valid(self) -> np.ndarray:
        """Majority-valid policy: a pixel is usable when at least half its samples are."""
        return self.valid.sum(-1) * 2 >= self.samples

    def mean_lookup(self) -> np.ndarray:
        """Average lookup over valid samples (NaN where none)."""
        v = self.valid[..., None]
        n = v.sum(2)
        with np.errstate(invalid="ignore"):
            return np.where(v, self.lookup, 0.0).sum(2) / n

    @classmethod
    def identity(cls, width, height) -> "FlowField":
        xs = (np.arange(width) + 0.5) / width
        ys = (np.arange(height) + 0.5) / height
        lk = np.stack(np.meshgrid(xs, ys), -1)
        return cls(lk, np.ones((height, width), bool), np.ones((height, width)))

    def save(self, path) -> None:
        h, w = self.shape
        data = np.nan_to_num(self.lookup.reshape(h, w, -1), nan=0.0)
        write_f32r(path, data, self.valid.astype(np.uint8))

    @classmethod
    def load(cls, path) -> "FlowField":
        data, mask = read_f32r(path)
        h, w, c = data.shape
        if c % 2:
            raise ValueError(f"{path}: flow raster needs an even channel count")
        s = c // 2
        lookup = data.reshape(h, w, s, 2).astype(float)
        valid = np.ones((h, w, s), bool) if mask is None else mask.reshape(h, w, s).astype(bool)
        try:
            offs = sample_offsets(s)
        except ValueError:
            offs = np.full((s, 2), 0.5)
        return cls(lookup, valid, np.where(valid, 1.0, np.inf), valid.copy(), offs)


# --- manifold projection ----------------------------------------------------

@dataclass(frozen=True)
class ManifoldProjection:
    coord: ManifoldCoord
    coefficients: ManifoldCoefficients
    report: SolveReport
    inside: bool

    @property
    def camera(self) -> PinholeCamera:
        return manifold_camera(self.coord, self.coefficients)


def project_free_camera(free: FreeCamera, rng: RangeParabolas | None = None,
                        face: CanonicalFeatures3D = DEFAULT_FACE, settings: LMSettings | None = None,
                        warm_start: ManifoldCoefficients | None = None) -> ManifoldProjection:
    """Nearest valid manifold camera for ``free``: clamp ``d >= 10``, project (theta, phi), solve."""
    rng = rng or default_range()
    theta, phi, d = (float(v) for v in spherical_coords(free.position))
    d_m = max(d, MIN_DISTANCE)
    t_m, p_m = project_to_range(rng, theta, phi)
    inside = (t_m, p_m) == (theta, phi) and d_m == d
    m = ManifoldCoord(t_m, p_m, d_m)
    rep = solve_coefficients(m, face, settings, warm_start)
    return ManifoldProjection(m, rep.coefficients, rep, inside)


# --- flow rendering ---------------------------------------------------------

def _infinity_lookup(cam: PinholeCamera, dirs):
    dc = dirs @ cam.rotation.T
    w = -dc[:, 2]
    ok = w > 1e-12
    w = np.where(ok, w, 1.0)
    f = cam.focal
    uv = np.stack([0.5 + f * dc[:, 0] / w, 0.5 - f * dc[:, 1] / w], -1)
    return uv, ok


def render_flow(mesh: TriangleMesh, manifold_cam: PinholeCamera, free: FreeCamera, resolution,
                samples_per_pixel=4) -> FlowField:
    """Inverse flow from the free view (``resolution`` = int or (W, H)) into ``manifold_cam``."""
    w, h = (resolution, resolution) if np.isscalar(resolution) else resolution
    offs = sample_offsets(samples_per_pixel)
    s = len(offs)
    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    u = (jj[..., None] + offs[:, 0]) / w
    v = (ii[..., None] + offs[:, 1]) / h
    uv = np.stack([u, v], -1).reshape(-1, 2)
    origins, dirs = free.rays(uv)
    hits = mesh.intersect(origins, dirs)
    n = len(uv)
    lookup = np.full((n, 2), np.nan)
    valid = np.zeros(n, bool)
    hit = hits.hit
    if hit.any():
        luv, front, _ = manifold_cam.project_safe(hits.points[hit])
        lookup[hit] = luv
        valid[hit] = front
    miss = ~hit
    if miss.any():
        luv, ok = _infinity_lookup(manifold_cam, dirs[miss])
        lookup[miss] = luv
        valid[miss] = ok
    valid &= np.all(np.isfinite(lookup), axis=1)
    return FlowField(lookup.reshape(h, w, s, 2), valid.reshape(h, w, s), hits.t.reshape(h, w, s),
                     hit.reshape(h, w, s), offs)


# --- warping ----------------------------------------------------------------

def fill_holes(flow: FlowField) -> tuple[FlowField, np.ndarray]:
    """Give pixels failing the majority-valid policy the lookups of the nearest valid pixel.

    Returns the filled flow and the mask of filled pixels.
    """
    ok = flow.pixel_valid
    holes = ~ok
    if not holes.any() or not ok.any():
        return flow, holes if ok.any() else np.zeros_like(holes)
    _, (ri, ci) = ndimage.distance_transform_edt(holes, return_indices=True)
    lookup = flow.lookup[ri, ci]
    valid = flow.valid[ri, ci]
    depth = flow.depth[ri, ci]
    hit = flow.hit[ri, ci]
    return FlowField(lookup, valid, depth, hit, flow.offsets), holes


def warp(image, flow: FlowField, return_mask=False):
    """Backward-warp the manifold-view ``image`` through ``flow``.

    Each pixel averages the bilinear lookups of its valid samples.  Holes
    inherit the nearest valid pixel's lookups; ``return_mask=True`` also
    returns the mask of filled pixels.
    """
    img = np.asarray(image, dtype=float)
    filled, holes = fill_holes(flow)
    h, w = filled.shape
    s = filled.samples
    lk = np.nan_to_num(filled.lookup, nan=0.0)
    vals = sample_normalized(img, lk.reshape(-1, 2))
    n_ch = img.shape[2] if img.ndim == 3 else 1
    vals = vals.reshape(h, w, s, n_ch)
    wgt = filled.valid[..., None].astype(float)
    cnt = wgt.sum(2)
    out = np.where(cnt > 0, (vals * wgt).sum(2) / np.where(cnt > 0, cnt, 1.0), 0.0)
    if img.ndim == 2:
        out = out[..., 0]
    return (out, holes) if return_mask else out


# --- affine analysis --------------------------------------------------------

def fit_affine(flow: FlowField, manifold_size, mask=None):
    """Least-squares 2D affine map from free-view sample positions to lookups, in pixels.

    ``manifold_size`` is the (W, H) pixel size of the manifold view.
    Returns ``(A (2, 3), max residual in manifold-view pixels)``.
    """
    h, w = flow.shape
    mw, mh = (manifold_size, manifold_size) if np.isscalar(manifold_size) else manifold_size
    jj, ii = np.meshgrid(np.arange(w), np.arange(h))
    src = np.stack([jj[..., None] + flow.offsets[:, 0], ii[..., None] + flow.offsets[:, 1]], -1)
    dst = flow.lookup * np.array([mw, mh])
    sel = flow.valid if mask is None else (flow.valid & mask)
    src, dst = src[sel], dst[sel]
    if len(src) < 3:
        raise ValueError("need at least three valid samples to fit an affine map")
    X = np.hstack([src, np.ones((len(src), 1))])
    coef, *_ = np.linalg.lstsq(X, dst, rcond=None)
    res = np.linalg.norm(X @ coef - dst, axis=1)
    return coef.T, float(res.max())


def pinhole_homography(manifold_cam: PinholeCamera, free_cam: PinholeCamera, size) -> np.ndarray:
    """Homography in pixel units between two co-located pinhole cameras (free -> manifold)."""
    w, h = (size, size) if np.isscalar(size) else size
    S = np.diag([w, h, 1.0])
    Hn = manifold_cam.intrinsics() @ manifold_cam.rotation @ free_cam.rotation.T @ np.linalg.inv(free_cam.intrinsics())
    return S @ Hn @ np.linalg.inv(S)


# --- manifold state and free-view rendering ---------------------------------

TextureSource = Callable[[ManifoldCoord, PinholeCamera, int], np.ndarray]


@dataclass
class ManifoldState:
    """Everything needed to turn a free camera into an image."""

    mesh: TriangleMesh
    texture: TextureSource
    range: RangeParabolas = field(default_factory=default_range)
    face: CanonicalFeatures3D = DEFAULT_FACE
    settings: LMSettings | None = None
    manifold_resolution: int = 256
    samples_per_pixel: int = 4


@dataclass
class FreeViewResult:
    image: np.ndarray
    flow: FlowField
    projection: ManifoldProjection
    manifold_image: np.ndarray
    filled: np.ndarray


def render_free_view(state: ManifoldState, free: FreeCamera, resolution,
                     warm_start: ManifoldCoefficients | None = None) -> FreeViewResult:
    proj = project_free_camera(free, state.range, state.face, state.settings, warm_start)
    cam = proj.camera
    mimg = state.texture(proj.coord, cam, state.manifold_resolution)
    flow = render_flow(state.mesh, cam, free, resolution, state.samples_per_pixel)
    out, holes = warp(mimg, flow, return_mask=True)
    return FreeViewResult(out, flow, proj, mimg, holes)


def stereo_cameras(base: PinholeCamera, interocular, convergence_depth, parallel=False):
    half = 0.5 * interocular
    return (FreeCamera(base, "stereo", offset=-half, convergence_depth=convergence_depth, parallel=parallel),
            FreeCamera(base, "stereo", offset=half, convergence_depth=convergence_depth, parallel=parallel))


def stereo_pair(state: ManifoldState, base: PinholeCamera, interocular, convergence_depth, resolution,
                parallel=False):
    """Left and right eye renders; each eye is projected to its own manifold camera."""
    left, right = stereo_cameras(base, interocular, convergence_depth, parallel)
    lres = render_free_view(state, left, resolution)
    rres = render_free_view(state, right, resolution, lres.projection.coefficients)
    return lres, rres


def anaglyph(left, right) -> np.ndarray:
    """Red from the left eye, green and blue from the right."""
    left = np.asarray(left, dtype=float)
    right = np.asarray(right, dtype=float)
    if left.ndim == 2:
        left = np.repeat(left[..., None], 3, -1)
        right = np.repeat(right[..., None], 3, -1)
    return np.concatenate([left[..., :1], right[..., 1:3]], -1)


__all__ = [
    "FreeCamera", "FlowField", "ManifoldProjection", "ManifoldState", "FreeViewResult",
    "project_free_camera", "render_flow", "warp", "fill_holes", "fit_affine", "pinhole_homography",
    "render_free_view", "stereo_cameras", "stereo_pair", "anaglyph", "sample_offsets",
]
