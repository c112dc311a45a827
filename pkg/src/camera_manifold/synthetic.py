"""Synthetic scenes for tests, demos and the self-test.

The synthetic head is a smooth height field whose eyes sit at (-1, 0, 0)
and (1, 0, 0) and whose mouth sits at the default canonical mouth
position, all three on grid vertices.  Colors come from a procedural,
view-independent texture so that every view agrees on surface color.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .align2d import FeaturePoints2D, LEFT_EYE, MOUTH, RIGHT_EYE
from .camera import DEFAULT_FACE, PinholeCamera, look_at, spherical_position
from .canonical import CalibratedView, SimilarityTransform3D, transform_camera
from .imaging import pixel_centers
from .mesh import TriangleMesh, height_field_mesh, merge_meshes, quad_mesh

HEAD_X = (-3.0, 3.0)
HEAD_Y = (-4.0, 3.0)
HEAD_STEP = 0.1

# z = 0.3 - 0.3 x^2 - 0.05 y^2 + k y passes through the eyes at z = 0 and
# through the mouth (0, -1.7, 0.25)
_MOUTH = DEFAULT_FACE.p_m
_K = (_MOUTH[2] - 0.3 + 0.05 * _MOUTH[1] ** 2) / _MOUTH[1]


def head_height(x, y):
    return 0.3 - 0.3 * x ** 2 - 0.05 * y ** 2 + _K * y


def synthetic_head(step=HEAD_STEP) -> TriangleMesh:
    nx = int(round((HEAD_X[1] - HEAD_X[0]) / step)) + 1
    ny = int(round((HEAD_Y[1] - HEAD_Y[0]) / step)) + 1
    return height_field_mesh(head_height, HEAD_X, HEAD_Y, nx, ny)


def two_depth_scene(near_z=0.0, far_z=-6.0) -> TriangleMesh:
    """A small near card in front of a large far wall, for parallax tests."""
    return merge_meshes(quad_mesh((0.0, 0.0, near_z), 1.5, 1.5), quad_mesh((0.0, 0.0, far_z), 12.0, 12.0))


def procedural_texture(points) -> np.ndarray:
    """Smooth RGB color as a function of 3D position."""
    p = np.asarray(points, dtype=float)
    x, y, z = p[..., 0], p[..., 1], p[..., 2]
    return np.stack([
        0.5 + 0.3 * np.sin(1.3 * x + 0.4 * y),
        0.5 + 0.3 * np.sin(-0.7 * x + 1.1 * y + 0.5 * z),
        0.5 + 0.3 * np.cos(0.9 * x - 0.6 * y + 1.3 * z),
    ], -1)


def render_view(mesh: TriangleMesh, cam: PinholeCamera, resolution, texture=procedural_texture,
                background=(0.1, 0.1, 0.1)):
    """Ray-cast an image; returns ``(image (H, W, 3), matte (H, W), depth (H, W))``."""
    w, h = (resolution, resolution) if np.isscalar(resolution) else resolution
    uv = pixel_centers(w, h).reshape(-1, 2)
    dirs = cam.ray_directions(uv)
    hits = mesh.intersect(np.broadcast_to(cam.position, dirs.shape), dirs)
    img = np.empty((h * w, 3))
    img[:] = background
    img[hits.hit] = texture(hits.points[hits.hit])
    return img.reshape(h, w, 3), hits.hit.reshape(h, w).astype(float), hits.t.reshape(h, w)


def landmarks_from_features(cam: PinholeCamera, face, size, jitter=0.02):
    """68-point landmark set whose eye and mouth means equal the projected features.

    Offsets are symmetric so they cancel in the mean.  Returns the
    aggregated features and the raw (68, 2) points, both in pixel units.
    """
    w, h = size
    uv, _ = cam.project(face.points())
    px = uv * np.array([w, h])
    pts = np.zeros((68, 2))
    for group, centre in ((LEFT_EYE, px[0]), (RIGHT_EYE, px[1]), (MOUTH, px[2])):
        n = len(group)
        ang = 2 * np.pi * np.arange(n) / n
        pts[list(group)] = centre + jitter * w * np.stack([np.cos(ang), 0.5 * np.sin(ang)], -1)
    # fill the remaining contour points with something plausible
    pts[:36] = px[2] + np.stack([np.linspace(-0.2, 0.2, 36) * w, np.zeros(36)], -1)
    return FeaturePoints2D(*(pts[list(g)].mean(0) for g in (LEFT_EYE, RIGHT_EYE, MOUTH))), pts


@dataclass
class SyntheticDataset:
    mesh: TriangleMesh
    views: list
    canonical_mesh: TriangleMesh
    canonical_cameras: list
    scramble: SimilarityTransform3D
    raw_landmarks: list


def orbit_cameras(n_views, d=12.0, yaw_span=40.0, pitch=(-8.0, 10.0), fov=36.0):
    """Cameras spread over a yaw arc, alternating pitch, all looking at the eye midpoint."""
    yaws = np.linspace(-yaw_span / 2, yaw_span / 2, n_views)
    pitches = np.where(np.arange(n_views) % 2 == 0, pitch[0], pitch[1])
    return [look_at(spherical_position(t, p, d), (0.0, -0.6, 0.0), fov=fov) for t, p in zip(yaws, pitches)]


def make_dataset(n_views=8, resolution=64, scramble: SimilarityTransform3D | None = None,
                 with_mattes=True, face=DEFAULT_FACE) -> SyntheticDataset:
    """Render a calibrated multi-view dataset of the synthetic head.

    Views are rendered in the canonical frame and then expressed in the
    ``scramble`` frame (mesh and cameras both), so images and landmarks are
    frame independent.
    """
    scramble = scramble or SimilarityTransform3D.identity()
    mesh_c = synthetic_head()
    cams_c = orbit_cameras(n_views)
    views, raws = [], []
    for i, cam in enumerate(cams_c):
        img, matte, _ = render_view(mesh_c, cam, resolution)
        feats, raw = landmarks_from_features(cam, face, (resolution, resolution))
        views.append(CalibratedView(img, transform_camera(scramble, cam), feats,
                                    matte if with_mattes else None, name=f"view{i:02d}"))
        raws.append(raw)
    return SyntheticDataset(mesh_c.transformed(scramble), views, mesh_c, cams_c, scramble, raws)
