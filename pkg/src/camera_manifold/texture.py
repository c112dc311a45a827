"""Providers of manifold-view images.

A texture source is any callable ``source(m, camera, resolution)`` that
returns the (resolution, resolution) image seen by the manifold camera at
coordinate ``m``.  The unstructured-lumigraph provider blends calibrated
input views; the directory provider serves pre-rendered images keyed by
manifold coordinate.
"""
from __future__ import annotations

import logging
from pathlib import Path

import numpy as np

from .camera import ManifoldCoord, PinholeCamera
from .imaging import read_image
from .mesh import TriangleMesh
from .synthetic import procedural_texture, render_view
from .ulr import TOP_K, ulr_render

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".ppm", ".pgm")


class ULRSource:
    def __init__(self, views, mesh: TriangleMesh, k=TOP_K, background=0.0):
        if not views:
            raise ValueError("ULR source needs at least one view")
        self.views = list(views)
        self.mesh = mesh
        self.k = k
        self.background = background

    def __call__(self, m: ManifoldCoord, cam: PinholeCamera, resolution: int) -> np.ndarray:
        b = ulr_render(self.views, self.mesh, cam, resolution, self.k)
        img = b.color
        if self.background:
            img = np.where((b.coverage > 0)[..., None] if img.ndim == 3 else b.coverage > 0, img, self.background)
        return img


class GroundTruthSource:
    """Direct ray-cast of a procedurally textured mesh (for synthetic scenes)."""

    def __init__(self, mesh: TriangleMesh, texture=procedural_texture):
        self.mesh = mesh
        self.texture = texture

    def __call__(self, m: ManifoldCoord, cam: PinholeCamera, resolution: int) -> np.ndarray:
        return render_view(self.mesh, cam, resolution, self.texture)[0]


def coordinate_key(m: ManifoldCoord) -> str:
    return f"t{m.theta:+08.3f}_p{m.phi:+08.3f}_d{m.d:07.3f}"


class DirectorySource:
    """Images named ``coordinate_key(m)`` + suffix; missing keys fall back to another source."""

    def __init__(self, directory, fallback=None):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise FileNotFoundError(f"texture directory {self.directory} does not exist")
        self.fallback = fallback
        self.misses = 0

    def lookup(self, m: ManifoldCoord) -> Path | None:
        key = coordinate_key(m)
        for suffix in IMAGE_SUFFIXES:
            p = self.directory / (key + suffix)
            if p.exists():
                return p
        return None

    def __call__(self, m: ManifoldCoord, cam: PinholeCamera, resolution: int) -> np.ndarray:
        p = self.lookup(m)
        if p is not None:
            img = read_image(p)
            if img.shape[:2] != (resolution, resolution):
                raise ValueError(f"{p}: expected {resolution}x{resolution}, got {img.shape[1]}x{img.shape[0]}")
            return img
        if self.fallback is None:
            raise FileNotFoundError(f"no texture for {coordinate_key(m)} in {self.directory}")
        self.misses += 1
        logger.warning("no texture for %s in %s, falling back to ULR", coordinate_key(m), self.directory)
        return self.fallback(m, cam, resolution)
