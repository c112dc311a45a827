"""FFHQ-style portrait alignment.

Three aggregated feature points (eyes and mouth) determine a square crop
window with center ``c`` and half-extent vector ``s``; the alignment is the
2D similarity taking ``c - s`` to (0, 0.5) and ``c + s`` to (1, 0.5) in
normalized aligned coordinates.

Image coordinates are y-down throughout.  The quarter turn used for the
crop orientation is a visual counter-clockwise rotation, which in y-down
coordinates reads ``(x, y) -> (y, -x)``; it reproduces the reference
``eye_to_eye - flipud(eye_to_mouth) * [-1, 1]`` construction.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .imaging import bilinear_sample

LAMBDA = 0.9
LEFT_EYE = tuple(range(36, 42))
RIGHT_EYE = tuple(range(42, 48))
MOUTH = tuple(range(48, 68))
ANCHOR_MINUS = np.array([0.0, 0.5])
ANCHOR_PLUS = np.array([1.0, 0.5])
DEFAULT_OUT_SIZE = 1024


class DegenerateFeaturesError(ValueError):
    pass


@dataclass(frozen=True)
class FeaturePoints2D:
    x_l: np.ndarray
    x_r: np.ndarray
    x_m: np.ndarray

    def __post_init__(self):
        for name in ("x_l", "x_r", "x_m"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(2))

    def as_array(self) -> np.ndarray:
        return np.stack([self.x_l, self.x_r, self.x_m])

    def scaled(self, sx, sy=None) -> "FeaturePoints2D":
        sy = sx if sy is None else sy
        k = np.array([sx, sy], dtype=float)
        return FeaturePoints2D(self.x_l * k, self.x_r * k, self.x_m * k)


@dataclass(frozen=True)
class CropWindow:
    c: np.ndarray
    s: np.ndarray
    lam: float = LAMBDA

    @property
    def minus(self) -> np.ndarray:
        return self.c - self.s

    @property
    def plus(self) -> np.ndarray:
        return self.c + self.s


@dataclass(frozen=True)
class SimilarityTransform2D:
    """``p -> scale * Rot(rotation) @ p + translation``."""

    scale: float
    rotation: float
    translation: np.ndarray

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError("similarity scale must be positive")
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(2))

    def matrix(self) -> np.ndarray:
        c, s = math.cos(self.rotation), math.sin(self.rotation)
        return self.scale * np.array([[c, -s], [s, c]])

    def __call__(self, p):
        return np.asarray(p, dtype=float) @ self.matrix().T + self.translation

    def inverse(self) -> "SimilarityTransform2D":
        inv_scale = 1.0 / self.scale
        c, s = math.cos(-self.rotation), math.sin(-self.rotation)
        t = -inv_scale * np.array([[c, -s], [s, c]]) @ self.translation
        return SimilarityTransform2D(inv_scale, -self.rotation, t)

    def compose(self, other: "SimilarityTransform2D") -> "SimilarityTransform2D":
        """``self(other(p))``."""
        return SimilarityTransform2D(
            self.scale * other.scale,
            self.rotation + other.rotation,
            self(other.translation),
        )

    @classmethod
    def from_point_pairs(cls, a0, a1, b0, b1) -> "SimilarityTransform2D":
        """The unique similarity taking a0 -> b0 and a1 -> b1."""
        za = complex(*(np.subtract(a1, a0)))
        zb = complex(*(np.subtract(b1, b0)))
        if za == 0:
            raise DegenerateFeaturesError("source points coincide")
        k = zb / za
        t = complex(*b0) - k * complex(*a0)
        return cls(abs(k), math.atan2(k.imag, k.real), np.array([t.real, t.imag]))


def rot90(v):
    """Visual counter-clockwise quarter turn in y-down coordinates."""
    v = np.asarray(v, dtype=float)
    return np.stack([v[..., 1], -v[..., 0]], -1)


def aggregate_features(raw) -> FeaturePoints2D:
    """Mean eye and mouth positions from 68 landmarks (iBUG 68-point order)."""
    pts = np.asarray(raw, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or pts.shape[0] < 68:
        raise ValueError(f"expected 68 landmarks of shape (68, 2), got {pts.shape}")
    return FeaturePoints2D(
        pts[list(LEFT_EYE)].mean(0), pts[list(RIGHT_EYE)].mean(0), pts[list(MOUTH)].mean(0)
    )


def crop_window_arrays(x_l, x_r, x_m):
    """Vectorized crop window: inputs (..., 2), returns ``(c, s)``.

    Degenerate windows yield NaN rather than raising.
    """
    x_l, x_r, x_m = (np.asarray(v, dtype=float) for v in (x_l, x_r, x_m))
    x_c = 0.5 * (x_l + x_r)
    c = LAMBDA * x_c + (1.0 - LAMBDA) * x_m
    s_hat = (x_r - x_l) + rot90(x_m - x_c)
    size = np.maximum(2.0 * np.linalg.norm(x_l - x_r, axis=-1), 1.8 * np.linalg.norm(x_m - x_c, axis=-1))
    norm = np.linalg.norm(s_hat, axis=-1)
    with np.errstate(invalid="ignore", divide="ignore"):
        s = (size / norm)[..., None] * s_hat
    return c, s


def compute_crop_window(f: FeaturePoints2D) -> CropWindow:
    if np.array_equal(f.x_l, f.x_r):
        raise DegenerateFeaturesError("eye positions coincide")
    x_c = 0.5 * (f.x_l + f.x_r)
    s_hat = (f.x_r - f.x_l) + rot90(f.x_m - x_c)
    if not np.linalg.norm(s_hat) > 0:
        raise DegenerateFeaturesError("crop orientation vector vanishes")
    c, s = crop_window_arrays(f.x_l, f.x_r, f.x_m)
    return CropWindow(c, s)


def alignment_transform(f: FeaturePoints2D) -> SimilarityTransform2D:
    """Similarity taking unaligned image points to normalized aligned coordinates."""
    w = compute_crop_window(f)
    return SimilarityTransform2D.from_point_pairs(w.minus, w.plus, ANCHOR_MINUS, ANCHOR_PLUS)


def resample_aligned(image, t: SimilarityTransform2D, out_size=DEFAULT_OUT_SIZE, src_units="pixels"):
    """Resample ``image`` into an ``out_size`` square aligned image.

    ``t`` maps source coordinates to normalized aligned coordinates.  With
    ``src_units="pixels"`` the source coordinates are pixel coordinates
    (pixel centers at integer + 0.5); with ``"normalized"`` they are in
    [0, 1]^2 of the source image.
    """
    image = np.asarray(image)
    if isinstance(out_size, int):
        out_w = out_h = out_size
    else:
        out_w, out_h = out_size
    if out_w <= 0 or out_h <= 0:
        raise ValueError("output size must be positive")
    inv = t.inverse()
    xs = (np.arange(out_w) + 0.5) / out_w
    ys = (np.arange(out_h) + 0.5) / out_h
    grid = np.stack(np.meshgrid(xs, ys), -1)
    src = inv(grid)
    h, w = image.shape[:2]
    if src_units == "normalized":
        src = src * np.array([w, h])
    elif src_units != "pixels":
        raise ValueError(f"unknown source units {src_units!r}")
    return bilinear_sample(image, src[..., 0] - 0.5, src[..., 1] - 0.5)
