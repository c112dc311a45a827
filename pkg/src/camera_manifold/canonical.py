"""Alignment of a reconstructed head to the canonical frame.

The canonical frame has the eyes at (-1, 0, 0) and (1, 0, 0).  The
remaining rotational freedom about the eye axis is fixed by the frontal
pose rule: seen from the frontal viewer on +z, the mouth is one eighth of
the interocular distance closer than the eye midpoint, i.e. its canonical
z equals +2/8.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import ndimage

from .align2d import FeaturePoints2D
from .camera import PinholeCamera, CanonicalFeatures3D, rot_x, rot_y, rot_z
from .lm import LMSettings, lm_minimize
from .mesh import TriangleMesh

EYE_L = np.array([-1.0, 0.0, 0.0])
EYE_R = np.array([1.0, 0.0, 0.0])
MOUTH_DEPTH = 2.0 / 8.0
FEATURE_NAMES = ("left eye", "right eye", "mouth")


class AlignmentError(ValueError):
    pass


@dataclass(frozen=True)
class CalibratedView:
    """An input photograph with its camera; landmarks are in pixel units (pixel centers at +0.5)."""

    image: np.ndarray
    camera: PinholeCamera
    landmarks: FeaturePoints2D | None = None
    matte: np.ndarray | None = None
    name: str = ""

    def __post_init__(self):
        if self.image is None or np.asarray(self.image).size == 0:
            raise ValueError("view image is empty")

    @property
    def size(self) -> tuple[int, int]:
        h, w = np.asarray(self.image).shape[:2]
        return w, h

    def normalized_landmarks(self) -> FeaturePoints2D | None:
        if self.landmarks is None:
            return None
        w, h = self.size
        return self.landmarks.scaled(1.0 / w, 1.0 / h)


def rotvec_matrix(w) -> np.ndarray:
    """Rodrigues' formula."""
    w = np.asarray(w, dtype=float)
    theta = np.linalg.norm(w)
    if theta < 1e-300:
        return np.eye(3)
    k = w / theta
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + math.sin(theta) * K + (1 - math.cos(theta)) * (K @ K)


@dataclass(frozen=True)
class SimilarityTransform3D:
    """``p -> scale * rotation @ p + translation``."""

    scale: float
    rotation: np.ndarray
    translation: np.ndarray
    residual: float = 0.0
    iterations: int = 0
    converged: bool = True

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", np.asarray(self.translation, dtype=float).reshape(3))
        if not self.scale > 0:
            raise ValueError("similarity scale must be positive")
        if abs(np.linalg.det(R) - 1.0) > 1e-9 or np.abs(R @ R.T - np.eye(3)).max() > 1e-9:
            raise ValueError("similarity rotation must be a proper rotation")

    def __call__(self, p):
        return self.scale * np.asarray(p, dtype=float) @ self.rotation.T + self.translation

    def inverse(self) -> "SimilarityTransform3D":
        Rt = self.rotation.T
        return SimilarityTransform3D(1.0 / self.scale, Rt, -(Rt @ self.translation) / self.scale)

    def compose(self, other: "SimilarityTransform3D") -> "SimilarityTransform3D":
        """``self(other(p))``."""
        return SimilarityTransform3D(
            self.scale * other.scale, self.rotation @ other.rotation, self(other.translation)
        )

    def matrix(self) -> np.ndarray:
        M = np.eye(4)
        M[:3, :3] = self.scale * self.rotation
        M[:3, 3] = self.translation
        return M

    @classmethod
    def identity(cls) -> "SimilarityTransform3D":
        return cls(1.0, np.eye(3), np.zeros(3))

    def to_json(self) -> dict:
        return {
            "scale": float(self.scale),
            "rotation": [float(v) for v in self.rotation.reshape(-1)],
            "translation": [float(v) for v in self.translation],
            "residual": float(self.residual),
        }


def random_similarity(rng) -> SimilarityTransform3D:
    R = rot_z(rng.uniform(-np.pi, np.pi)) @ rot_x(rng.uniform(-np.pi, np.pi)) @ rot_y(rng.uniform(-np.pi, np.pi))
    return SimilarityTransform3D(float(np.exp(rng.uniform(-1.5, 1.5))), R, rng.normal(scale=5.0, size=3))


# --- feature lifting --------------------------------------------------------

@dataclass(frozen=True)
class LiftResult:
    points: np.ndarray        # (3, 3): left eye, right eye, mouth
    hits: np.ndarray          # (3,) views whose ray hit the mesh, per feature

    def features(self) -> CanonicalFeatures3D:
        return CanonicalFeatures3D(*self.points)


def lift_features(views, mesh: TriangleMesh) -> LiftResult:
    """Cast each view's feature rays onto the mesh and average the hits per feature."""
    sums = np.zeros((3, 3))
    hits = np.zeros(3, dtype=int)
    used = 0
    for view in views:
        lm = view.normalized_landmarks()
        if lm is None:
            continue
        used += 1
        cam = view.camera
        dirs = cam.ray_directions(lm.as_array())
        res = mesh.intersect(np.broadcast_to(cam.position, dirs.shape), dirs)
        for k in range(3):
            if res.hit[k]:
                sums[k] += res.points[k]
                hits[k] += 1
    if used == 0:
        raise AlignmentError("no view carries landmarks")
    for k in range(3):
        if hits[k] == 0:
            raise AlignmentError(f"{FEATURE_NAMES[k]} ray misses the mesh in every view")
    return LiftResult(sums / hits[:, None], hits)


# --- canonical transform ----------------------------------------------------

def _initial_frame(p_l, p_r, p_m):
    e = p_r - p_l
    ne = np.linalg.norm(e)
    if ne < 1e-12:
        raise AlignmentError("eye positions coincide")
    x = e / ne
    w = p_m - 0.5 * (p_l + p_r)
    w_perp = w - (w @ x) * x
    if np.linalg.norm(w_perp) < 1e-9 * max(ne, 1.0):
        raise AlignmentError("mouth lies on the eye axis")
    y = -w_perp / np.linalg.norm(w_perp)
    z = np.cross(x, y)
    R0 = np.stack([x, y, z])
    s0 = 2.0 / ne
    t0 = -s0 * R0 @ (0.5 * (p_l + p_r))
    return s0, R0, t0


def canonical_transform(p_l, p_r, p_m, settings: LMSettings | None = None) -> SimilarityTransform3D:
    """Similarity taking the eyes to (+-1, 0, 0) with the frontal mouth-depth rule.

    Seven equations in seven unknowns (log-scale, rotation vector,
    translation), solved by Levenberg-Marquardt from a closed-form frame
    with the mouth straight below the eyes.
    """
    p_l, p_r, p_m = (np.asarray(p, dtype=float).reshape(3) for p in (p_l, p_r, p_m))
    s0, R0, t0 = _initial_frame(p_l, p_r, p_m)
    settings = settings or LMSettings(residual_tol=1e-13, jacobian_step=1e-7)

    def unpack(x):
        R = rotvec_matrix(x[1:4]) @ R0
        return s0 * math.exp(x[0]), R, t0 + x[4:7]

    def f(x):
        s, R, t = unpack(x)
        ql, qr, qm = (s * R @ p + t for p in (p_l, p_r, p_m))
        return np.concatenate([ql - EYE_L, qr - EYE_R, [qm[2] - MOUTH_DEPTH]])

    x, rep = lm_minimize(f, np.zeros(7), settings)
    s, R, t = unpack(x)
    # re-orthonormalize against round-off accumulated in the rotation product
    u, _, vt = np.linalg.svd(R)
    R = u @ vt
    return SimilarityTransform3D(float(s), R, t, rep.residual, rep.iterations, rep.converged)


def transform_camera(t: SimilarityTransform3D, cam: PinholeCamera) -> PinholeCamera:
    """Camera that sees ``t(p)`` where ``cam`` saw ``p``."""
    R = cam.rotation @ t.rotation.T
    u, _, vt = np.linalg.svd(R)
    return PinholeCamera(u @ vt, t(cam.position), cam.fov, cam.aspect)


def apply_canonical(t: SimilarityTransform3D, mesh: TriangleMesh, views):
    """Map the mesh and every view's camera into the canonical frame."""
    new_mesh = mesh.transformed(t)
    new_views = [replace(v, camera=transform_camera(t, v.camera)) for v in views]
    return new_mesh, new_views


# --- background blur --------------------------------------------------------

BLUR_TRUNCATE = 3.0


def gaussian_blur(image, sigma):
    img = np.asarray(image, dtype=float)
    sig = (sigma, sigma) + (0,) * (img.ndim - 2)
    return ndimage.gaussian_filter(img, sig, mode="nearest", truncate=BLUR_TRUNCATE)


def background_blur(image, matte, sigma=None):
    """Blur the background (matte 0) by normalized convolution and composite the foreground on top."""
    img = np.asarray(image, dtype=float)
    m = np.asarray(matte, dtype=float)
    if m.ndim == 3:
        m = m[..., 0]
    if m.shape != img.shape[:2]:
        raise ValueError(f"matte shape {m.shape} does not match image {img.shape[:2]}")
    if np.any((m < 0) | (m > 1)):
        raise ValueError("matte values must lie in [0, 1]")
    if sigma is None:
        sigma = img.shape[1] / 10.0
    bg = 1.0 - m
    bgc = bg[..., None] if img.ndim == 3 else bg
    num = gaussian_blur(img * bgc, sigma)
    den = gaussian_blur(bg, sigma)
    den_c = den[..., None] if img.ndim == 3 else den
    safe = den_c > 1e-12
    blurred = np.where(safe, num / np.where(safe, den_c, 1.0), img)
    mc = m[..., None] if img.ndim == 3 else m
    return mc * img + (1.0 - mc) * blurred
