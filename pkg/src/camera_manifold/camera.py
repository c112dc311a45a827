"""Pinhole cameras, the trackball parameterization and the manifold camera.

Conventions
-----------
World / canonical frame: right-handed, eyes at (-1, 0, 0) and (1, 0, 0),
a frontal viewer sits on +z looking towards -z, y points up.

Camera frame: right-handed, the camera looks down its -z axis, x right, y up.

Normalized image coordinates: (u, v) in [0, 1]^2, origin top-left, v grows
downward.  The field of view is vertical; images are square so it is also
the horizontal field of view.

Euler angles are given in degrees.  ``euler_rotation(yaw, pitch, roll)``
rotates world points first by ``yaw`` about y, then by ``pitch`` about x,
then by ``roll`` about the optical axis::

    R = Rz(roll) @ Rx(pitch) @ Ry(-yaw)

With this choice the trackball camera ``R(theta, phi, 0)`` followed by a
translation of ``d`` along the view axis sits at the spherical position
``d * (sin(theta) cos(phi), sin(phi), cos(theta) cos(phi))``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ROTATION_TOL = 1e-9
PLANE_EPS = 1e-12


class ProjectionError(ValueError):
    """Raised when a point cannot be projected (it lies on the camera plane)."""


def rot_x(a):
    """Rotation about x by ``a`` radians; ``a`` may be an array (returns ...x3x3)."""
    a = np.asarray(a, dtype=float)
    c, s = np.cos(a), np.sin(a)
    o, z = np.ones_like(a), np.zeros_like(a)
    return np.stack([
        np.stack([o, z, z], -1),
        np.stack([z, c, -s], -1),
        np.stack([z, s, c], -1),
    ], -2)


def rot_y(a):
    a = np.asarray(a, dtype=float)
    c, s = np.cos(a), np.sin(a)
    o, z = np.ones_like(a), np.zeros_like(a)
    return np.stack([
        np.stack([c, z, s], -1),
        np.stack([z, o, z], -1),
        np.stack([-s, z, c], -1),
    ], -2)


def rot_z(a):
    a = np.asarray(a, dtype=float)
    c, s = np.cos(a), np.sin(a)
    o, z = np.ones_like(a), np.zeros_like(a)
    return np.stack([
        np.stack([c, -s, z], -1),
        np.stack([s, c, z], -1),
        np.stack([z, z, o], -1),
    ], -2)


def euler_rotation(yaw, pitch, roll=0.0):
    """World-to-camera rotation for Euler angles in degrees (broadcasts)."""
    yaw, pitch, roll = (np.radians(np.asarray(v, dtype=float)) for v in (yaw, pitch, roll))
    return rot_z(roll) @ rot_x(pitch) @ rot_y(-yaw)


def spherical_position(theta, phi, d):
    """Camera center for manifold coordinates (degrees, degrees, distance)."""
    t, p = math.radians(theta), math.radians(phi)
    return d * np.array([math.sin(t) * math.cos(p), math.sin(p), math.cos(t) * math.cos(p)])


def spherical_coords(position):
    """Inverse of :func:`spherical_position`: returns (theta, phi, d)."""
    x, y, z = (float(c) for c in position)
    d = math.sqrt(x * x + y * y + z * z)
    if d == 0.0:
        raise ValueError("camera at the eye midpoint has no spherical coordinates")
    theta = math.degrees(math.atan2(x, z))
    phi = math.degrees(math.asin(max(-1.0, min(1.0, y / d))))
    return theta, phi, d


def focal_from_fov(fov_deg):
    """Focal length in normalized image units (image height == 1)."""
    return 0.5 / np.tan(np.radians(fov_deg) / 2.0)


@dataclass(frozen=True)
class PinholeCamera:
    """Perspective camera; ``rotation`` maps world directions to camera directions.

    A world point ``p`` has camera coordinates ``rotation @ (p - position)``.
    """

    rotation: np.ndarray
    position: np.ndarray
    fov: float
    aspect: float = 1.0
    manifold: dict | None = field(default=None, compare=False)

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=float).reshape(3, 3)
        C = np.asarray(self.position, dtype=float).reshape(3)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "position", C)
        if not 0.0 < self.fov < 180.0:
            raise ValueError(f"field of view must lie in (0, 180) degrees, got {self.fov}")
        if np.abs(R @ R.T - np.eye(3)).max() > ROTATION_TOL or abs(np.linalg.det(R) - 1.0) > ROTATION_TOL:
            raise ValueError("camera rotation must be orthonormal with determinant +1")

    @property
    def focal(self) -> float:
        return float(focal_from_fov(self.fov))

    @property
    def translation(self) -> np.ndarray:
        """Extrinsic translation t with ``p_cam = R p + t``."""
        return -self.rotation @ self.position

    def intrinsics(self) -> np.ndarray:
        """3x3 matrix taking camera coordinates to homogeneous normalized (u, v, 1)."""
        f = self.focal
        return np.array([[f, 0.0, -0.5], [0.0, -f, -0.5], [0.0, 0.0, -1.0]])

    def matrix(self) -> np.ndarray:
        """3x4 projection matrix in homogeneous normalized image coordinates."""
        return self.intrinsics() @ np.hstack([self.rotation, self.translation[:, None]])

    def to_camera(self, points) -> np.ndarray:
        p = np.asarray(points, dtype=float)
        return (p - self.position) @ self.rotation.T

    def project(self, points):
        """Project world points; returns ``(uv, in_front)`` arrays.

        Raises :class:`ProjectionError` if any point lies on the camera plane.
        """
        pc = self.to_camera(points)
        z = pc[..., 2]
        if np.any(np.abs(z) <= PLANE_EPS):
            raise ProjectionError("point lies on the camera plane")
        f = self.focal
        w = -z
        uv = np.stack([0.5 + f * pc[..., 0] / w, 0.5 - f * pc[..., 1] / w], -1)
        return uv, w > 0

    def project_safe(self, points):
        """Like :meth:`project` but returns NaN instead of raising."""
        pc = self.to_camera(points)
        w = -pc[..., 2]
        ok = np.abs(w) > PLANE_EPS
        w_safe = np.where(ok, w, 1.0)
        f = self.focal
        uv = np.stack([0.5 + f * pc[..., 0] / w_safe, 0.5 - f * pc[..., 1] / w_safe], -1)
        uv[~ok] = np.nan
        return uv, ok & (w > 0), w

    def ray_directions(self, uv) -> np.ndarray:
        """Unit world-space ray directions through normalized image points."""
        uv = np.asarray(uv, dtype=float)
        f = self.focal
        dc = np.stack([(uv[..., 0] - 0.5) / f, -(uv[..., 1] - 0.5) / f, -np.ones(uv.shape[:-1])], -1)
        dw = dc @ self.rotation
        return dw / np.linalg.norm(dw, axis=-1, keepdims=True)

    @property
    def forward(self) -> np.ndarray:
        return -self.rotation[2]

    def with_fov(self, fov: float) -> "PinholeCamera":
        return PinholeCamera(self.rotation, self.position, fov, self.aspect)

    def to_json(self) -> dict:
        out = {
            "position": [float(v) for v in self.position],
            "rotation": [float(v) for v in self.rotation.reshape(-1)],
            "fov_deg": float(self.fov),
        }
        if self.manifold is not None:
            out["manifold"] = self.manifold
        return out

    @classmethod
    def from_json(cls, data: dict) -> "PinholeCamera":
        try:
            rot = np.asarray(data["rotation"], dtype=float).reshape(3, 3)
            pos = np.asarray(data["position"], dtype=float).reshape(3)
            fov = float(data["fov_deg"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ValueError(f"malformed camera record: {exc}") from exc
        return cls(rot, pos, fov, manifold=data.get("manifold"))


@dataclass(frozen=True)
class ManifoldCoord:
    """Spherical camera position around the eye midpoint (degrees, degrees, half-interocular units)."""

    theta: float
    phi: float
    d: float
    valid: bool = True

    def as_array(self) -> np.ndarray:
        return np.array([self.theta, self.phi, self.d])

    @property
    def position(self) -> np.ndarray:
        return spherical_position(self.theta, self.phi, self.d)


@dataclass(frozen=True)
class ManifoldCoefficients:
    """In-place rotation (alpha: yaw, beta: pitch, gamma: roll) and field of view, all degrees."""

    alpha: float
    beta: float
    gamma: float
    psi: float

    def __post_init__(self):
        if not 0.0 < self.psi < 180.0:
            raise ValueError(f"manifold field of view must lie in (0, 180), got {self.psi}")

    def as_array(self) -> np.ndarray:
        return np.array([self.alpha, self.beta, self.gamma, self.psi])

    @classmethod
    def from_array(cls, a) -> "ManifoldCoefficients":
        a = [float(v) for v in a]
        return cls(*a)


@dataclass(frozen=True)
class CanonicalFeatures3D:
    """Eye and mouth positions of a face in canonical coordinates."""

    p_l: np.ndarray
    p_r: np.ndarray
    p_m: np.ndarray

    def __post_init__(self):
        for name in ("p_l", "p_r", "p_m"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float).reshape(3))
        axis = self.p_r - self.p_l
        if np.linalg.norm(np.cross(axis, self.p_m - self.p_l)) <= 1e-12 * max(1.0, np.dot(axis, axis)):
            raise ValueError("mouth position is collinear with the eye axis")

    def points(self) -> np.ndarray:
        return np.stack([self.p_l, self.p_r, self.p_m])

    def to_json(self) -> dict:
        return {k: [float(v) for v in getattr(self, k)] for k in ("p_l", "p_r", "p_m")}

    @classmethod
    def from_json(cls, data: dict) -> "CanonicalFeatures3D":
        return cls(data["p_l"], data["p_r"], data["p_m"])

    @classmethod
    def from_mouth(cls, p_m) -> "CanonicalFeatures3D":
        return cls((-1.0, 0.0, 0.0), (1.0, 0.0, 0.0), p_m)


# Mouth 1.7 half-interocular units below the eye line, 1/4 closer to a frontal viewer.
DEFAULT_FACE = CanonicalFeatures3D.from_mouth((0.0, -1.7, 0.25))


def trackball_camera(theta, phi, d, psi) -> PinholeCamera:
    """Orbit camera looking at the eye midpoint."""
    if d <= 0:
        raise ValueError("distance d must be positive")
    R = euler_rotation(theta, phi, 0.0)
    return PinholeCamera(R, spherical_position(theta, phi, d), psi)


def manifold_camera(m: ManifoldCoord, c: ManifoldCoefficients) -> PinholeCamera:
    """Trackball camera at ``m`` with the extra in-place rotation and fov of ``c``."""
    if m.d <= 0:
        raise ValueError("distance d must be positive")
    R = euler_rotation(c.alpha, c.beta, c.gamma) @ euler_rotation(m.theta, m.phi, 0.0)
    return PinholeCamera(
        R,
        spherical_position(m.theta, m.phi, m.d),
        c.psi,
        manifold={"theta": m.theta, "phi": m.phi, "d": m.d, "coeffs": [float(v) for v in c.as_array()]},
    )


def project_point(cam: PinholeCamera, p):
    """Project a single world point; returns ``(uv, in_front)``."""
    uv, front = cam.project(np.asarray(p, dtype=float))
    return uv, bool(front)


def look_at(position, target, up=(0.0, 1.0, 0.0), fov=30.0, roll=0.0) -> PinholeCamera:
    """Camera at ``position`` looking at ``target`` with an optional roll in degrees."""
    position = np.asarray(position, dtype=float)
    fwd = np.asarray(target, dtype=float) - position
    fwd /= np.linalg.norm(fwd)
    right = np.cross(fwd, up)
    if np.linalg.norm(right) < 1e-12:
        right = np.cross(fwd, (0.0, 0.0, 1.0))
    right /= np.linalg.norm(right)
    true_up = np.cross(right, fwd)
    R = np.stack([right, true_up, -fwd])
    if roll:
        R = rot_z(math.radians(roll)) @ R
    return PinholeCamera(R, position, fov)
