"""Solve the alignment constraints for the manifold camera coefficients.

For manifold coordinates ``m`` the unknown in-place rotation and field of
view ``c = (alpha, beta, gamma, psi)`` are chosen so that the crop window
computed from the projected eyes and mouth has ``c - s`` at (0, 0.5) and
``c + s`` at (1, 0.5): the camera image is already aligned.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .align2d import ANCHOR_MINUS, ANCHOR_PLUS, crop_window_arrays
from .camera import (
    DEFAULT_FACE,
    CanonicalFeatures3D,
    ManifoldCoefficients,
    ManifoldCoord,
    ProjectionError,
    euler_rotation,
    manifold_camera,
)
from .lm import LMSettings, lm_minimize

__all__ = ["LMSettings", "SolveReport", "SolverError", "residuals", "solve_coefficients", "initial_coefficients"]


class SolverError(ValueError):
    pass


@dataclass(frozen=True)
class SolveReport:
    coefficients: ManifoldCoefficients
    residual: float
    iterations: int
    converged: bool


def initial_coefficients(d: float) -> np.ndarray:
    return np.array([0.0, 0.0, 0.0, math.degrees(2.0 * math.atan(4.0 / d))])


def _projected_features(m: ManifoldCoord, face: CanonicalFeatures3D, coeffs):
    """Project the three features for a batch of coefficient vectors (k, 4) -> (k, 3, 2)."""
    C = np.atleast_2d(np.asarray(coeffs, dtype=float))
    q = face.points() @ euler_rotation(m.theta, m.phi, 0.0).T - np.array([0.0, 0.0, m.d])
    R = euler_rotation(C[:, 0], C[:, 1], C[:, 2])
    pc = np.einsum("kij,pj->kpi", R, q)
    w = -pc[..., 2]
    if np.any(np.abs(w) <= 1e-12):
        raise ProjectionError("feature lies on the camera plane")
    f = 0.5 / np.tan(np.radians(C[:, 3]) / 2.0)
    u = 0.5 + f[:, None] * pc[..., 0] / w
    v = 0.5 - f[:, None] * pc[..., 1] / w
    return np.stack([u, v], -1)


def _batch_residuals(m, face, coeffs):
    x = _projected_features(m, face, coeffs)
    c, s = crop_window_arrays(x[:, 0], x[:, 1], x[:, 2])
    return np.concatenate([c - s - ANCHOR_MINUS, c + s - ANCHOR_PLUS], -1)


def residuals(m: ManifoldCoord, c, face: CanonicalFeatures3D = DEFAULT_FACE) -> np.ndarray:
    """The four alignment residuals ``[(c - s) - x_minus, (c + s) - x_plus]``."""
    arr = c.as_array() if isinstance(c, ManifoldCoefficients) else np.asarray(c, dtype=float)
    return _batch_residuals(m, face, arr)[0]


def _check_degenerate(m, face, coeffs):
    x = _projected_features(m, face, coeffs)[0]
    e = x[1] - x[0]
    mo = x[2] - x[0]
    if np.linalg.norm(e) < 1e-12 and abs(e[0] * mo[1] - e[1] * mo[0]) < 1e-12:
        raise SolverError(f"degenerate feature projection at m=({m.theta}, {m.phi}, {m.d})")


def solve_coefficients(
    m: ManifoldCoord,
    face: CanonicalFeatures3D = DEFAULT_FACE,
    settings: LMSettings | None = None,
    warm_start: ManifoldCoefficients | None = None,
) -> SolveReport:
    if not m.d > 0:
        raise SolverError("manifold distance must be positive")
    settings = settings or LMSettings()
    x0 = warm_start.as_array() if warm_start is not None else initial_coefficients(m.d)
    _check_degenerate(m, face, x0)

    def f(batch):
        C = np.asarray(batch, dtype=float)
        out = np.full((C.shape[0], 4), np.inf)
        ok = (C[:, 3] > 0.0) & (C[:, 3] < 180.0)
        if ok.any():
            out[ok] = _batch_residuals(m, face, C[ok])
        return out

    x, rep = lm_minimize(_finite_guard(f), x0, settings, vectorized=True)
    _check_degenerate(m, face, x)
    return SolveReport(ManifoldCoefficients.from_array(x), rep.residual, rep.iterations, rep.converged)


def _finite_guard(f):
    """Map out-of-domain trial points to a huge finite cost so LM rejects them."""

    def g(batch):
        r = f(batch)
        return np.where(np.isfinite(r), r, 1e150)

    return g


def solved_camera(m: ManifoldCoord, face=DEFAULT_FACE, settings=None, warm_start=None):
    """Convenience: solve and build the manifold camera; returns ``(camera, report)``."""
    rep = solve_coefficients(m, face, settings, warm_start)
    return manifold_camera(m, rep.coefficients), rep
