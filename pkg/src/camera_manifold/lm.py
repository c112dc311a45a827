"""A small Levenberg-Marquardt engine with central-difference Jacobians."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MAX_DAMPING = 1e20


@dataclass(frozen=True)
class LMSettings:
    max_iters: int = 200
    damping_init: float = 1e-3
    damping_up: float = 10.0
    damping_down: float = 0.1
    step_tol: float = 1e-12
    residual_tol: float = 1e-12
    jacobian_step: float = 1e-6

    def __post_init__(self):
        if self.max_iters <= 0:
            raise ValueError("max_iters must be positive")
        for name in ("damping_init", "step_tol", "residual_tol", "jacobian_step"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if not self.damping_up > 1.0:
            raise ValueError("damping_up must exceed 1")
        if not 0.0 < self.damping_down < 1.0:
            raise ValueError("damping_down must lie in (0, 1)")


@dataclass
class LMReport:
    x: np.ndarray
    residual: float
    iterations: int
    converged: bool
    last_step: float
    reason: str


class LMError(ValueError):
    pass


def rms(r) -> float:
    r = np.asarray(r, dtype=float)
    return float(np.sqrt(np.mean(r * r))) if r.size else 0.0


def numeric_jacobian(f, x, h, vectorized=False):
    """Central-difference Jacobian of ``f`` at ``x``."""
    n = x.size
    E = np.eye(n) * h
    if vectorized:
        probes = np.concatenate([x + E, x - E])
        vals = np.asarray(f(probes), dtype=float)
        return ((vals[:n] - vals[n:]) / (2.0 * h)).T
    cols = [(np.asarray(f(x + E[i]), dtype=float) - np.asarray(f(x - E[i]), dtype=float)) / (2.0 * h)
            for i in range(n)]
    return np.stack(cols, -1)


def lm_minimize(f, x0, settings: LMSettings | None = None, vectorized=False, jacobian=None):
    """Minimize ``0.5 * |f(x)|^2`` from ``x0``.

    ``f`` maps an n-vector to an m-vector.  With ``vectorized=True`` it must
    also accept a (k, n) batch and return (k, m); the Jacobian is then built
    from one batched call.  A step is accepted iff it strictly lowers the
    cost.  Damping is Marquardt-scaled by the diagonal of ``J^T J``.

    Returns ``(x, LMReport)``.  Non-convergence is reported, not raised; NaN
    residuals raise :class:`LMError`.
    """
    s = settings or LMSettings()
    x = np.array(x0, dtype=float).reshape(-1)

    def evaluate(v):
        r = np.asarray(f(v[None] if vectorized else v), dtype=float).reshape(-1)
        if not np.all(np.isfinite(r)):
            raise LMError(f"non-finite residual at x={v}")
        return r

    r = evaluate(x)
    cost = float(r @ r)
    lam = s.damping_init
    last_step = 0.0
    for it in range(1, s.max_iters + 1):
        if rms(r) < s.residual_tol:
            return x, LMReport(x, rms(r), it - 1, True, last_step, "residual")
        J = jacobian(x) if jacobian is not None else numeric_jacobian(f, x, s.jacobian_step, vectorized)
        if not np.all(np.isfinite(J)):
            raise LMError("non-finite Jacobian")
        JtJ = J.T @ J
        g = J.T @ r
        diag = np.diag(JtJ).copy()
        floor = 1e-12 * max(diag.max(initial=0.0), 1.0)
        diag = np.maximum(diag, floor)
        while True:
            A = JtJ + lam * np.diag(diag)
            try:
                step = -np.linalg.solve(A, g)
            except np.linalg.LinAlgError:
                step = -np.linalg.lstsq(A, g, rcond=None)[0]
            x_new = x + step
            r_new = evaluate(x_new)
            cost_new = float(r_new @ r_new)
            if cost_new < cost:
                last_step = float(np.linalg.norm(step))
                x, r, cost = x_new, r_new, cost_new
                lam = max(lam * s.damping_down, 1e-300)
                break
            lam *= s.damping_up
            if lam > MAX_DAMPING:
                return x, LMReport(x, rms(r), it, False, 0.0, "stalled")
        if last_step < s.step_tol * (np.linalg.norm(x) + s.step_tol):
            done = rms(r) < s.residual_tol
            return x, LMReport(x, rms(r), it, True, last_step, "residual" if done else "step")
    converged = rms(r) < s.residual_tol
    return x, LMReport(x, rms(r), s.max_iters, converged, last_step, "residual" if converged else "max_iters")
