"""The valid (theta, phi) region of the camera manifold.

The region is bounded by two parabolas ``c_u(theta) = a_u theta^2 + b_u``
(above) and ``c_l(theta) = a_l theta^2 + b_l`` (below), intersecting at
``theta = +-g``.
"""
from __future__ import annotations

import csv
import json
import math
import warnings
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import numpy as np

GRID_THETA = (-40.0, 40.0)
GRID_PHI = (-30.0, 30.0)
GRID_SHAPE = (96, 128)  # (phi cells, theta cells)
KERNEL_SIGMA_CELLS = 3.0
KERNEL_TRUNCATE = 4.0
MIN_DISTANCE = 10.0
MIN_FIT_SAMPLES = 100


class RangeError(ValueError):
    pass


@dataclass(frozen=True)
class RangeParabolas:
    a_u: float
    b_u: float
    a_l: float
    b_l: float

    def __post_init__(self):
        if not (self.a_u < 0.0 < self.a_l):
            raise RangeError(f"need a_u < 0 < a_l, got a_u={self.a_u}, a_l={self.a_l}")
        if not self.b_l < self.b_u:
            raise RangeError(f"need b_l < b_u, got b_l={self.b_l}, b_u={self.b_u}")

    @property
    def g(self) -> float:
        """Half-width of the region: |theta| of the parabola intersections."""
        return math.sqrt((self.b_l - self.b_u) / (self.a_u - self.a_l))

    @property
    def delta_a(self) -> float:
        return self.a_u - self.a_l

    @property
    def delta_b(self) -> float:
        return self.b_u - self.b_l

    @property
    def z(self) -> float:
        """Area of the region, the sampler's normalization constant."""
        g = self.g
        return 2.0 * (self.delta_a / 3.0 * g ** 3 + self.delta_b * g)

    def upper(self, theta):
        return self.a_u * np.square(theta) + self.b_u

    def lower(self, theta):
        return self.a_l * np.square(theta) + self.b_l

    def to_json(self) -> dict:
        return {"a_u": self.a_u, "b_u": self.b_u, "a_l": self.a_l, "b_l": self.b_l}

    @classmethod
    def from_json(cls, data: dict) -> "RangeParabolas":
        try:
            return cls(*(float(data[k]) for k in ("a_u", "b_u", "a_l", "b_l")))
        except KeyError as exc:
            raise RangeError(f"range record lacks {exc}") from exc

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "RangeParabolas":
        return cls.from_json(json.loads(Path(path).read_text()))


def default_range() -> RangeParabolas:
    """Shipped default bounds: -0.024 t^2 + 20.00 and 0.010 t^2 - 14.60."""
    text = resources.files("camera_manifold.data").joinpath("default_range.json").read_text()
    return RangeParabolas.from_json(json.loads(text))


def contains(r: RangeParabolas, theta, phi):
    """``c_l(theta) <= phi <= c_u(theta)``, elementwise."""
    res = (r.lower(theta) <= phi) & (phi <= r.upper(theta))
    return bool(res) if np.ndim(res) == 0 else res


# --- density estimation and fitting -----------------------------------------

@dataclass(frozen=True)
class DensityGrid:
    """Unnormalized KDE values; ``values[i, j]`` is the cell at ``phi[i]``, ``theta[j]``."""

    values: np.ndarray
    theta: np.ndarray
    phi: np.ndarray

    @property
    def cell(self) -> tuple[float, float]:
        return float(self.theta[1] - self.theta[0]), float(self.phi[1] - self.phi[0])


def grid_axes(shape=GRID_SHAPE, theta_range=GRID_THETA, phi_range=GRID_PHI):
    n_phi, n_theta = shape
    dt = (theta_range[1] - theta_range[0]) / n_theta
    dp = (phi_range[1] - phi_range[0]) / n_phi
    theta = theta_range[0] + (np.arange(n_theta) + 0.5) * dt
    phi = phi_range[0] + (np.arange(n_phi) + 0.5) * dp
    return theta, phi


def load_pose_samples(path) -> np.ndarray:
    """Read a ``theta,phi`` CSV (degrees, optional header)."""
    rows = []
    with open(path, newline="") as fh:
        for rec in csv.reader(fh):
            if not rec or rec[0].strip().startswith("#"):
                continue
            try:
                rows.append((float(rec[0]), float(rec[1])))
            except ValueError:
                if rows:
                    raise RangeError(f"{path}: malformed row {rec}")
    if not rows:
        raise RangeError(f"{path}: no pose samples")
    return np.asarray(rows)


def estimate_density(samples, shape=GRID_SHAPE, theta_range=GRID_THETA, phi_range=GRID_PHI,
                     sigma_cells=KERNEL_SIGMA_CELLS) -> DensityGrid:
    """Splat each (theta, phi) sample as a truncated Gaussian onto the grid."""
    s = np.asarray(samples, dtype=float).reshape(-1, 2)
    if s.shape[0] == 0:
        raise RangeError("no pose samples")
    if not np.all(np.isfinite(s)):
        raise RangeError("pose samples must be finite")
    theta, phi = grid_axes(shape, theta_range, phi_range)
    inside = ((s[:, 0] >= theta_range[0]) & (s[:, 0] <= theta_range[1])
              & (s[:, 1] >= phi_range[0]) & (s[:, 1] <= phi_range[1]))
    s = s[inside]
    dt, dp = theta[1] - theta[0], phi[1] - phi[0]
    values = np.zeros(shape)
    for chunk in np.array_split(s, max(1, len(s) // 4096 + 1)):
        if not len(chunk):
            continue
        xt = (theta[None, :] - chunk[:, :1]) / dt
        xp = (phi[None, :] - chunk[:, 1:]) / dp
        wt = np.exp(-0.5 * (xt / sigma_cells) ** 2) * (np.abs(xt) <= KERNEL_TRUNCATE * sigma_cells)
        wp = np.exp(-0.5 * (xp / sigma_cells) ** 2) * (np.abs(xp) <= KERNEL_TRUNCATE * sigma_cells)
        values += wp.T @ wt
    return DensityGrid(values, theta, phi)


def _lstsq_parabola(theta, phi):
    A = np.stack([theta ** 2, np.ones_like(theta)], -1)
    (a, b), *_ = np.linalg.lstsq(A, phi, rcond=None)
    return float(a), float(b)


def iso_contour_points(grid: DensityGrid, iso_fraction=0.01) -> np.ndarray:
    """Marching-squares iso-line at ``iso_fraction * max``; returns (N, 2) (theta, phi)."""
    from skimage import measure

    vmax = grid.values.max()
    if not vmax > 0:
        raise RangeError("density grid is empty")
    contours = measure.find_contours(grid.values, iso_fraction * vmax)
    if not contours:
        raise RangeError("no iso-contour found")
    pts = np.concatenate(contours)
    theta0, phi0 = grid.theta[0], grid.phi[0]
    dt, dp = grid.cell
    return np.stack([theta0 + pts[:, 1] * dt, phi0 + pts[:, 0] * dp], -1)


def fit_parabolas(grid: DensityGrid, iso_fraction=0.01, refine_iters=5) -> RangeParabolas:
    """Fit upper/lower bounding parabolas to the density iso-line.

    Contour points are split at the branch midline, initially the mean phi
    and afterwards the mean of the two current parabola fits.
    """
    pts = iso_contour_points(grid, iso_fraction)
    th, ph = pts[:, 0], pts[:, 1]
    mid = np.full_like(ph, ph.mean())
    coeffs = None
    for _ in range(refine_iters + 1):
        up = ph >= mid
        if up.sum() < 3 or (~up).sum() < 3:
            raise RangeError("an iso-contour branch has fewer than 3 points")
        a_u, b_u = _lstsq_parabola(th[up], ph[up])
        a_l, b_l = _lstsq_parabola(th[~up], ph[~up])
        new = (a_u, b_u, a_l, b_l)
        if new == coeffs:
            break
        coeffs = new
        mid = 0.5 * ((a_u + a_l) * th ** 2 + b_u + b_l)
    return RangeParabolas(*coeffs)


# --- projection -------------------------------------------------------------

def parabola_foot(a: float, b: float, theta: float, phi: float) -> float:
    """Closed-form theta of the closest point on ``phi = a t^2 + b`` to (theta, phi).

    Valid for points on the convex (outer) side, where the stationarity
    cubic has a single real root.  Cube roots use the real signed branch.
    """
    p3 = (1.0 + 2.0 * a * (b - phi)) / (6.0 * a * a)
    q2 = theta / (4.0 * a * a)
    disc = p3 ** 3 + q2 ** 2
    if disc < 0.0:
        return math.nan
    D = math.sqrt(disc)
    h = float(np.cbrt(q2 + D) + np.cbrt(q2 - D))
    # one Newton step on 2a^2 h^3 + (1 + 2a(b - phi)) h - theta = 0
    k = 1.0 + 2.0 * a * (b - phi)
    fp = 6.0 * a * a * h * h + k
    if fp != 0.0:
        h -= (2.0 * a * a * h ** 3 + k * h - theta) / fp
    return h


def project_to_range(r: RangeParabolas, theta: float, phi: float, flag=False):
    """Closest point of the valid region to (theta, phi).

    Inside points map to themselves.  A point above ``c_u`` whose foot on
    ``c_u`` lies within ``|t| <= g`` maps to that foot, likewise below
    ``c_l``; everything else maps to the nearer intersection corner
    ``(+-g, c_u(g))``.  With ``flag=True`` returns ``((theta, phi), fallback)``
    where ``fallback`` reports use of the brute-force search.
    """
    theta, phi = float(theta), float(phi)
    if contains(r, theta, phi):
        return ((theta, phi), False) if flag else (theta, phi)
    g = r.g
    cands = []
    fallback = False
    for a, b, outside in ((r.a_u, r.b_u, phi > r.upper(theta)), (r.a_l, r.b_l, phi < r.lower(theta))):
        if not outside:
            continue
        h = parabola_foot(a, b, theta, phi)
        if not math.isfinite(h):
            fallback = True
            continue
        if abs(h) <= g:
            cands.append((h, a * h * h + b))
    if fallback and not cands:
        _warn_fallback((theta, phi))
        res = brute_force_projection(r, np.array([[theta, phi]]))[0]
        res = (float(res[0]), float(res[1]))
        return (res, True) if flag else res
    if not cands:
        cands = [(-g, float(r.upper(g))), (g, float(r.upper(g)))]
    best = min(cands, key=lambda c: (c[0] - theta) ** 2 + (c[1] - phi) ** 2)
    best = (float(best[0]), float(best[1]))
    return (best, fallback) if flag else best


def boundary_samples(r: RangeParabolas, n=1_000_000) -> np.ndarray:
    """Dense samples of the region boundary (both arcs, corners included)."""
    g = r.g
    t = np.linspace(-g, g, n // 2)
    return np.concatenate([np.stack([t, r.upper(t)], -1), np.stack([t, r.lower(t)], -1)])


def brute_force_projection(r: RangeParabolas, queries, n=1_000_000) -> np.ndarray:
    """Nearest valid point by exhaustive nearest-neighbour search over boundary samples."""
    from scipy.spatial import cKDTree

    q = np.asarray(queries, dtype=float).reshape(-1, 2)
    out = q.copy()
    outside = ~contains(r, q[:, 0], q[:, 1])
    if outside.any():
        pts = boundary_samples(r, n)
        _, idx = cKDTree(pts).query(q[outside])
        out[outside] = pts[idx]
    return out


# --- sampling ---------------------------------------------------------------

def theta_pdf(r: RangeParabolas, theta):
    theta = np.asarray(theta, dtype=float)
    p = (r.delta_a * theta ** 2 + r.delta_b) / r.z
    return np.where(np.abs(theta) <= r.g, p, 0.0)


def theta_cdf(r: RangeParabolas, theta):
    theta = np.clip(np.asarray(theta, dtype=float), -r.g, r.g)
    return (r.delta_a * theta ** 3 / 3.0 + r.delta_b * theta) / r.z + 0.5


def inverse_theta_cdf(r: RangeParabolas, xi, tol=1e-10):
    """Invert the cubic CDF by bisection on [-g, g]."""
    xi = np.asarray(xi, dtype=float)
    lo = np.full(xi.shape, -r.g)
    hi = np.full(xi.shape, r.g)
    n_iter = int(math.ceil(math.log2(2.0 * r.g / tol))) + 1
    for _ in range(n_iter):
        mid = 0.5 * (lo + hi)
        below = theta_cdf(r, mid) < xi
        lo = np.where(below, mid, lo)
        hi = np.where(below, hi, mid)
    return 0.5 * (lo + hi)


def sample_manifold(r: RangeParabolas, xi, d_min=MIN_DISTANCE, d_max=40.0) -> np.ndarray:
    """Map uniforms ``xi`` (..., 3) to manifold coordinates (..., 3) = (theta, phi, d)."""
    if not d_max > d_min:
        raise RangeError("d_max must exceed d_min")
    if not r.z > 0:
        raise RangeError("degenerate range: empty region")
    xi = np.asarray(xi, dtype=float)
    if xi.shape[-1] != 3:
        raise ValueError("need three uniforms per sample")
    if np.any((xi < 0) | (xi > 1)):
        raise ValueError("uniforms must lie in [0, 1]")
    theta = inverse_theta_cdf(r, xi[..., 0])
    lo, hi = r.lower(theta), r.upper(theta)
    phi = lo + xi[..., 1] * (hi - lo)
    d = d_min + xi[..., 2] * (d_max - d_min)
    return np.stack([theta, phi, d], -1)


def draw_manifold_samples(r: RangeParabolas, count: int, seed: int, d_min=MIN_DISTANCE, d_max=40.0):
    rng = np.random.default_rng(seed)
    return sample_manifold(r, rng.random((count, 3)), d_min, d_max)


def validate_coordinate(r: RangeParabolas, theta, phi, d) -> bool:
    return bool(d >= MIN_DISTANCE and contains(r, theta, phi))


def _warn_fallback(q):
    warnings.warn(f"range projection fell back to brute force for {q}", RuntimeWarning, stacklevel=3)
