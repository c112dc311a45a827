"""Built-in oracle checks run by ``camera-manifold selftest``."""
from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np
from scipy import stats

from .camera import ManifoldCoord
from .manifold_range import (
    RangeParabolas,
    brute_force_projection,
    draw_manifold_samples,
    project_to_range,
    theta_cdf,
)
from .solver import solve_coefficients


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str

    def line(self) -> str:
        return f"{'PASS' if self.passed else 'FAIL'} {self.name}: {self.detail}"


def check_range_projection(r: RangeParabolas, n_queries=2000, seed=0, tol_deg=1e-3) -> CheckResult:
    rng = np.random.default_rng(seed)
    q = np.stack([rng.uniform(-60, 60, n_queries), rng.uniform(-45, 45, n_queries)], -1)
    ours = np.array([project_to_range(r, *p) for p in q])
    ref = brute_force_projection(r, q)
    err = np.abs(np.linalg.norm(ours - q, axis=1) - np.linalg.norm(ref - q, axis=1)).max()
    return CheckResult("range projection vs brute force", bool(err < tol_deg), f"max distance error {err:.2e} deg")


def check_sampler(r: RangeParabolas, count=100_000, seed=0, ks_max=0.01) -> CheckResult:
    s = draw_manifold_samples(r, count, seed)
    ks = stats.kstest(s[:, 0], lambda t: theta_cdf(r, t)).statistic
    return CheckResult("sampler theta KS statistic", bool(ks < ks_max), f"KS {ks:.4f} (n={count}, seed={seed})")


def check_solver_grid(r: RangeParabolas, max_iters=100, tol=1e-6) -> CheckResult:
    g = r.g
    t0 = time.perf_counter()
    worst_res, worst_it, failed = 0.0, 0, 0
    for d in (10.0, 20.0, 40.0):
        for th in np.linspace(-0.9 * g, 0.9 * g, 9):
            lo, hi = r.lower(th), r.upper(th)
            for ph in np.linspace(lo, hi, 9)[1:-1]:
                rep = solve_coefficients(ManifoldCoord(float(th), float(ph), d))
                worst_res = max(worst_res, rep.residual)
                worst_it = max(worst_it, rep.iterations)
                failed += not (rep.converged and rep.residual < tol and rep.iterations <= max_iters)
    dt = time.perf_counter() - t0
    return CheckResult(
        "LM grid 9x7x3", failed == 0,
        f"max residual {worst_res:.2e}, max iterations {worst_it}, {failed} failures, {dt:.2f} s",
    )


def run_all(r: RangeParabolas) -> list[CheckResult]:
    return [check_range_projection(r), check_sampler(r), check_solver_grid(r)]
