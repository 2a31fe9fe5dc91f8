"""Increment-modular seminorms on grid functions.

The central object is the Luxemburg-type seminorm

    inf { alpha > 0 : sum over cell pairs of
          phi(|u(x)-u(y)|/alpha) * h^4 / |x-y|^4  <= 1 }

together with fractional Sobolev seminorms (general kernel exponent),
ball-mean oscillation, and exponential integrability checks.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import pairsum
from .errors import InvariantViolation, UsageError
from .geometry import ball_measure

# area of the unit circle S^1; the convention used by every constant here
OMEGA_N = 2.0 * math.pi

DENSE_CELL_LIMIT = 4000


@dataclass
class GridFunction:
    """Cell-indexed real values over a DomainGrid, with a stated support."""

    grid: object
    values: np.ndarray          # float64 [nx, ny]; zero outside the support
    support: np.ndarray         # bool  [nx, ny]

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        self.support = np.asarray(self.support, dtype=bool)
        if self.values.shape != self.grid.indicator.shape or self.support.shape != self.values.shape:
            raise UsageError("GridFunction arrays must match the grid shape")
        if not np.all(np.isfinite(self.values[self.support])):
            raise InvariantViolation("non-finite values on the support")

    @staticmethod
    def from_callable(grid, fn, support="omega"):
        sup = grid.indicator if support == "omega" else np.ones_like(grid.indicator)
        X = grid.centers_x()[:, None]
        Y = grid.centers_y()[None, :]
        vals = np.where(sup, np.broadcast_to(np.asarray(fn(X, Y), dtype=float), sup.shape), 0.0)
        return GridFunction(grid, vals, sup)

    @staticmethod
    def constant(grid, c, support="omega"):
        return GridFunction.from_callable(grid, lambda x, y: np.full_like(x + y, float(c)), support)

    def scaled(self, c):
        return GridFunction(self.grid, self.values * float(c), self.support)

    def plus(self, other):
        return GridFunction(self.grid, self.values + other.values, self.support & other.support)

    def mean(self, region=None):
        region = self.support if region is None else region
        n = int(np.count_nonzero(region))
        if n == 0:
            raise UsageError("mean over an empty region")
        return float(np.sum(self.values[region]) / n)


def _resolve_region(u, region):
    region = u.support if region is None else np.asarray(region, dtype=bool)
    if (region & ~u.support).any():
        raise UsageError("region must lie inside the function support")
    return region


@dataclass
class PairEnergyResult:
    value: float
    near_diagonal_bound: float
    pair_count: float
    method: str


@dataclass
class LuxemburgResult:
    """Seminorm value with the bisection trace and a quadrature report."""

    value: float
    trace: list                 # (alpha, modular) pairs in evaluation order
    report: dict = field(default_factory=dict)

    def as_json(self):
        return {"value": self.value, "trace": self.trace, "report": self.report}


def _method_for(region, method):
    if method != "auto":
        return method
    return "dense" if int(np.count_nonzero(region)) <= DENSE_CELL_LIMIT else "multilevel"


def _histogram_for(u, region, kernel_exponent, base_radius=6):
    crop = pairsum.aligned_crop(region, base_radius)
    hists = pairsum.sweep_histograms(
        u.values[crop], [("all", region[crop])], u.grid.h,
        kernel_exponent=kernel_exponent, base_radius=base_radius)
    return hists[("all", "all")]


def near_diagonal_bound(u, phi, alpha, region, kernel_exponent=4.0):
    """Estimated contribution of the excluded sub-cell shell, never added.

    For locally smooth u the pairs closer than half a cell contribute about
    phi(h * |grad u| / (2 alpha)) per cell, scaled by the local growth
    exponent of phi; infinite when that exponent makes the shell
    non-integrable.
    """
    h = u.grid.h
    gx = np.zeros_like(u.values)
    gy = np.zeros_like(u.values)
    v = u.values
    inner = region[1:-1, 1:-1] & region[2:, 1:-1] & region[:-2, 1:-1] & region[1:-1, 2:] & region[1:-1, :-2]
    gx[1:-1, 1:-1] = np.where(inner, (v[2:, 1:-1] - v[:-2, 1:-1]) / (2 * h), 0.0)
    gy[1:-1, 1:-1] = np.where(inner, (v[1:-1, 2:] - v[1:-1, :-2]) / (2 * h), 0.0)
    g = np.hypot(gx, gy)[region]
    if g.size == 0 or not np.any(g > 0):
        return 0.0
    args = h * g / (2.0 * alpha)
    rep = float(np.median(args[args > 0])) if np.any(args > 0) else 0.0
    m = phi.loglog_slope(max(rep, 1e-12))
    crit = kernel_exponent - 2.0
    if m <= crit + 0.05:
        return math.inf
    shell = OMEGA_N * (h / 2.0) ** (2.0 - kernel_exponent) / (m - crit)
    return float(shell * h ** 2 * np.sum(phi(args)))


def pair_energy(u, phi, alpha, region=None, method="auto", kernel_exponent=4.0,
                histogram=None, early_exit_at=None):
    """Increment modular at scale alpha over ordered region pairs.

    Midpoint rule with self pairs excluded and touching pairs refined by one
    4x4 sub-split; the near-diagonal remainder is reported, not added.
    """
    if alpha <= 0:
        raise UsageError("alpha must be positive")
    region = _resolve_region(u, region)
    meth = _method_for(region, method)
    if histogram is not None:
        val = histogram.modular(phi, alpha)
        count = histogram.pair_count
    elif meth == "dense":
        crop = pairsum.aligned_crop(region, 2)
        val = pairsum.dense_modular(u.values[crop], region[crop], u.grid.h, phi, alpha,
                                    kernel_exponent=kernel_exponent, early_exit_at=early_exit_at)
        n = int(np.count_nonzero(region))
        count = n * (n - 1)
    else:
        hist = _histogram_for(u, region, kernel_exponent)
        val = hist.modular(phi, alpha)
        count = hist.pair_count
    bound = near_diagonal_bound(u, phi, alpha, region, kernel_exponent)
    return PairEnergyResult(val, bound, count, meth)


def _bisect_modular(modular, alpha0, rtol=1e-4, max_doublings=200):
    """Shared bracketing + bisection on a nonincreasing modular."""
    trace = []

    def I(a):
        v = modular(a)
        trace.append((a, v))
        return v

    a = alpha0
    if I(a) <= 1.0:
        lo = None
        for _ in range(max_doublings):
            a /= 2.0
            if I(a) > 1.0:
                lo, hi = a, 2.0 * a
                break
        else:
            return 0.0, trace  # modular stays <= 1 at arbitrarily small alpha
    else:
        for _ in range(max_doublings):
            a *= 2.0
            if I(a) <= 1.0:
                lo, hi = a / 2.0, a
                break
        else:
            return math.inf, trace
    while hi - lo > rtol * hi:
        mid = 0.5 * (lo + hi)
        if I(mid) <= 1.0:
            hi = mid
        else:
            lo = mid
    return hi, trace


def luxemburg(u, phi, region=None, method="auto", rtol=1e-4, histogram=None):
    """Luxemburg seminorm of u over the region.

    Brackets by doubling/halving and bisects to relative width rtol; a
    constant u short-circuits to 0 and a modular that never drops below 1
    yields the +inf sentinel.
    """
    region = _resolve_region(u, region)
    meth = _method_for(region, method)
    vals = u.values[region]
    if vals.size == 0:
        raise UsageError("empty region")
    spread = float(vals.max() - vals.min())
    report = {"method": meth if histogram is None else "histogram",
              "cells": int(np.count_nonzero(region))}
    if spread == 0.0:
        return LuxemburgResult(0.0, [], report)

    if histogram is not None or meth == "multilevel":
        hist = histogram if histogram is not None else _histogram_for(u, region, 4.0)
        if hist.max_delta == 0.0:
            return LuxemburgResult(0.0, [], report)
        modular = lambda a: hist.modular(phi, a)
        report["pair_count"] = hist.pair_count
        report["bins"] = int(hist.bin_idx.size)
    else:
        crop = pairsum.aligned_crop(region, 2)
        vv, rr = u.values[crop], region[crop]
        modular = lambda a: pairsum.dense_modular(vv, rr, u.grid.h, phi, a, early_exit_at=4.0)

    value, trace = _bisect_modular(modular, spread, rtol=rtol)
    if value > 0 and math.isfinite(value):
        report["remainder_bound"] = near_diagonal_bound(u, phi, value, region)
    report["diagonal"] = "self pairs excluded; touching pairs sub-split 4x4"
    return LuxemburgResult(value, trace, report)


def frac_sobolev(u, s, p, region=None, method="auto", histogram=None):
    """Fractional Sobolev seminorm (sum |du|^p / |dx|^{n+sp})^(1/p), n = 2."""
    if not (0.0 < s < 1.0) or p < 1.0:
        raise UsageError("need s in (0,1) and p >= 1")
    region = _resolve_region(u, region)
    kexp = 2.0 + s * p
    meth = _method_for(region, method)
    if histogram is not None:
        total = histogram.power_sum(p)
    elif meth == "dense":
        crop = pairsum.aligned_crop(region, 2)
        total = pairsum.dense_power_sum(u.values[crop], region[crop], u.grid.h, p, kexp)
    else:
        total = _histogram_for(u, region, kexp).power_sum(p)
    return total ** (1.0 / p)


# -- ball averages, oscillation, exponential integrability -------------------


def ball_region(grid, x, r, within=None):
    """Cells of `within` (default: the domain) with centers in the open ball."""
    within = grid.indicator if within is None else within
    X = grid.centers_x()[:, None] - x[0]
    Y = grid.centers_y()[None, :] - x[1]
    return within & (X * X + Y * Y < r * r)


@dataclass(frozen=True)
class BallPlan:
    """Deterministic ball family for oscillation scans."""

    centers: tuple
    radii: tuple

    @staticmethod
    def default(grid, n_centers=9, n_radii=4, seed=0):
        rng = np.random.default_rng(seed)
        ii, jj = np.nonzero(grid.indicator)
        take = rng.choice(ii.size, size=min(n_centers, ii.size), replace=False)
        centers = tuple(grid.cell_center(int(ii[t]), int(jj[t])) for t in sorted(take))
        d = grid.diam()
        radii = tuple(np.geomspace(8 * grid.h, d / 2.0, n_radii))
        return BallPlan(centers, radii)


def mean_oscillation(u, region):
    """Average of |u - mean(u)| over the region."""
    vals = u.values[region]
    if vals.size == 0:
        raise UsageError("empty ball region")
    return float(np.mean(np.abs(vals - vals.mean())))


def bmo_norm(u, plan, region=None, min_cells=16):
    """max over plan balls of the mean oscillation of u."""
    region = _resolve_region(u, region)
    best = 0.0
    used = 0
    for c in plan.centers:
        for r in plan.radii:
            b = ball_region(u.grid, c, r, region)
            if int(np.count_nonzero(b)) < min_cells:
                continue
            used += 1
            best = max(best, mean_oscillation(u, b))
    if used == 0:
        raise UsageError("no plan ball intersects the region in >= 16 cells")
    return best


def poincare_check(u, x, r, phi, region=None, method="auto"):
    """(mean oscillation over the ball) / (phi^{-1}(omega_n^2) * seminorm on the ball).

    Returns 0.0 for the trivially passing constant case.
    """
    region = _resolve_region(u, region)
    b = ball_region(u.grid, x, r, region)
    if int(np.count_nonzero(b)) < 16:
        raise UsageError("degenerate ball")
    osc = mean_oscillation(u, b)
    nrm = luxemburg(u, phi, region=b, method=method).value
    if nrm == 0.0:
        if osc <= 1e-14:
            return 0.0
        raise InvariantViolation("zero seminorm with nonzero oscillation")
    return osc / (phi.inverse(OMEGA_N ** 2) * nrm)


def exp_integral_check(u, x, r, alpha, gamma=1.0, region=None, center=None):
    """Ball average of exp((|u - c| / alpha)^gamma); +inf on overflow.

    c defaults to the ball average of u.
    """
    if alpha <= 0 or gamma < 1.0:
        raise UsageError("need alpha > 0 and gamma >= 1")
    region = _resolve_region(u, region)
    b = ball_region(u.grid, x, r, region)
    vals = u.values[b]
    if vals.size == 0:
        raise UsageError("degenerate ball")
    c = float(vals.mean()) if center is None else float(center)
    expo = (np.abs(vals - c) / alpha) ** gamma
    if float(expo.max()) > 700.0:
        return math.inf
    return float(np.mean(np.exp(expo)))
