"""The extension operator: quasi-cube averages pushed through the partition of unity.

Eu equals u on the domain; on the complement it is the partition-weighted
combination of the averages of u over the reflected quasi-cubes (whole-domain
average for sentinel cubes).  The raster boundary sliver, the measure-zero
stand-in for the topological boundary, takes nearest-domain-cell values so
that linearity and constant preservation stay exact.

Also here: the three-way energy split over domain/complement pair classes,
ramp cutoff functions with their seminorm bound, and the ball-shrinking
regularity probe driven by the exponential imbedding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import pairsum
from .errors import InvariantViolation, UsageError
from .geometry import ball_measure
from .orlicz_norms import (OMEGA_N, GridFunction, LuxemburgResult, _bisect_modular,
                           ball_region, luxemburg, mean_oscillation)

SQRT_N = math.sqrt(2.0)


@dataclass
class ExtensionContext:
    """Grid, cover, partition, and reflection bundle with an average cache."""

    grid: object
    cover: object
    pou: object
    rmap: object
    shell_index: object = None
    average_cache: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.cover.grid is not self.grid or self.rmap.grid is not self.grid:
            raise UsageError("context components must share one grid")
        if len(self.rmap.qstar_cells) != len(self.cover.cubes):
            raise UsageError("reflection map does not match the cover")

    def quasi_cube_averages(self, u):
        """Per-cube averages of u over the quasi-cubes; domain mean for sentinels."""
        key = id(u)
        if key in self.average_cache:
            return self.average_cache[key]
        g = self.grid
        vals = u.values.ravel()
        u_omega = u.mean(g.indicator)
        out = np.empty(len(self.cover.cubes))
        for q in range(len(self.cover.cubes)):
            cells = self.rmap.qstar_cells[q]
            out[q] = u_omega if cells is None else float(vals[cells].mean())
        self.average_cache[key] = out
        return out


def build_context(grid, cover, pou, rmap, shell_index=None):
    return ExtensionContext(grid, cover, pou, rmap, shell_index)


SLIVER_DIST_CELLS = 8.0


def extend(ctx, u):
    """Extend u from the domain to the whole box.

    Complement cells take the normalized bump-weighted quasi-cube averages;
    complement cells with zero bump mass close to the boundary (the raster
    sliver) copy their nearest domain cell; zero bump mass far from the
    boundary is a cover gap and raises.
    """
    g = ctx.grid
    if not np.all(np.isfinite(u.values[g.indicator])):
        raise UsageError("u must be finite on the domain")
    avgs = ctx.quasi_cube_averages(u)
    num = np.zeros((g.nx, g.ny))
    den = np.zeros((g.nx, g.ny))
    pou = ctx.pou
    for q in range(len(ctx.cover.cubes)):
        w = pou.support_cell_window(q)
        psi = pou.bump_on_window(q, w)
        num[w[0]:w[1], w[2]:w[3]] += psi * avgs[q]
        den[w[0]:w[1], w[2]:w[3]] += psi

    out = np.where(g.indicator, u.values, 0.0)
    ucells = ~g.indicator
    covered = ucells & (den > 0.0)
    out[covered] = num[covered] / den[covered]
    sliver = ucells & (den == 0.0)
    if sliver.any():
        far = g.dist[sliver] > SLIVER_DIST_CELLS * g.h
        if far.any():
            ii, jj = np.nonzero(sliver)
            k = np.flatnonzero(far)[0]
            raise InvariantViolation(
                f"complement cell {(int(ii[k]), int(jj[k]))} has no partition mass "
                "outside the boundary sliver: cover gap")
        nn = g.nearest_omega_index()
        out[sliver] = u.values[nn[0][sliver], nn[1][sliver]]
    return GridFunction(g, out, np.ones_like(g.indicator))


# -- energy split and operator ratio -----------------------------------------


def split_histograms(ctx, u_ext, base_radius=6):
    """One sweep of Eu over the box, partitioned by domain/complement classes.

    Returns (hist_oo, hist_cross, hist_uu); their union is exactly the box
    pair set, so modulars satisfy the additive identity by construction.
    """
    g = ctx.grid
    classes = [("omega", g.indicator), ("u", ~g.indicator)]
    hists = pairsum.sweep_histograms(u_ext.values, classes, g.h, base_radius=base_radius)
    return hists[("omega", "omega")], hists[("omega", "u")], hists[("u", "u")]


def h_split(ctx, phi, u, alpha, hists=None, u_ext=None):
    """Energy split (domain x domain, complement x domain, complement x complement).

    The middle term counts one orientation, so H1 + 2*H2 + H3 equals the
    full box modular of the extension.
    """
    if alpha <= 0:
        raise UsageError("alpha must be positive")
    if hists is None:
        u_ext = extend(ctx, u) if u_ext is None else u_ext
        hists = split_histograms(ctx, u_ext)
    hoo, hx, huu = hists
    h1 = hoo.modular(phi, alpha)
    h2 = 0.5 * hx.modular(phi, alpha)
    h3 = huu.modular(phi, alpha)
    return h1, h2, h3


@dataclass
class OperatorRatioResult:
    ratio: float
    lux_domain: float
    lux_box: float
    defined: bool
    far_field_tail_bound: float
    split_identity_gap: float
    h_at_alpha: tuple

    def as_json(self):
        return {
            "ratio": self.ratio if self.defined else None,
            "lux_domain": self.lux_domain,
            "lux_box": self.lux_box,
            "defined": self.defined,
            "far_field_tail_bound": self.far_field_tail_bound,
            "split_identity_gap": self.split_identity_gap,
            "h_split": list(self.h_at_alpha),
        }


def operator_ratio(ctx, phi, u, base_radius=6, rtol=1e-4):
    """Seminorm of the extension over the seminorm of u, with diagnostics.

    The energy outside the box is not integrated; a kernel tail bound
    (omega_n / n * R^-n * |box| * phi(osc/alpha)) is reported instead.
    Constant u yields an undefined 0/0 ratio, flagged not raised.
    """
    g = ctx.grid
    u_ext = extend(ctx, u)
    hists = split_histograms(ctx, u_ext, base_radius=base_radius)
    hoo, hx, huu = hists
    lux_u = _lux_from_hist(hoo, phi, u, g.indicator, rtol)
    box_hist = hoo.combined(hx, huu)
    lux_e = _lux_from_hist(box_hist, phi, u_ext, np.ones_like(g.indicator), rtol)

    if lux_u.value == 0.0 or not math.isfinite(lux_u.value):
        return OperatorRatioResult(math.nan, lux_u.value, lux_e.value, False, 0.0, 0.0, (0.0, 0.0, 0.0))

    alpha = lux_e.value * (1.0 + 1e-3)
    h1, h2, h3 = h_split(ctx, phi, u, alpha, hists=hists)
    total = box_hist.modular(phi, alpha)
    gap = abs(h1 + 2 * h2 + h3 - total)

    osc = float(u_ext.values.max() - u_ext.values.min())
    r_out = (g.side - (g.diam() if math.isfinite(g.diam()) else 0.0)) / 2.0
    tail = OMEGA_N / 2.0 * r_out ** (-2.0) * g.side ** 2 * float(phi(np.array([osc / alpha]))[0]) \
        if r_out > 0 else math.inf
    return OperatorRatioResult(lux_e.value / lux_u.value, lux_u.value, lux_e.value,
                               True, tail, gap, (h1, h2, h3))


def _lux_from_hist(hist, phi, u, region, rtol):
    vals = u.values[region]
    spread = float(vals.max() - vals.min()) if vals.size else 0.0
    if spread == 0.0 or hist.max_delta == 0.0:
        return LuxemburgResult(0.0, [], {"method": "histogram"})
    value, trace = _bisect_modular(lambda a: hist.modular(phi, a), spread, rtol=rtol)
    return LuxemburgResult(value, trace, {"method": "histogram", "pair_count": hist.pair_count})


# -- cutoff functions ---------------------------------------------------------


@dataclass(frozen=True)
class CutoffSpec:
    """Ramp cutoff: 1 on B(x, r), linear on the annulus, 0 outside B(x, t)."""

    x: tuple
    r: float
    t: float

    def __post_init__(self):
        if not (0.0 < self.r < self.t):
            raise UsageError("need 0 < r < t")


def cutoff(spec, grid):
    d = grid.diam()
    if math.isfinite(d) and not spec.t < d:
        raise UsageError("outer radius must stay below the diameter")
    X = grid.centers_x()[:, None] - spec.x[0]
    Y = grid.centers_y()[None, :] - spec.x[1]
    rho = np.hypot(X, Y)
    vals = np.clip((spec.t - rho) / (spec.t - spec.r), 0.0, 1.0)
    vals = np.where(grid.indicator, vals, 0.0)
    if not ball_region(grid, spec.x, spec.t).any():
        raise UsageError("outer ball misses the domain raster")
    return GridFunction(grid, vals, grid.indicator.copy())


def cutoff_bound(spec, grid, phi, cphi_value=None):
    """Seminorm bound 8 omega_n (C 4^n + 1) / phi^{-1}((t-r)^n / |B(x,t) ∩ domain|)."""
    if cphi_value is None:
        from .young import compute_cphi
        res = compute_cphi(phi)
        if res.diverges:
            raise UsageError("growth constant diverges; bound undefined")
        cphi_value = res.value
    m = ball_measure(grid, spec.x, spec.t)
    if m <= 0:
        raise UsageError("outer ball misses the domain raster")
    arg = (spec.t - spec.r) ** 2 / m
    return 8.0 * OMEGA_N * (cphi_value * 4.0 ** 2 + 1.0) / phi.inverse(arg)


# -- test battery and imbedding constant --------------------------------------

BATTERY_NAMES = (
    "bump_wide", "bump_mid", "bump_narrow", "ramp_x", "ramp_y", "radial",
    "osc_low", "osc_mid", "osc_high", "poly_bump", "saddle", "ramp_plus_bump",
)


def battery(grid):
    """Fixed 12-function battery: bumps, ramps, oscillations at three scales."""
    d = grid.diam()
    if not math.isfinite(d):
        raise UsageError("battery needs a bounded domain")
    cx, cy = grid.spec.center() if grid.spec is not None else (0.0, 0.0)

    def gauss(s):
        return lambda x, y: np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * (s * d) ** 2))

    defs = {
        "bump_wide": gauss(0.30),
        "bump_mid": gauss(0.15),
        "bump_narrow": gauss(0.075),
        "ramp_x": lambda x, y: (x - cx) / d,
        "ramp_y": lambda x, y: (y - cy) / d,
        "radial": lambda x, y: np.hypot(x - cx, y - cy) / d,
        "osc_low": lambda x, y: np.sin(2 * np.pi * (x - cx) / d),
        "osc_mid": lambda x, y: np.sin(4 * np.pi * (x - cx) / d) * np.cos(4 * np.pi * (y - cy) / d),
        "osc_high": lambda x, y: np.sin(8 * np.pi * (x - cx) / d),
        "poly_bump": lambda x, y: np.maximum(0.0, 1.0 - ((x - cx) ** 2 + (y - cy) ** 2) / (0.45 * d) ** 2) ** 2,
        "saddle": lambda x, y: (x - cx) * (y - cy) / d ** 2,
        "ramp_plus_bump": lambda x, y: (x - cx) / d + np.exp(-((x - cx) ** 2 + (y - cy) ** 2) / (2 * (0.075 * d) ** 2)),
    }
    return [(name, GridFunction.from_callable(grid, defs[name])) for name in BATTERY_NAMES]


EXP_TARGET = 2.0  # target level for the integral-to-volume ratio calibration


def imbedding_constant(grid, phi, functions, balls, method="auto"):
    """Smallest multiplier m such that every calibration function satisfies

        int_{B ∩ domain} exp(|u - u_B|/(m * seminorm(u))) <= EXP_TARGET * |B|

    over the plan balls; the exponential-integrability threshold that drives
    the regularity probe.
    """
    worst = 0.0
    for name, u in functions:
        s = luxemburg(u, phi, method=method).value
        if s == 0.0 or not math.isfinite(s):
            continue

        def excess(m):
            val = 0.0
            for (x, r) in balls:
                b = ball_region(grid, x, r)
                n = int(np.count_nonzero(b))
                if n < 16:
                    continue
                vals = u.values[b]
                e = np.abs(vals - vals.mean()) / (m * s)
                if float(e.max()) > 700.0:
                    return math.inf
                integral = float(np.sum(np.exp(e))) * grid.h ** 2
                val = max(val, integral / (math.pi * r * r))
            return val

        lo, hi = 1e-6, 1e-6
        for _ in range(200):
            if excess(hi) <= EXP_TARGET:
                break
            hi *= 2.0
        else:
            raise InvariantViolation(f"imbedding calibration failed for {name}")
        while hi - lo > 1e-2 * hi:
            mid = 0.5 * (lo + hi)
            if excess(mid) <= EXP_TARGET:
                hi = mid
            else:
                lo = mid
        worst = max(worst, hi)
    if worst == 0.0:
        raise UsageError("no usable calibration function")
    return worst


# -- regularity probe ----------------------------------------------------------


@dataclass
class ProbePoint:
    x: tuple
    r: float
    measure: float
    b: list                    # b_0 = 1, b_1, ...
    chain: list                # dicts per term: j, lhs, rhs, ok
    b1_at_least_tenth: bool
    recentered: dict | None
    implied_lower_bound: float


def shrinking_radii(grid, x, r, j_max=12, min_radius_cells=8.0):
    """b_j with |B(x, b_j r) ∩ domain| = 2^-j |B(x, r) ∩ domain| (monotone bisection)."""
    m0 = ball_measure(grid, x, r)
    if m0 <= 0:
        raise UsageError("base ball misses the domain")
    bs = [1.0]
    target = m0
    for _ in range(1, j_max + 1):
        target /= 2.0
        lo, hi = 0.0, bs[-1]
        for _ in range(60):
            mid = 0.5 * (lo + hi)
            if ball_measure(grid, x, mid * r) >= target:
                hi = mid
            else:
                lo = mid
        b = 0.5 * (lo + hi)
        if b * r < min_radius_cells * grid.h:
            break
        bs.append(b)
    return m0, bs


def necessity_probe(grid, phi, c_imbed, points, k51=None, c_n=EXP_TARGET, j_max=12):
    """Ball-shrinking chain at each (x, r), with all constants instantiated.

    Verifies term by term that

        (b_j - b_{j+1})^n <= 2^-j (m0 / r^n) phi(C ln(2^j C(n) r^n / m0))

    with C = 2 * c_imbed * k51 and C(n) = 2 pi * c_n, and reports the
    b_1-dichotomy (recentring when b_1 < 1/10) and the implied lower bound
    on m0 / r^n.  Requires a sub-exponentially growing phi.
    """
    from .young import check_subexponential, compute_cphi

    sub = check_subexponential(phi)
    if not sub.subexponential:
        raise UsageError(
            f"probe needs sub-exponential growth; {phi.label()} fails at c={sub.failing_c}")
    if k51 is None:
        cp = compute_cphi(phi)
        if cp.diverges:
            raise UsageError("growth constant diverges")
        k51 = 8.0 * OMEGA_N * (cp.value * 16.0 + 1.0)
    c_total = 2.0 * c_imbed * k51
    c_dim = 2.0 * math.pi * c_n

    out = []
    for (x, r) in points:
        m0, bs = shrinking_radii(grid, x, r, j_max=j_max)
        chain = []
        for j in range(1, len(bs) - 1):
            lhs = (bs[j] - bs[j + 1]) ** 2
            arg = c_total * math.log(2.0 ** j * c_dim * r * r / m0)
            rhs = 2.0 ** (-j) * (m0 / r ** 2) * float(phi(np.array([arg]))[0])
            chain.append({"j": j, "lhs": lhs, "rhs": rhs, "ok": bool(lhs <= rhs)})
        b1 = bs[1] if len(bs) > 1 else math.nan
        recentered = None
        if len(bs) > 1 and b1 < 0.1:
            recentered = _recenter(grid, x, r, b1)
        out.append(ProbePoint(x, r, m0, bs, chain, bool(b1 >= 0.1), recentered,
                              m0 / r ** 2))
    return out


def _recenter(grid, x, r, b1):
    """Point x' in the domain at |x - x'| = b1 r + r/5, deterministic direction scan."""
    dist = b1 * r + r / 5.0
    for k in range(64):
        ang = 2.0 * math.pi * k / 64.0
        xp = (x[0] + dist * math.cos(ang), x[1] + dist * math.sin(ang))
        if grid.spec is not None and bool(grid.spec.contains(np.array(xp[0]), np.array(xp[1]))):
            return {"x_prime": xp, "radius": 2.0 * r / 5.0}
    return None
