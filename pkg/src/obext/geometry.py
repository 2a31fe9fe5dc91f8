"""Planar domains on uniform grids: rasterization, distance fields, measures.

Domains are rasterized by center sampling into a square, lattice-aligned
bounding box whose side is h * 2^K, so that dyadic cubes later align exactly
with whole cell blocks.  Distance fields are analytic where a closed form
exists and an exact Euclidean distance transform to the raster boundary
otherwise.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .errors import InvariantViolation, UsageError

DOMAIN_KINDS = ("disk", "square", "annulus", "cusp", "halfplane")


@dataclass(frozen=True)
class DomainSpec:
    """Analytic description of a test domain.

    kind/params:
      disk      (r,)          {|x| < r}
      square    (a,)          (-a/2, a/2)^2
      annulus   (r1, r2)      {r1 < |x| < r2}
      cusp      (gamma, len)  {0 < x1 < len, |x2| < x1^gamma}, gamma >= 1
      halfplane ()            {x2 > 0}, unbounded
    """

    kind: str
    params: tuple = ()

    def __post_init__(self):
        if self.kind not in DOMAIN_KINDS:
            raise UsageError(f"unknown domain kind {self.kind!r}")
        p = tuple(float(v) for v in self.params)
        object.__setattr__(self, "params", p)
        need = {"disk": 1, "square": 1, "annulus": 2, "cusp": 2, "halfplane": 0}[self.kind]
        if len(p) != need:
            raise UsageError(f"domain {self.kind} takes {need} parameters, got {len(p)}")
        if any(v <= 0 for v in p):
            raise UsageError("domain parameters must be positive")
        if self.kind == "annulus" and p[0] >= p[1]:
            raise UsageError("annulus needs r1 < r2")
        if self.kind == "cusp" and p[0] < 1.0:
            raise UsageError("cusp exponent must be >= 1")

    # -- membership and geometry --------------------------------------------

    def contains(self, x, y):
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "disk":
            (r,) = self.params
            return x * x + y * y < r * r
        if self.kind == "square":
            (a,) = self.params
            return (np.abs(x) < a / 2) & (np.abs(y) < a / 2)
        if self.kind == "annulus":
            r1, r2 = self.params
            rho2 = x * x + y * y
            return (rho2 > r1 * r1) & (rho2 < r2 * r2)
        if self.kind == "cusp":
            g, ln = self.params
            return (x > 0) & (x < ln) & (np.abs(y) < x ** g)
        return y > 0

    def boundary_distance(self, x, y):
        """Exact distance to the boundary, or None when no closed form exists."""
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        if self.kind == "disk":
            (r,) = self.params
            return np.abs(np.hypot(x, y) - r)
        if self.kind == "square":
            (a,) = self.params
            qx = np.abs(x) - a / 2
            qy = np.abs(y) - a / 2
            outside = np.hypot(np.maximum(qx, 0.0), np.maximum(qy, 0.0))
            inside = -np.minimum(np.maximum(qx, qy), 0.0)
            return outside + inside
        if self.kind == "annulus":
            r1, r2 = self.params
            rho = np.hypot(x, y)
            return np.minimum(np.abs(rho - r1), np.abs(rho - r2))
        if self.kind == "halfplane":
            return np.abs(y)
        return None

    def box_boundary_gap(self, bx0, by0, bx1, by1):
        """(dist, meets) for an axis box against the closed domain.

        dist is the exact distance from the box (as a set) to the boundary
        when the box is disjoint from the closure; meets is True when the box
        intersects the closure.  Returns None for kinds with no closed form.
        """
        if self.kind == "disk":
            (r,) = self.params
            nx = min(max(0.0, bx0), bx1)
            ny = min(max(0.0, by0), by1)
            d_near = math.hypot(nx, ny)
            if d_near <= r:
                return 0.0, True
            return d_near - r, False
        if self.kind == "square":
            (a,) = self.params
            gx = max(bx0 - a / 2, -a / 2 - bx1, 0.0)
            gy = max(by0 - a / 2, -a / 2 - by1, 0.0)
            if gx == 0.0 and gy == 0.0:
                return 0.0, True
            return math.hypot(gx, gy), False
        if self.kind == "annulus":
            r1, r2 = self.params
            nx = min(max(0.0, bx0), bx1)
            ny = min(max(0.0, by0), by1)
            rho_min = math.hypot(nx, ny)
            corners = [math.hypot(cx, cy) for cx in (bx0, bx1) for cy in (by0, by1)]
            rho_max = max(corners)
            if rho_min <= r2 and rho_max >= r1:
                return 0.0, True
            if rho_min > r2:
                return rho_min - r2, False
            return r1 - rho_max, False
        if self.kind == "halfplane":
            if by1 >= 0.0:
                return 0.0, True
            return -by1, False
        return None

    def diameter(self):
        if self.kind == "disk":
            return 2.0 * self.params[0]
        if self.kind == "square":
            return self.params[0] * math.sqrt(2.0)
        if self.kind == "annulus":
            return 2.0 * self.params[1]
        if self.kind == "cusp":
            g, ln = self.params
            return max(2.0 * ln ** g, math.hypot(ln, ln ** g))
        return math.inf

    def area(self):
        if self.kind == "disk":
            return math.pi * self.params[0] ** 2
        if self.kind == "square":
            return self.params[0] ** 2
        if self.kind == "annulus":
            r1, r2 = self.params
            return math.pi * (r2 * r2 - r1 * r1)
        if self.kind == "cusp":
            g, ln = self.params
            return 2.0 * ln ** (g + 1.0) / (g + 1.0)
        return math.inf

    def center(self):
        if self.kind == "cusp":
            return (self.params[1] / 2.0, 0.0)
        return (0.0, 0.0)

    def bbox(self):
        if self.kind == "disk":
            r = self.params[0]
            return (-r, -r, r, r)
        if self.kind == "square":
            a = self.params[0] / 2
            return (-a, -a, a, a)
        if self.kind == "annulus":
            r = self.params[1]
            return (-r, -r, r, r)
        if self.kind == "cusp":
            g, ln = self.params
            return (0.0, -(ln ** g), ln, ln ** g)
        return None

    def label(self):
        if not self.params:
            return self.kind
        return f"{self.kind}:" + ",".join(f"{v:g}" for v in self.params)


def parse_domain(text):
    text = text.strip()
    kind, _, rest = text.partition(":")
    kind = kind.strip().lower()
    if kind in ("power-cusp", "powercusp"):
        kind = "cusp"
    if kind in ("halfplane-strip", "half-plane"):
        kind = "halfplane"
    try:
        params = tuple(float(tok) for tok in rest.split(",") if tok.strip())
    except ValueError as exc:
        raise UsageError(f"bad parameter in domain spec {text!r}") from exc
    return DomainSpec(kind, params)


@dataclass
class DomainGrid:
    """Center-sampled raster of a domain inside a square lattice-aligned box."""

    spec: DomainSpec
    h: float
    x0: float
    y0: float
    indicator: np.ndarray  # bool [nx, ny], cell centers in the open domain
    dist: np.ndarray       # float64 [nx, ny], distance from centers to the boundary
    analytic_dist: bool
    margin: float
    _prefix: np.ndarray | None = field(default=None, repr=False)
    _nearest_idx: tuple | None = field(default=None, repr=False)

    @property
    def nx(self):
        return self.indicator.shape[0]

    @property
    def ny(self):
        return self.indicator.shape[1]

    @property
    def box(self):
        return (self.x0, self.y0, self.x0 + self.nx * self.h, self.y0 + self.ny * self.h)

    @property
    def side(self):
        return self.nx * self.h

    def centers_x(self):
        return self.x0 + (np.arange(self.nx) + 0.5) * self.h

    def centers_y(self):
        return self.y0 + (np.arange(self.ny) + 0.5) * self.h

    def cell_center(self, i, j):
        return (self.x0 + (i + 0.5) * self.h, self.y0 + (j + 0.5) * self.h)

    def omega_area(self):
        return float(np.count_nonzero(self.indicator)) * self.h * self.h

    def boundary_cells(self):
        """Cells (either side) with a 4-neighbor across the indicator flip."""
        ind = self.indicator
        flip = np.zeros_like(ind)
        flip[:-1, :] |= ind[:-1, :] != ind[1:, :]
        flip[1:, :] |= ind[1:, :] != ind[:-1, :]
        flip[:, :-1] |= ind[:, :-1] != ind[:, 1:]
        flip[:, 1:] |= ind[:, 1:] != ind[:, :-1]
        return flip

    def omega_boundary_cells(self):
        return self.boundary_cells() & self.indicator

    def prefix_counts(self):
        """Column-cumulative indicator counts for fast ball counting."""
        if self._prefix is None:
            p = np.zeros((self.nx + 1, self.ny), dtype=np.int64)
            np.cumsum(self.indicator, axis=0, out=p[1:, :])
            self._prefix = p
        return self._prefix

    def nearest_omega_index(self):
        """For every cell, indices of the nearest domain cell (deterministic)."""
        if self._nearest_idx is None:
            _, idx = ndimage.distance_transform_edt(~self.indicator, return_indices=True)
            self._nearest_idx = (idx[0], idx[1])
        return self._nearest_idx

    def diam(self):
        return diam(self)

    def save(self, path):
        with open(path, "w") as fh:
            b = self.box
            fh.write(f"n=2 h={float(self.h)!r} box={float(b[0])!r},{float(b[1])!r},{float(b[2])!r},{float(b[3])!r}\n")
            ind = self.indicator.ravel(order="C")
            dst = self.dist.ravel(order="C")
            for k in range(ind.size):
                fh.write(f"{int(ind[k])} {float(dst[k])!r}\n")

    @staticmethod
    def load(path, spec=None):
        with open(path) as fh:
            header = fh.readline().split()
            h = float(header[1].split("=")[1])
            box = [float(v) for v in header[2].split("=")[1].split(",")]
            nx = round((box[2] - box[0]) / h)
            ny = round((box[3] - box[1]) / h)
            ind = np.empty(nx * ny, dtype=bool)
            dst = np.empty(nx * ny, dtype=float)
            for k in range(nx * ny):
                a, b = fh.readline().split()
                ind[k] = a == "1"
                dst[k] = float(b)
        return DomainGrid(spec, h, box[0], box[1], ind.reshape(nx, ny),
                          dst.reshape(nx, ny), analytic_dist=False, margin=0.0)


def rasterize(spec, h, margin, cell_cap=40_000_000, enforce_margin=True):
    """Rasterize a domain with band `margin` around it into a 2^K-by-2^K cell box.

    The box is square, its corners sit on the h-lattice, and its side is a
    power-of-two multiple of h so dyadic cubes coincide with cell blocks.
    `enforce_margin` applies the extension-pipeline requirement
    margin >= 2*diam; local measure scans may disable it.
    """
    if h <= 0 or margin <= 0:
        raise UsageError("h and margin must be positive")
    d = spec.diameter()
    if enforce_margin and math.isfinite(d) and margin < 2.0 * d - 1e-12:
        raise UsageError(f"margin {margin} below 2*diam = {2 * d} for {spec.label()}")

    bb = spec.bbox()
    if bb is None:  # unbounded: box of half-side margin around the origin
        s0 = 2.0 * margin
        cx = cy = 0.0
    else:
        s0 = max(bb[2] - bb[0], bb[3] - bb[1]) + 2.0 * margin
        cx, cy = (bb[0] + bb[2]) / 2.0, (bb[1] + bb[3]) / 2.0
    k = max(1, math.ceil(math.log2(s0 / h)))
    n = 2 ** k
    if n * n > cell_cap:
        raise UsageError(f"grid would need {n * n} cells, above the cap {cell_cap}")
    side = n * h
    x0 = (round(cx / h) - n // 2) * h
    y0 = (round(cy / h) - n // 2) * h

    xs = x0 + (np.arange(n) + 0.5) * h
    ys = y0 + (np.arange(n) + 0.5) * h
    X = xs[:, None]
    Y = ys[None, :]
    indicator = np.broadcast_to(spec.contains(X, Y), (n, n)).copy()
    ad = spec.boundary_distance(X, Y)
    if ad is not None:
        dist = np.broadcast_to(ad, (n, n)).astype(float).copy()
        analytic = True
    else:
        # exact Euclidean distance to the raster boundary-cell centers
        grid_tmp = DomainGrid(spec, h, x0, y0, indicator, np.zeros((n, n)), False, margin)
        bcells = grid_tmp.boundary_cells()
        if not bcells.any():
            raise InvariantViolation("domain has no raster boundary inside the box")
        dist = ndimage.distance_transform_edt(~bcells, sampling=h)
        analytic = False
    return DomainGrid(spec, h, x0, y0, indicator, dist, analytic, margin)


def ball_measure(grid, x, r):
    """h^2 * number of domain cells whose centers lie in the open ball B(x, r)."""
    if r <= 0:
        raise UsageError("ball radius must be positive")
    cx, cy = float(x[0]), float(x[1])
    h = grid.h
    p = grid.prefix_counts()
    j_lo = max(0, int(math.ceil((cy - r - grid.y0) / h - 0.5)))
    j_hi = min(grid.ny - 1, int(math.floor((cy + r - grid.y0) / h - 0.5)))
    if j_hi < j_lo:
        return 0.0
    js = np.arange(j_lo, j_hi + 1)
    dy = grid.y0 + (js + 0.5) * h - cy
    w2 = r * r - dy * dy
    w = np.sqrt(np.maximum(w2, 0.0))
    # strict inequality: centers with (x-cx)^2 + dy^2 < r^2
    lo = np.ceil((cx - w - grid.x0) / h - 0.5 + 1e-12).astype(np.int64)
    hi = np.floor((cx + w - grid.x0) / h - 0.5 - 1e-12).astype(np.int64)
    lo = np.clip(lo, 0, grid.nx)
    hi = np.clip(hi + 1, 0, grid.nx)
    valid = hi > lo
    count = int(np.sum(p[hi[valid], js[valid]] - p[lo[valid], js[valid]]))
    return count * (h * h)


def ball_measure_brute(grid, x, r):
    """Reference implementation of ball_measure by direct masking."""
    X = grid.centers_x()[:, None] - x[0]
    Y = grid.centers_y()[None, :] - x[1]
    inside = (X * X + Y * Y < r * r) & grid.indicator
    return int(np.count_nonzero(inside)) * (grid.h * grid.h)


def ball_measure_analytic(spec, x, r, n_quad=20_000):
    """Quadrature measure of B(x, r) intersected with the domain.

    Supports the disk (closed-form lens area) and the cusp (1-D quadrature of
    the thickness profile); used as an oracle and for tip scans below raster
    resolution.
    """
    cx, cy = float(x[0]), float(x[1])
    if spec.kind == "disk":
        (R,) = spec.params
        d = math.hypot(cx, cy)
        if d >= R + r:
            return 0.0
        if d <= abs(R - r):
            rr = min(R, r)
            return math.pi * rr * rr
        a = (d * d + r * r - R * R) / (2.0 * d)
        b = d - a
        return (r * r * math.acos(a / r) - a * math.sqrt(max(r * r - a * a, 0.0))
                + R * R * math.acos(b / R) - b * math.sqrt(max(R * R - b * b, 0.0)))
    if spec.kind == "cusp":
        g, ln = spec.params
        ts = np.linspace(0.0, ln, n_quad + 1)
        mid = 0.5 * (ts[1:] + ts[:-1])
        w = ts[1:] - ts[:-1]
        r2 = r * r - (mid - cx) ** 2
        half_ball = np.sqrt(np.maximum(r2, 0.0))
        top = np.minimum(mid ** g, cy + half_ball)
        bot = np.maximum(-(mid ** g), cy - half_ball)
        thick = np.where(r2 > 0, np.maximum(top - bot, 0.0), 0.0)
        return float(np.sum(thick * w))
    raise UsageError(f"no analytic ball measure for {spec.kind}")


def diam(grid):
    """Domain diameter: analytic from the spec, else hull pairwise maximum."""
    if grid.spec is not None:
        return grid.spec.diameter()
    return hull_diameter(grid)


def hull_diameter(grid):
    """Max pairwise distance over convex-hull vertices of the domain cells."""
    from scipy.spatial import ConvexHull

    ii, jj = np.nonzero(grid.indicator)
    if ii.size == 0:
        raise InvariantViolation("empty domain raster")
    pts = np.column_stack([grid.x0 + (ii + 0.5) * grid.h, grid.y0 + (jj + 0.5) * grid.h])
    if pts.shape[0] <= 2:
        return float(np.max(np.linalg.norm(pts - pts[0], axis=1)))
    hull = ConvexHull(pts)
    v = pts[hull.vertices]
    d2 = np.sum((v[:, None, :] - v[None, :, :]) ** 2, axis=2)
    return float(math.sqrt(np.max(d2)))


@dataclass(frozen=True)
class SamplingPlan:
    """Plan for the regularity scan: boundary-biased centers times a radius ladder."""

    n_centers: int = 100
    n_radii: int = 20
    boundary_frac: float = 0.5
    boundary_band_cells: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.n_centers < 100 or self.n_radii < 20:
            raise UsageError("plan needs >= 100 centers and >= 20 radii")


@dataclass
class AhlforsResult:
    c_inf: float
    arg_x: tuple
    arg_r: float
    rows: list  # (x, y, r, measure, ratio)
    plan: SamplingPlan
    n_centers_used: int


def ahlfors_constant(grid, plan=None):
    """min over sampled (x, r) of |B(x,r) ∩ domain| / r^n.

    Centers are domain cells, half of them within a thin boundary band;
    radii are log-spaced in (4h, 2*diam].  A sampled scan is a one-sided
    certificate: the plan coverage is reported with the minimum.
    """
    plan = plan or SamplingPlan()
    d = diam(grid)
    if not math.isfinite(d):
        raise UsageError("regularity scan needs a bounded domain")
    h = grid.h
    ii, jj = np.nonzero(grid.indicator)
    if ii.size == 0:
        raise InvariantViolation("empty domain raster")
    rng = np.random.default_rng(plan.seed)

    band = grid.dist[grid.indicator] <= plan.boundary_band_cells * h
    flat_idx = np.flatnonzero(grid.indicator)
    near = flat_idx[band]
    n_near = min(len(near), int(plan.n_centers * plan.boundary_frac))
    pick_near = rng.choice(near, size=n_near, replace=False) if n_near else np.empty(0, dtype=int)
    n_any = plan.n_centers - n_near
    pick_any = rng.choice(flat_idx, size=min(n_any, flat_idx.size), replace=False)
    picks = np.unique(np.concatenate([pick_near, pick_any]))

    radii = np.geomspace(4.0 * h * (1.0 + 1e-9), 2.0 * d, plan.n_radii)
    best = math.inf
    arg = None
    rows = []
    for flat in picks.tolist():
        i, j = divmod(flat, grid.ny)
        x = grid.cell_center(i, j)
        for r in radii:
            m = ball_measure(grid, x, float(r))
            ratio = m / r ** 2
            rows.append((x[0], x[1], float(r), m, ratio))
            if ratio < best:
                best = ratio
                arg = (x, float(r))
    return AhlforsResult(best, arg[0], arg[1], rows, plan, len(picks))
