"""Dyadic Whitney decomposition of the complement, with a smooth partition of unity.

Cubes are dyadic subdivisions of the (square, power-of-two-cell) grid box, so
every cube is exactly a block of cells.  A cube is kept when its side does
not exceed its distance to the boundary while its parent fails that test;
the classical comparabilities (side vs distance, neighbor side ratios) are
verified after construction, never assumed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvariantViolation, UsageError

SQRT_N = math.sqrt(2.0)
_SUPPORT_HALF = 17.0 / 32.0  # support half-width of the bump, in cube sides

# relative slack for the side <= dist test: exactly-critical cubes (side equal
# to distance on lattice-aligned boundaries) must not flip on float noise
_KEEP_EPS = 1e-9


@dataclass(frozen=True)
class DyadicCube:
    """Axis cube from the dyadic subdivision of the grid box."""

    level: int
    i: int
    j: int
    side: float
    x0: float   # corner
    y0: float

    @property
    def center(self):
        return (self.x0 + self.side / 2.0, self.y0 + self.side / 2.0)

    @property
    def box(self):
        return (self.x0, self.y0, self.x0 + self.side, self.y0 + self.side)


class WhitneyCover:
    """Whitney cubes of the truncated complement with neighbor structure."""

    def __init__(self, grid, cubes, dists, owner, uncovered, boundary_cells):
        self.grid = grid
        self.cubes = cubes
        self.dists = np.asarray(dists)
        self.owner = owner
        self.uncovered_cells = int(uncovered)
        self.boundary_cell_count = int(boundary_cells)
        self.cells_per_side = np.array([c.side / grid.h for c in cubes]).round().astype(np.int64)
        self.ci0 = np.array([round((c.x0 - grid.x0) / grid.h) for c in cubes], dtype=np.int64)
        self.cj0 = np.array([round((c.y0 - grid.y0) / grid.h) for c in cubes], dtype=np.int64)
        self.neighbor_ids = self._build_neighbors()
        self.gamma0 = max(len(n) for n in self.neighbor_ids) if cubes else 0
        self._by_level = {}
        for idx, c in enumerate(cubes):
            self._by_level.setdefault(c.level, {})[(c.i, c.j)] = idx
        self._verify()

    # -- structure -----------------------------------------------------------

    def _build_neighbors(self):
        own = self.owner
        nx, ny = own.shape
        out = []
        for q in range(len(self.cubes)):
            a0, b0 = self.ci0[q], self.cj0[q]
            m = self.cells_per_side[q]
            a1, b1 = a0 + m, b0 + m
            parts = []
            if a0 > 0:
                parts.append(own[a0 - 1, max(b0 - 1, 0):min(b1 + 1, ny)])
            if a1 < nx:
                parts.append(own[a1, max(b0 - 1, 0):min(b1 + 1, ny)])
            if b0 > 0:
                parts.append(own[a0:a1, b0 - 1])
            if b1 < ny:
                parts.append(own[a0:a1, b1])
            ids = np.unique(np.concatenate(parts)) if parts else np.empty(0, dtype=np.int64)
            ids = ids[ids >= 0]
            ids = np.unique(np.append(ids, q))
            out.append(ids.astype(np.int64))
        return out

    def _verify(self):
        g = self.grid
        if self.uncovered_cells > self.boundary_cell_count:
            raise InvariantViolation(
                f"cover misses {self.uncovered_cells} complement cells, above the "
                f"boundary-cell budget {self.boundary_cell_count}")
        if bool(np.any(self.owner[g.indicator] >= 0)):
            raise InvariantViolation("a cube claims a domain cell")
        for q, c in enumerate(self.cubes):
            d = float(self.dists[q])
            if not (c.side <= d * (1 + 2 * _KEEP_EPS) + 1e-15):
                raise InvariantViolation(f"cube {c} has side {c.side} > distance {d}")
            if d > 4.0 * SQRT_N * c.side * (1 + 1e-9):
                raise InvariantViolation(f"cube {c} has distance {d} > 4*sqrt(n)*side")
        for q, ids in enumerate(self.neighbor_ids):
            for p in ids.tolist():
                if abs(self.cubes[p].level - self.cubes[q].level) > 2:
                    raise InvariantViolation(
                        f"neighbor side ratio outside [1/4, 4]: {self.cubes[q]} vs {self.cubes[p]}")

    def neighbors(self, q):
        """Indices of cubes whose closed boxes meet cube q (q included)."""
        if not 0 <= q < len(self.cubes):
            raise UsageError(f"cube index {q} not in cover")
        return self.neighbor_ids[q]

    def find(self, level, i, j):
        return self._by_level.get(level, {}).get((i, j))

    def cube_cell_slices(self, q):
        a0, b0, m = self.ci0[q], self.cj0[q], self.cells_per_side[q]
        return slice(a0, a0 + m), slice(b0, b0 + m)

    def overlap_98(self):
        """max over cubes of |(9/8)Q ∩ U ∩ box| / |Q|, by cell counting."""
        g = self.grid
        u_mask = ~g.indicator
        sat = np.zeros((g.nx + 1, g.ny + 1), dtype=np.int64)
        np.cumsum(np.cumsum(u_mask, axis=0), axis=1, out=sat[1:, 1:])
        best = 0.0
        h = g.h
        for q, c in enumerate(self.cubes):
            cx, cy = c.center
            half = c.side * 9.0 / 16.0
            i0 = max(0, int(math.ceil((cx - half - g.x0) / h - 0.5)))
            i1 = min(g.nx - 1, int(math.floor((cx + half - g.x0) / h - 0.5)))
            j0 = max(0, int(math.ceil((cy - half - g.y0) / h - 0.5)))
            j1 = min(g.ny - 1, int(math.floor((cy + half - g.y0) / h - 0.5)))
            if i1 < i0 or j1 < j0:
                continue
            cnt = int(sat[i1 + 1, j1 + 1] - sat[i0, j1 + 1] - sat[i1 + 1, j0] + sat[i0, j0])
            best = max(best, cnt * h * h / (c.side * c.side))
        bound = 4.0 ** 2 * self.gamma0
        if best > bound:
            raise InvariantViolation(f"dilated-cube overlap {best} exceeds 4^n*gamma0 = {bound}")
        return best

    def csv_rows(self):
        rows = []
        for q, c in enumerate(self.cubes):
            rows.append((c.level, c.i, c.j, c.side, float(self.dists[q]), len(self.neighbor_ids[q])))
        return rows


def _perimeter_min_dist(grid, a0, a1, b0, b1):
    d = grid.dist
    vals = [d[a0, b0:b1].min(), d[a1 - 1, b0:b1].min()]
    if a1 - a0 > 2:
        vals.append(d[a0 + 1:a1 - 1, b0].min())
        vals.append(d[a0 + 1:a1 - 1, b1 - 1].min())
    return float(min(vals))


def decompose(grid, truncation=None):
    """Whitney cubes of the complement inside the grid box.

    Recursive dyadic subdivision: discard cubes meeting the closed domain,
    keep cubes whose side is at most their boundary distance, split the
    rest.  Distances come from the analytic boundary when a closed form
    exists (making covers independent of h), else from the raster field.
    """
    g = grid
    d = g.diam()
    if math.isfinite(d):
        trunc = 2.0 * d if truncation is None else float(truncation)
        if trunc < 2.0 * d:
            raise UsageError("truncation must be at least 2*diam")
        if g.margin < 2.0 * d - 1e-12:
            raise UsageError("grid margin too small for a Whitney cover (need >= 2*diam)")
    nx = g.nx
    if nx != g.ny or nx & (nx - 1):
        raise UsageError("grid box must be square with a power-of-two cell count")
    if not (~g.indicator).any():
        raise UsageError("complement is empty inside the box")
    k_max = int(round(math.log2(nx)))
    h = g.h
    exact = g.spec is not None and g.spec.box_boundary_gap(*g.box) is not None

    sat = np.zeros((nx + 1, nx + 1), dtype=np.int64)
    np.cumsum(np.cumsum(g.indicator, axis=0), axis=1, out=sat[1:, 1:])

    def omega_count(a0, a1, b0, b1):
        return int(sat[a1, b1] - sat[a0, b1] - sat[a1, b0] + sat[a0, b0])

    cubes = []
    dists = []
    stack = [(0, 0, 0)]
    while stack:
        level, i, j = stack.pop()
        m = nx >> level
        a0, b0 = i * m, j * m
        a1, b1 = a0 + m, b0 + m
        side = m * h
        box = (g.x0 + a0 * h, g.y0 + b0 * h, g.x0 + a1 * h, g.y0 + b1 * h)
        if exact:
            dist, meets = g.spec.box_boundary_gap(*box)
        else:
            meets = omega_count(a0, a1, b0, b1) > 0
            dist = 0.0 if meets else _perimeter_min_dist(g, a0, a1, b0, b1)
        if not meets and side <= dist * (1.0 + _KEEP_EPS):
            cubes.append(DyadicCube(level, i, j, side, box[0], box[1]))
            dists.append(dist)
            continue
        if level < k_max:
            for di in (0, 1):
                for dj in (0, 1):
                    stack.append((level + 1, 2 * i + di, 2 * j + dj))

    order = sorted(range(len(cubes)), key=lambda q: (cubes[q].level, cubes[q].i, cubes[q].j))
    cubes = [cubes[q] for q in order]
    dists = [dists[q] for q in order]

    owner = np.full((nx, nx), -1, dtype=np.int32)
    for q, c in enumerate(cubes):
        m = round(c.side / h)
        a0 = round((c.x0 - g.x0) / h)
        b0 = round((c.y0 - g.y0) / h)
        block = owner[a0:a0 + m, b0:b0 + m]
        if (block != -1).any():
            raise InvariantViolation(f"overlapping cubes at {c}")
        block[:] = q
    uncovered = int(np.count_nonzero((owner == -1) & ~g.indicator))
    boundary = int(np.count_nonzero(g.boundary_cells()))
    return WhitneyCover(g, cubes, dists, owner, uncovered, boundary)


# -- partition of unity ------------------------------------------------------


def _bump(s):
    """C^2 bump (1-s^2)^3 on |s| < 1, zero outside."""
    s = np.asarray(s, dtype=float)
    inside = np.abs(s) < 1.0
    t = np.where(inside, 1.0 - s * s, 0.0)
    return t * t * t


class PartitionOfUnity:
    """Normalized C^2 bumps subordinate to the (17/16)-dilated Whitney cubes."""

    def __init__(self, cover):
        self.cover = cover
        self._grad_bound = None

    # point evaluation ------------------------------------------------------

    def _candidates(self, x, y):
        cov = self.cover
        g = cov.grid
        out = []
        for level, table in cov._by_level.items():
            m = (g.nx >> level) * g.h
            fi = (x - g.x0) / m
            fj = (y - g.y0) / m
            for ii in range(int(math.floor(fi)) - 1, int(math.floor(fi)) + 2):
                for jj in range(int(math.floor(fj)) - 1, int(math.floor(fj)) + 2):
                    q = table.get((ii, jj))
                    if q is not None:
                        out.append(q)
        return out

    def raw_bump(self, q, x, y):
        c = self.cover.cubes[q]
        cx, cy = c.center
        half = _SUPPORT_HALF * c.side
        return float(_bump(np.array((x - cx) / half)) * _bump(np.array((y - cy) / half)))

    def bump_sum(self, x, y):
        return sum(self.raw_bump(q, x, y) for q in self._candidates(x, y))

    def weight(self, q, point):
        """phi_q at a point of the covered complement; errors on zero bump mass."""
        x, y = float(point[0]), float(point[1])
        den = self.bump_sum(x, y)
        if den <= 0.0:
            raise InvariantViolation(f"no partition mass at {point}: coverage gap")
        return self.raw_bump(q, x, y) / den

    def sum_at(self, points):
        return np.array([sum(self.weight(q, p) for q in self._candidates(*p)) for p in points])

    def sample_covered_points(self, n, seed=0):
        """Deterministic points of the covered complement, cube-area weighted."""
        cov = self.cover
        rng = np.random.default_rng(seed)
        areas = np.array([c.side ** 2 for c in cov.cubes])
        pick = rng.choice(len(cov.cubes), size=n, p=areas / areas.sum())
        offs = rng.random((n, 2))
        pts = []
        for t, q in enumerate(pick.tolist()):
            c = cov.cubes[q]
            pts.append((c.x0 + offs[t, 0] * c.side, c.y0 + offs[t, 1] * c.side))
        return pts

    # grids of bump sums (shared with the extension operator) ----------------

    def support_cell_window(self, q, pad_cells=0):
        g = self.cover.grid
        c = self.cover.cubes[q]
        cx, cy = c.center
        half = _SUPPORT_HALF * c.side
        i0 = max(0, int(math.floor((cx - half - g.x0) / g.h - 0.5)) - pad_cells)
        i1 = min(g.nx - 1, int(math.ceil((cx + half - g.x0) / g.h - 0.5)) + pad_cells)
        j0 = max(0, int(math.floor((cy - half - g.y0) / g.h - 0.5)) - pad_cells)
        j1 = min(g.ny - 1, int(math.ceil((cy + half - g.y0) / g.h - 0.5)) + pad_cells)
        return i0, i1 + 1, j0, j1 + 1

    def bump_on_window(self, q, window, dx=0.0, dy=0.0):
        """psi_q at cell centers of the window, optionally shifted by (dx, dy)."""
        g = self.cover.grid
        c = self.cover.cubes[q]
        cx, cy = c.center
        half = _SUPPORT_HALF * c.side
        i0, i1, j0, j1 = window
        xs = g.x0 + (np.arange(i0, i1) + 0.5) * g.h + dx
        ys = g.y0 + (np.arange(j0, j1) + 0.5) * g.h + dy
        return np.outer(_bump((xs - cx) / half), _bump((ys - cy) / half))

    def supports_touching(self, box):
        """Cubes whose (17/16)-dilated boxes meet the given axis box."""
        cov = self.cover
        g = cov.grid
        x0, y0, x1, y1 = box
        out = []
        for level, table in cov._by_level.items():
            side = (g.nx >> level) * g.h
            reach = _SUPPORT_HALF * side
            i_lo = int(math.floor((x0 - reach - g.x0) / side - 0.5))
            i_hi = int(math.ceil((x1 + reach - g.x0) / side - 0.5))
            j_lo = int(math.floor((y0 - reach - g.y0) / side - 0.5))
            j_hi = int(math.ceil((y1 + reach - g.y0) / side - 0.5))
            span = (i_hi - i_lo + 1) * (j_hi - j_lo + 1)
            if span > len(table):
                for (ii, jj), q in table.items():
                    if i_lo <= ii <= i_hi and j_lo <= jj <= j_hi:
                        out.append(q)
            else:
                for ii in range(i_lo, i_hi + 1):
                    for jj in range(j_lo, j_hi + 1):
                        q = table.get((ii, jj))
                        if q is not None:
                            out.append(q)
        return out

    def _bump_at_points(self, q, xs, ys):
        c = self.cover.cubes[q]
        cx, cy = c.center
        half = _SUPPORT_HALF * c.side
        return _bump((xs - cx) / half) * _bump((ys - cy) / half)

    def grad_bound(self, samples_per_side=15, step_fraction=0.25):
        """Global L with |grad phi_q| <= L / side(q), by central differences.

        Differences use step h/2 (evaluations at +- h/4); sample points sit
        on a fixed per-cube lattice over the support, so the measured L
        depends on the cover geometry and converges under grid refinement.
        Points whose shifted bump sums vanish lie outside the covered
        complement and are skipped.
        """
        if self._grad_bound is not None:
            return self._grad_bound
        g = self.cover.grid
        e = step_fraction * g.h
        shifts = ((e, 0.0), (-e, 0.0), (0.0, e), (0.0, -e))
        best = 0.0
        for q, c in enumerate(self.cover.cubes):
            cx, cy = c.center
            half = _SUPPORT_HALF * c.side
            t = (np.arange(samples_per_side) + 0.5) / samples_per_side
            xs0 = cx - half + 2 * half * t
            ys0 = cy - half + 2 * half * t
            X = np.repeat(xs0, samples_per_side)
            Y = np.tile(ys0, samples_per_side)
            cands = self.supports_touching((cx - half - e, cy - half - e,
                                            cx + half + e, cy + half + e))
            vals = {}
            ok = np.ones(X.size, dtype=bool)
            for (dx, dy) in shifts:
                den = np.zeros(X.size)
                for p in cands:
                    den += self._bump_at_points(p, X + dx, Y + dy)
                num = self._bump_at_points(q, X + dx, Y + dy)
                ok &= den > 0.0
                vals[(dx, dy)] = (num, den)
            if not ok.any():
                continue

            def ratio(d):
                num, den = vals[d]
                return np.where(ok, num / np.where(ok, den, 1.0), 0.0)

            gx = (ratio((e, 0.0)) - ratio((-e, 0.0))) / (2 * e)
            gy = (ratio((0.0, e)) - ratio((0.0, -e))) / (2 * e)
            best = max(best, float(np.max(np.hypot(gx, gy)[ok])) * c.side)
        self._grad_bound = best
        return best
