"""Reflected quasi-cubes for Whitney cubes, neighbor shells, and their overlap bounds.

Each sufficiently small Whitney cube Q is assigned a region Q* inside the
domain near its closest boundary point: a scaled seed cube at that point,
intersected with the domain, minus the scaled seeds of the relevantly
smaller cubes whose seeds meet it.  That subtraction is what gives the
family {Q*} bounded overlap, the property the extension operator's
boundedness rests on.  Cubes too large for the small-cube family (bounded
domains only) reflect to the whole domain.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvariantViolation, UsageError

SQRT_N = math.sqrt(2.0)


def epsilon0(c_a, gamma0, n=2):
    """Seed scale [C_A / (2 gamma0)]^(1/n) / (30 sqrt(n))."""
    if c_a <= 0 or gamma0 < 1:
        raise UsageError("need C_A > 0 and gamma0 >= 1")
    return (c_a / (2.0 * gamma0)) ** (1.0 / n) / (30.0 * math.sqrt(n))


@dataclass
class ReflectionMap:
    """Quasi-cube assignment for a Whitney cover on a fixed grid."""

    cover: object
    grid: object
    eps: float
    eps0: float | None
    small: np.ndarray            # bool per cube: member of the small-cube family
    xstar: np.ndarray            # float [n_cubes, 2]; nan rows for sentinels
    qstar_cells: list            # per cube: int64 flat cell indices, or None for sentinel
    gamma1: float
    gamma2: int
    overlap: np.ndarray          # int16 per grid cell: sum of quasi-cube indicators
    override_exceeds_eps0: bool

    def is_sentinel(self, q):
        return not bool(self.small[q])

    def quasi_cube_mask(self, q):
        g = self.grid
        m = np.zeros((g.nx, g.ny), dtype=bool)
        if self.qstar_cells[q] is not None:
            m.ravel()[self.qstar_cells[q]] = True
        else:
            m |= g.indicator
        return m

    def csv_rows(self):
        rows = []
        for q in range(len(self.cover.cubes)):
            if self.small[q]:
                rows.append((q, self.xstar[q, 0], self.xstar[q, 1],
                             len(self.qstar_cells[q]), 0))
            else:
                rows.append((q, math.nan, math.nan, 0, 1))
        return rows


def _seed_box(x, side):
    hx = side / 2.0
    return (x[0] - hx, x[1] - hx, x[0] + hx, x[1] + hx)


def _cells_in_box(grid, box):
    """Index ranges of cells whose centers lie in the half-open box.

    Centers landing exactly on an edge (systematic when seeds span an odd
    number of cells) are broken toward inclusion at the lower edge via a
    fixed nudge, so every consumer sees one convention.
    """
    h = grid.h
    i0 = max(0, int(math.ceil((box[0] - grid.x0) / h - 0.5 - 1e-9)))
    i1 = min(grid.nx, int(math.ceil((box[2] - grid.x0) / h - 0.5 - 1e-9)))
    j0 = max(0, int(math.ceil((box[1] - grid.y0) / h - 0.5 - 1e-9)))
    j1 = min(grid.ny, int(math.ceil((box[3] - grid.y0) / h - 0.5 - 1e-9)))
    return i0, i1, j0, j1


MIN_SEED_CELLS = 2.0


def build_reflections(cover, grid, eps, eps0=None):
    """Assign quasi-cubes at seed scale eps.

    The theoretical scale eps0 is far below cell resolution on practical
    grids, so eps is an explicit parameter; a value above eps0 is flagged
    (override_exceeds_eps0) and all bounded-overlap invariants are then
    asserted on the measured structure rather than inherited.

    Subtracted seeds narrower than MIN_SEED_CELLS cells are skipped: a
    center-in rasterization would charge them a full cell, far above their
    true measure, and that distortion (not the construction itself) is what
    empties quasi-cubes at practical resolutions.
    """
    if eps <= 0:
        raise UsageError("eps must be positive")
    g = grid
    d = g.diam()
    cubes = cover.cubes
    nq = len(cubes)
    sides = np.array([c.side for c in cubes])
    small = sides < (d / eps if math.isfinite(d) else math.inf)

    # nearest boundary cell (domain side) per small cube, lexicographic ties
    bmask = g.omega_boundary_cells()
    bi, bj = np.nonzero(bmask)
    if bi.size == 0:
        raise InvariantViolation("no boundary cells on the domain side")
    bx = g.x0 + (bi + 0.5) * g.h
    by = g.y0 + (bj + 0.5) * g.h
    order = np.lexsort((by, bx))
    bx, by = bx[order], by[order]

    xstar = np.full((nq, 2), math.nan)
    for q in np.flatnonzero(small).tolist():
        c = cubes[q]
        gx = np.maximum(np.maximum(c.x0 - bx, bx - (c.x0 + c.side)), 0.0)
        gy = np.maximum(np.maximum(c.y0 - by, by - (c.y0 + c.side)), 0.0)
        dist = np.hypot(gx, gy)
        k = int(np.argmin(dist))  # first minimum in lexicographic order
        ties = np.flatnonzero(dist <= dist[k] + 1e-12)
        k = int(ties[0])
        xstar[q] = (bx[k], by[k])

    # smaller-seed subtraction sets: seeds that intersect and belong to cubes
    # with side <= eps * side(Q)
    small_idx = np.flatnonzero(small)
    sb = np.array([_seed_box(xstar[q], eps * sides[q]) for q in small_idx]) \
        if small_idx.size else np.zeros((0, 4))
    resolvable = (eps * sides[small_idx]) >= MIN_SEED_CELLS * g.h if small_idx.size \
        else np.zeros(0, dtype=bool)
    subtract = {int(q): [] for q in small_idx}
    for a, q in enumerate(small_idx.tolist()):
        inter = (sb[:, 0] < sb[a, 2]) & (sb[a, 0] < sb[:, 2]) & \
                (sb[:, 1] < sb[a, 3]) & (sb[a, 1] < sb[:, 3])
        smaller = sides[small_idx] <= eps * sides[q] + 1e-12
        for b in np.flatnonzero(inter & smaller & resolvable).tolist():
            p = int(small_idx[b])
            if p != q:
                subtract[q].append(b)

    overlap = np.zeros((g.nx, g.ny), dtype=np.int16)
    qstar = [None] * nq
    gamma1 = 0.0
    for a, q in enumerate(small_idx.tolist()):
        i0, i1, j0, j1 = _cells_in_box(g, tuple(sb[a]))
        win = np.zeros((max(i1 - i0, 0), max(j1 - j0, 0)), dtype=bool)
        win |= g.indicator[i0:i1, j0:j1]
        for b in subtract[q]:
            p0, p1, r0, r1 = _cells_in_box(g, tuple(sb[b]))
            p0, p1 = max(p0, i0), min(p1, i1)
            r0, r1 = max(r0, j0), min(r1, j1)
            if p0 < p1 and r0 < r1:
                win[p0 - i0:p1 - i0, r0 - j0:r1 - j0] = False
        ii, jj = np.nonzero(win)
        if ii.size == 0:
            raise InvariantViolation(
                f"empty quasi-cube for cube {cubes[q]} at eps={eps}; refine h or raise eps")
        ii = ii + i0
        jj = jj + j0
        qstar[q] = (ii * g.ny + jj).astype(np.int64)
        overlap[ii, jj] += 1
        gamma1 = max(gamma1, cubes[q].side ** 2 / (ii.size * g.h ** 2))

    gamma2 = int(overlap.max()) if small_idx.size else 0

    rmap = ReflectionMap(cover, g, eps, eps0, small, xstar, qstar, gamma1, gamma2,
                         overlap, override_exceeds_eps0=bool(eps0 is not None and eps > eps0))
    _verify(rmap)
    return rmap


def _verify(rmap):
    g = rmap.grid
    cubes = rmap.cover.cubes
    for q in np.flatnonzero(rmap.small).tolist():
        c = cubes[q]
        cx, cy = c.center
        half = 5.0 * SQRT_N * c.side  # half-side of the 10*sqrt(n)-dilated cube
        cells = rmap.qstar_cells[q]
        ii, jj = cells // g.ny, cells % g.ny
        xs = g.x0 + (ii + 0.5) * g.h
        ys = g.y0 + (jj + 0.5) * g.h
        if np.any(np.maximum(np.abs(xs - cx), np.abs(ys - cy)) > half * (1 + 1e-12)):
            raise InvariantViolation(f"quasi-cube of {c} leaves the 10*sqrt(n) dilate")
        if not np.all(g.indicator[ii, jj]):
            raise InvariantViolation(f"quasi-cube of {c} leaves the domain")
    if not math.isfinite(rmap.gamma1):
        raise InvariantViolation("unbounded measure ratio")


@dataclass
class ShellIndex:
    """Neighbor-shell numbering with the region masks V^(k)."""

    cover: object
    rmap: object
    shell: np.ndarray      # int per cube; 0 on the small-cube family
    kmax: int

    def v_mask(self, k):
        g = self.rmap.grid
        m = np.zeros((g.nx, g.ny), dtype=bool)
        for q in np.flatnonzero(self.shell <= k).tolist():
            si, sj = self.cover.cube_cell_slices(q)
            m[si, sj] = True
        return m

    def members(self, k):
        return np.flatnonzero(self.shell <= k)


def shells(cover, rmap, kmax=3):
    """BFS shell numbers from the small-cube family over the neighbor graph.

    Verifies the overlap growth bound: the quasi-cube indicator sum over the
    k-th shell stays below gamma2 + (eps + 4^(k+2) sqrt(n))^n.
    """
    if kmax < 3:
        raise UsageError("kmax must be >= 3")
    nq = len(cover.cubes)
    shell = np.full(nq, np.iinfo(np.int32).max, dtype=np.int64)
    frontier = np.flatnonzero(rmap.small)
    shell[frontier] = 0
    for k in range(1, kmax + 1):
        nxt = []
        for q in frontier.tolist():
            for p in cover.neighbor_ids[q].tolist():
                if shell[p] > k:
                    shell[p] = k
                    nxt.append(p)
        frontier = np.array(sorted(nxt), dtype=np.int64)
        if frontier.size == 0:
            break

    idx = ShellIndex(cover, rmap, shell, kmax)
    g = rmap.grid
    eps_for_bound = rmap.eps0 if rmap.eps0 is not None else rmap.eps
    for k in range(1, kmax + 1):
        members = idx.members(k)
        cnt = np.zeros((g.nx, g.ny), dtype=np.int32)
        sentinels = 0
        for q in members.tolist():
            cells = rmap.qstar_cells[q]
            if cells is None:
                sentinels += 1
            else:
                np.add.at(cnt.ravel(), cells, 1)
        lhs = int(cnt[g.indicator].max()) + sentinels if g.indicator.any() else sentinels
        rhs = rmap.gamma2 + (eps_for_bound + 4.0 ** (k + 2) * SQRT_N) ** 2
        if lhs > rhs:
            raise InvariantViolation(f"shell-{k} overlap {lhs} exceeds bound {rhs}")
    return idx
