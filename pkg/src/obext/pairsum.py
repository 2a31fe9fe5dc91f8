"""Pair-sum quadrature engine for singular-kernel double integrals on grids.

Evaluates sums of the form

    sum over ordered cell pairs (x, y), x != y, of
        w(x, y) * F(|u(x) - u(y)|),   w = h^4 / |x - y|^kappa

in two modes:

* dense: every pair exactly, with touching pairs (center distance < 2h)
  refined by a 4x4 sub-split of both cells.  Matches a naive double loop
  bit-for-bit up to summation order.
* multilevel: pairs are partitioned exactly once across dyadic coarsenings
  (a pair is handled at the unique level where its cell offset first drops
  into the near window), using class-conditional cell averages at coarse
  levels.  Increments are accumulated into logarithmic bins so that the
  modular can be re-evaluated for many scaling parameters at negligible
  cost.

The partition argument: let D_l be the lattice offset of a pair at
coarsening level l (floor-division halving).  |D_l| is nonincreasing in l,
so there is a unique l with |D_l|_inf >= A and |D_{l+1}|_inf <= A-1 unless
|D_0|_inf <= A-1 (handled exactly at level 0).  Whether the parent offset is
small depends only on the offset and the source-cell parity, which keeps the
sweep vectorizable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import UsageError

_MANT_BITS = 10


def _bin_index(delta):
    """Logarithmic bin index from the float32 bit pattern (delta >= 0).

    Bins are 2^(1/1024)-wide geometric intervals, fine enough that replacing
    an increment by its bin center moves any modular by under 7e-4 relative.
    """
    d = np.ascontiguousarray(delta, dtype=np.float32)
    return d.view(np.int32) >> (23 - _MANT_BITS)


def _bin_centers(idx):
    e = (idx >> _MANT_BITS) - 127
    frac = (idx & ((1 << _MANT_BITS) - 1)).astype(np.float64)
    scale = 1.0 + (frac + 0.5) / (1 << _MANT_BITS)
    return np.ldexp(scale, e.astype(np.int64))


def touch_weights(kernel_exponent):
    """Unit kernel weights (lattice units) for the 8 touching offsets.

    Each of the two cells is split 4x4 and the kernel is applied at sub-cell
    center distances; the result replaces 1/|offset|^kappa for offsets with
    center distance < 2 cells.
    """
    k = float(kernel_exponent)
    out = {}
    sub = (np.arange(4) + 0.5) / 4.0
    bx, by, ax, ay = np.meshgrid(sub, sub, sub, sub, indexing="ij")
    for dx in (-1, 0, 1):
        for dy in (-1, 0, 1):
            if dx == 0 and dy == 0:
                continue
            ddx = dx + bx - ax
            ddy = dy + by - ay
            out[(dx, dy)] = float(np.sum((ddx * ddx + ddy * ddy) ** (-k / 2.0)) / 256.0)
    return out


def unit_kernel(dx, dy, kernel_exponent, touch):
    if max(abs(dx), abs(dy)) <= 1:
        return touch[(dx, dy)]
    return float(dx * dx + dy * dy) ** (-kernel_exponent / 2.0)


@dataclass
class PairHistogram:
    """Sparse log-binned distribution of increments with kernel mass weights."""

    kernel_exponent: float
    h: float
    bin_idx: np.ndarray     # int64, sorted, unique
    weights: np.ndarray     # float64 kernel mass per bin
    zero_weight: float      # mass on pairs with zero increment
    pair_count: float       # number of ordered fine-cell pairs accounted for

    @property
    def centers(self):
        return _bin_centers(self.bin_idx)

    @property
    def max_delta(self):
        if self.bin_idx.size == 0:
            return 0.0
        return float(self.centers[-1])

    def modular(self, phi, alpha):
        """sum of weights * phi(delta / alpha)."""
        if alpha <= 0:
            raise UsageError("alpha must be positive")
        if self.bin_idx.size == 0:
            return 0.0
        vals = phi(self.centers / alpha)
        return float(np.sum(self.weights * vals))

    def power_sum(self, p):
        if self.bin_idx.size == 0:
            return 0.0
        return float(np.sum(self.weights * self.centers ** p))

    def total_weight(self):
        return float(np.sum(self.weights)) + self.zero_weight

    def combined(self, *others):
        """Histogram of the union of pair sets (bins merged exactly)."""
        idx = np.concatenate([self.bin_idx] + [o.bin_idx for o in others])
        w = np.concatenate([self.weights] + [o.weights for o in others])
        uniq, inv = np.unique(idx, return_inverse=True)
        merged = np.zeros(uniq.size)
        np.add.at(merged, inv, w)
        return PairHistogram(
            self.kernel_exponent, self.h, uniq, merged,
            self.zero_weight + sum(o.zero_weight for o in others),
            self.pair_count + sum(o.pair_count for o in others),
        )


class _Accumulator:
    """Clipped bin accumulator; frozen to a sparse histogram after the sweep.

    Bin indices are shifted by `floor` (increments under spread * 1e-15 are
    collapsed into the floor bin, negligible for every modular) so bincount
    spans stay small.
    """

    def __init__(self, floor, span):
        self.floor = floor
        self.span = span
        self.bins = np.zeros(span)
        self.zero = 0.0
        self.count = 0.0

    def add(self, idx, scale, weights=None):
        if idx.size == 0:
            return
        rel = np.clip(idx - self.floor, 0, self.span - 1)
        bc = np.bincount(rel, weights=weights, minlength=self.span)
        self.bins += scale * bc
        self.count += float(idx.size) if weights is None else float(np.sum(weights))

    def add_binned(self, binned, scale, count):
        self.bins += scale * binned
        self.count += count

    def freeze(self, kernel_exponent, h):
        nz = np.flatnonzero(self.bins)
        zero = self.zero
        if self.floor == 0 and nz.size and nz[0] == 0:
            # spread-zero sweeps put exact-zero increments in bin 0
            zero += float(self.bins[0])
            nz = nz[1:]
        return PairHistogram(kernel_exponent, h, (nz + self.floor).astype(np.int64),
                             self.bins[nz].copy(), zero, self.count)


def _shift_ranges(nx, ny, dx, dy):
    sx0, sx1 = max(0, -dx), min(nx, nx - dx)
    sy0, sy1 = max(0, -dy), min(ny, ny - dy)
    if sx0 >= sx1 or sy0 >= sy1:
        return None
    return sx0, sx1, sy0, sy1


def _parity_ok(d, a):
    """Per-parity validity of a band offset component: |parent diff| <= a-1."""
    return (abs(d // 2) <= a - 1, abs((d + 1) // 2) <= a - 1)


def _band_offsets(a):
    out = []
    for dx in range(-(2 * a - 1), 2 * a):
        for dy in range(-(2 * a - 1), 2 * a):
            if max(abs(dx), abs(dy)) >= a:
                out.append((dx, dy))
    return out


def _base_offsets(a):
    out = []
    for dx in range(-(a - 1), a):
        for dy in range(-(a - 1), a):
            if (dx, dy) != (0, 0):
                out.append((dx, dy))
    return out


def _class_pairs(names):
    pairs = []
    for i, a in enumerate(names):
        for b in names[i:]:
            pairs.append((a, b))
    return pairs


def sweep_histograms(values, classes, h, kernel_exponent=4.0, base_radius=6, workers=2):
    """Build increment histograms for every unordered class pair.

    values : real [nx, ny] (binned through float32)
    classes: list of (name, bool mask); masks must be pairwise disjoint.
    Returns dict {(name_a, name_b): PairHistogram} with names sorted per key;
    cross histograms contain both pair orientations.  The union of all
    histograms accounts for every ordered pair within the union of the
    classes exactly once.  Results are independent of the worker count
    (fixed chunking and merge order).
    """
    a = int(base_radius)
    if a < 2:
        raise UsageError("base radius must be >= 2")
    names = [n for n, _ in classes]
    if len(set(names)) != len(names):
        raise UsageError("class names must be unique")
    masks = {}
    u0 = np.ascontiguousarray(values, dtype=np.float32)
    nx, ny = u0.shape
    union = np.zeros((nx, ny), dtype=bool)
    for n, m in classes:
        m = np.asarray(m, dtype=bool)
        if m.shape != u0.shape:
            raise UsageError("class mask shape mismatch")
        if (m & union).any():
            raise UsageError("class masks must be disjoint")
        union |= m
        masks[n] = m

    touch = touch_weights(kernel_exponent)
    kfac = h ** (4.0 - kernel_exponent)
    vals_in = u0[union]
    spread = float(vals_in.max() - vals_in.min()) if vals_in.size else 0.0
    if spread > 0.0:
        floor = int(_bin_index(np.array([spread * 1e-15]))[0])
        span = int(_bin_index(np.array([spread]))[0]) - floor + 2
    else:
        floor, span = 0, 2
    acc = {key: _Accumulator(floor, span) for key in _class_pairs(sorted(names))}

    def key_of(na, nb):
        return (na, nb) if na <= nb else (nb, na)

    # fused class labels: 0..nc-1 per class, nc = outside every class
    nc = len(names)
    lab = np.full(u0.shape, nc, dtype=np.int32)
    for ci, n in enumerate(names):
        lab[masks[n]] = ci
    npair = (nc + 1) ** 2

    def level0_chunk(offsets):
        bins = np.zeros((span, npair))
        counts = np.zeros(npair)
        for dx, dy in offsets:
            rng = _shift_ranges(nx, ny, dx, dy)
            if rng is None:
                continue
            sx0, sx1, sy0, sy1 = rng
            src = (slice(sx0, sx1), slice(sy0, sy1))
            dst = (slice(sx0 + dx, sx1 + dx), slice(sy0 + dy, sy1 + dy))
            rel = _bin_index(np.abs(u0[src] - u0[dst])) - floor
            np.maximum(rel, 0, out=rel)  # delta <= spread, so no upper clamp
            combined = rel * npair + (lab[src] * (nc + 1) + lab[dst])
            binned = np.bincount(combined.ravel(), minlength=span * npair).reshape(span, npair)
            wk = kfac * unit_kernel(dx, dy, kernel_exponent, touch)
            bins += wk * binned
            counts += binned.sum(axis=0)
        return bins, counts

    offsets0 = _base_offsets(a)
    workers = max(1, int(workers))
    if workers == 1 or len(offsets0) < 8:
        parts = [level0_chunk(offsets0)]
    else:
        from concurrent.futures import ThreadPoolExecutor
        chunks = [offsets0[k::2 * workers] for k in range(2 * workers)]
        with ThreadPoolExecutor(max_workers=workers) as ex:
            parts = list(ex.map(level0_chunk, chunks))
    level0 = parts[0][0]
    counts0 = parts[0][1]
    for p in parts[1:]:
        level0 += p[0]
        counts0 += p[1]
    for ia, na in enumerate(names):
        for ib, nb in enumerate(names):
            pid = ia * (nc + 1) + ib
            if counts0[pid]:
                acc[key_of(na, nb)].add_binned(level0[:, pid].copy(), 1.0, counts0[pid])

    # coarse levels: class-conditional sums/counts, halve until the near
    # window covers everything; each class pair is swept only over the
    # intersection of its bounding boxes
    sums = {n: np.where(masks[n], u0.astype(np.float64), 0.0) for n in names}
    cnts = {n: masks[n].astype(np.float64) for n in names}
    level = 0
    cx, cy = nx, ny
    band = _band_offsets(a)
    while max(cx, cy) > a:
        vals = {}
        boxes = {}
        for n in names:
            vals[n] = np.divide(sums[n], cnts[n], out=np.zeros_like(sums[n]),
                                where=cnts[n] > 0).astype(np.float32)
            ii, jj = np.nonzero(cnts[n])
            boxes[n] = None if ii.size == 0 else \
                (int(ii.min()), int(ii.max()) + 1, int(jj.min()), int(jj.max()) + 1)
        wk_level = kfac * 2.0 ** (-level * kernel_exponent)
        for dx, dy in band:
            okx = _parity_ok(dx, a)
            oky = _parity_ok(dy, a)
            if not (any(okx) and any(oky)):
                continue
            wk = wk_level * float(dx * dx + dy * dy) ** (-kernel_exponent / 2.0)
            xs = [None] if all(okx) else [b for b in (0, 1) if okx[b]]
            ys = [None] if all(oky) else [b for b in (0, 1) if oky[b]]
            for na in names:
                if boxes[na] is None:
                    continue
                for nb in names:
                    if boxes[nb] is None:
                        continue
                    ai0, ai1, aj0, aj1 = boxes[na]
                    bi0, bi1, bj0, bj1 = boxes[nb]
                    lo_x = max(0, -dx, ai0, bi0 - dx)
                    hi_x = min(cx, cx - dx, ai1, bi1 - dx)
                    lo_y = max(0, -dy, aj0, bj0 - dy)
                    hi_y = min(cy, cy - dy, aj1, bj1 - dy)
                    if lo_x >= hi_x or lo_y >= hi_y:
                        continue
                    rng = (lo_x, hi_x, lo_y, hi_y)
                    for bx in xs:
                        for by in ys:
                            sl = _parity_slices(rng, dx, dy, bx, by)
                            if sl is None:
                                continue
                            src, dst = sl
                            w = cnts[na][src] * cnts[nb][dst]
                            dd = np.abs(vals[na][src] - vals[nb][dst])
                            acc[key_of(na, nb)].add(_bin_index(dd).ravel(), wk,
                                                    weights=w.ravel())
        for n in names:
            sums[n] = _coarsen(sums[n])
            cnts[n] = _coarsen(cnts[n])
        cx = (cx + 1) // 2
        cy = (cy + 1) // 2
        level += 1

    return {key: A.freeze(kernel_exponent, h) for key, A in acc.items()}


def _parity_slices(rng, dx, dy, bx, by):
    sx0, sx1, sy0, sy1 = rng

    def stepped(lo, hi, b, d):
        if b is None:
            return slice(lo, hi), slice(lo + d, hi + d)
        start = lo + ((b - lo) % 2)
        if start >= hi:
            return None
        return slice(start, hi, 2), slice(start + d, hi + d, 2)

    px = stepped(sx0, sx1, bx, dx)
    py = stepped(sy0, sy1, by, dy)
    if px is None or py is None:
        return None
    return (px[0], py[0]), (px[1], py[1])


def _coarsen(arr):
    nx, ny = arr.shape
    px, py = (nx + 1) // 2 * 2, (ny + 1) // 2 * 2
    if (px, py) != (nx, ny):
        tmp = np.zeros((px, py))
        tmp[:nx, :ny] = arr
        arr = tmp
    return arr[0::2, 0::2] + arr[1::2, 0::2] + arr[0::2, 1::2] + arr[1::2, 1::2]


def aligned_crop(mask_union, base_radius):
    """Slices of a padded bounding box whose origin parity survives coarsening."""
    ii, jj = np.nonzero(mask_union)
    if ii.size == 0:
        raise UsageError("empty region")
    nx, ny = mask_union.shape
    pad = 2 * base_radius
    i0, i1 = max(0, ii.min() - pad), min(nx, ii.max() + 1 + pad)
    j0, j1 = max(0, jj.min() - pad), min(ny, jj.max() + 1 + pad)
    size = max(i1 - i0, j1 - j0)
    levels = max(1, math.ceil(math.log2(max(size / base_radius, 1.0)))) + 1
    align = 1 << levels
    i0 = (i0 // align) * align
    j0 = (j0 // align) * align
    return slice(i0, i1), slice(j0, j1)


# -- dense exact engine ------------------------------------------------------


def dense_modular(values, mask, h, phi, alpha, kernel_exponent=4.0, chunk=256,
                  early_exit_at=None):
    """Exact sum of w(x,y) * phi(|u(x)-u(y)|/alpha) over ordered region pairs.

    Deterministic chunked accumulation.  With early_exit_at set, returns as
    soon as the partial sum (of nonnegative terms) exceeds it.
    """
    ii, jj, v = _region_cells(values, mask)
    touch = touch_weights(kernel_exponent)
    kfac = h ** (4.0 - kernel_exponent)
    kexp = kernel_exponent
    total = 0.0
    n = v.size
    for c0 in range(0, n, chunk):
        c1 = min(n, c0 + chunk)
        di = ii[c0:c1, None] - ii[None, :]
        dj = jj[c0:c1, None] - jj[None, :]
        d2 = (di * di + dj * dj).astype(np.float64)
        w = np.zeros_like(d2)
        far = d2 > 2.0
        w[far] = d2[far] ** (-kexp / 2.0)
        for (tx, ty), tw in touch.items():
            sel = (di == tx) & (dj == ty)
            w[sel] = tw
        dd = np.abs(v[c0:c1, None] - v[None, :]) / alpha
        term = phi(dd)
        # self pairs carry zero kernel weight and phi(0) = 0
        total += kfac * float(np.sum(np.where(w > 0, term * w, 0.0)))
        if early_exit_at is not None and total > early_exit_at:
            return total
    return total


def dense_power_sum(values, mask, h, p, kernel_exponent, chunk=256):
    """Exact sum of w(x,y) * |u(x)-u(y)|^p over ordered region pairs."""
    ii, jj, v = _region_cells(values, mask)
    touch = touch_weights(kernel_exponent)
    kfac = h ** (4.0 - kernel_exponent)
    total = 0.0
    n = v.size
    for c0 in range(0, n, chunk):
        c1 = min(n, c0 + chunk)
        di = ii[c0:c1, None] - ii[None, :]
        dj = jj[c0:c1, None] - jj[None, :]
        d2 = (di * di + dj * dj).astype(np.float64)
        w = np.zeros_like(d2)
        far = d2 > 2.0
        w[far] = d2[far] ** (-kernel_exponent / 2.0)
        for (tx, ty), tw in touch.items():
            w[(di == tx) & (dj == ty)] = tw
        dd = np.abs(v[c0:c1, None] - v[None, :]) ** p
        total += kfac * float(np.sum(np.where(d2 > 0, dd * w, 0.0)))
    return total


def _region_cells(values, mask):
    ii, jj = np.nonzero(mask)
    order = np.lexsort((jj, ii))
    ii = ii[order].astype(np.int64)
    jj = jj[order].astype(np.int64)
    v = np.asarray(values, dtype=np.float64)[ii, jj]
    if not np.all(np.isfinite(v)):
        raise UsageError("non-finite values on the integration region")
    return ii, jj, v
