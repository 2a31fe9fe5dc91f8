import math

import numpy as np
import pytest

from obext.errors import UsageError
from obext.geometry import parse_domain, rasterize
from obext.whitney import PartitionOfUnity, decompose

SQ2 = math.sqrt(2.0)


@pytest.fixture(scope="module")
def halfplane_cover():
    # h = 2^-7 makes the lattice binary-exact, so the classic hand-checkable
    # cubes appear with integer corners
    grid = rasterize(parse_domain("halfplane"), 0.0078125, 4.0)
    return decompose(grid)


@pytest.fixture(scope="module")
def disk_cover(disk_grid):
    return decompose(disk_grid)


def test_halfplane_selects_hand_checked_cube(halfplane_cover):
    # [0,1] x [-2,-1]: side 1, distance 1 to the boundary line, parent fails
    cov = halfplane_cover
    match = [q for q, c in enumerate(cov.cubes)
             if c.side == 1.0 and c.x0 == 0.0 and c.y0 == -2.0]
    assert len(match) == 1
    assert cov.dists[match[0]] == 1.0


def test_cover_invariants_all_domains():
    for dom, margin in [("disk:1", 4.0), ("square:1", 3.0), ("cusp:3,1", 4.0),
                        ("halfplane", 4.0)]:
        grid = rasterize(parse_domain(dom), 0.02, margin)
        cov = decompose(grid)  # construction verifies (i)-(iii), raising on failure
        assert cov.uncovered_cells <= cov.boundary_cell_count
        for q, c in enumerate(cov.cubes):
            d = cov.dists[q]
            assert c.side <= d * (1 + 1e-9)
            assert d <= 4 * SQ2 * c.side * (1 + 1e-9)


def test_neighbor_side_ratio(disk_cover):
    for q, c in enumerate(disk_cover.cubes):
        for p in disk_cover.neighbor_ids[q].tolist():
            ratio = disk_cover.cubes[p].side / c.side
            assert 0.25 - 1e-12 <= ratio <= 4.0 + 1e-12


def test_neighbor_symmetry(disk_cover):
    for q in range(len(disk_cover.cubes)):
        for p in disk_cover.neighbor_ids[q].tolist():
            assert q in disk_cover.neighbor_ids[p]


def test_neighbors_match_brute_force_box_intersections():
    # oracle: exact closed-box intersection on integer lattice coordinates
    grid = rasterize(parse_domain("disk:1"), 0.04, 4.0)
    cov = decompose(grid)
    n = len(cov.cubes)
    lo_i = cov.ci0
    hi_i = cov.ci0 + cov.cells_per_side
    lo_j = cov.cj0
    hi_j = cov.cj0 + cov.cells_per_side
    for q in range(n):
        want = set()
        for p in range(n):
            if (hi_i[p] >= lo_i[q] and hi_i[q] >= lo_i[p]
                    and hi_j[p] >= lo_j[q] and hi_j[q] >= lo_j[p]):
                want.add(p)
        assert set(cov.neighbor_ids[q].tolist()) == want
        assert q in want


def test_flat_band_lateral_neighbors(halfplane_cover):
    # a cube in a single-thickness band sees its two same-size lateral
    # neighbors plus itself
    cov = halfplane_cover
    q = next(q for q, c in enumerate(cov.cubes)
             if c.side == 1.0 and c.x0 == 0.0 and c.y0 == -2.0)
    sides = {cov.cubes[p].side for p in cov.neighbor_ids[q].tolist()}
    laterals = [p for p in cov.neighbor_ids[q].tolist()
                if cov.cubes[p].side == 1.0 and cov.cubes[p].y0 == -2.0]
    assert len(laterals) == 3  # itself and the two lateral tiles
    assert sides <= {0.5, 1.0, 2.0}


def test_gamma0_halfplane_at_most_twelve(halfplane_cover):
    assert halfplane_cover.gamma0 <= 12


def test_gamma0_resolution_stable():
    for dom, margin in [("disk:1", 4.0), ("square:1", 3.0)]:
        g1 = rasterize(parse_domain(dom), 0.02, margin)
        g2 = rasterize(parse_domain(dom), 0.01, margin)
        assert decompose(g1).gamma0 == decompose(g2).gamma0


def test_overlap_98_bound_and_tiling_value(disk_cover):
    val = disk_cover.overlap_98()
    assert val <= 16 * disk_cover.gamma0
    # an interior cube of an equal tiling counts exactly (9/8)^2 dilated cells
    grid = disk_cover.grid
    u_mask = ~grid.indicator
    for q, c in enumerate(disk_cover.cubes):
        m = round(c.side / grid.h)
        if m < 32:
            continue
        half = c.side * 9.0 / 16.0
        cx, cy = c.center
        i0 = int(math.ceil((cx - half - grid.x0) / grid.h - 0.5))
        i1 = int(math.floor((cx + half - grid.x0) / grid.h - 0.5))
        if i0 < 0 or i1 >= grid.nx:
            continue
        j0 = int(math.ceil((cy - half - grid.y0) / grid.h - 0.5))
        j1 = int(math.floor((cy + half - grid.y0) / grid.h - 0.5))
        if j0 < 0 or j1 >= grid.ny:
            continue
        if u_mask[i0:i1 + 1, j0:j1 + 1].all():
            cnt = (i1 - i0 + 1) * (j1 - j0 + 1)
            assert cnt * grid.h ** 2 / c.side ** 2 == pytest.approx((9 / 8) ** 2, abs=0.05)
            return
    pytest.skip("no fully complement-interior large cube in this cover")


def test_neighbors_rejects_unknown_cube(disk_cover):
    with pytest.raises(UsageError):
        disk_cover.neighbors(len(disk_cover.cubes))


def test_truncation_precondition(disk_grid):
    with pytest.raises(UsageError):
        decompose(disk_grid, truncation=1.0)


def test_pou_sums_to_one(disk_cover):
    pou = PartitionOfUnity(disk_cover)
    pts = pou.sample_covered_points(2000, seed=0)
    sums = pou.sum_at(pts)
    assert np.abs(sums - 1.0).max() <= 1e-10


def test_pou_zero_outside_dilated_cube(disk_cover):
    pou = PartitionOfUnity(disk_cover)
    for q in (0, len(disk_cover.cubes) // 2, len(disk_cover.cubes) - 1):
        c = disk_cover.cubes[q]
        cx, cy = c.center
        outside = (cx + (17 / 32) * c.side * 1.0001, cy)
        assert pou.raw_bump(q, *outside) == 0.0
        inside = (cx + (17 / 32) * c.side * 0.999, cy)
        assert pou.raw_bump(q, *inside) > 0.0


def test_pou_grad_bound_stable_under_refinement():
    vals = []
    for h in (0.02, 0.01):
        grid = rasterize(parse_domain("halfplane"), h, 4.0)
        pou = PartitionOfUnity(decompose(grid))
        vals.append(pou.grad_bound())
    assert vals[1] == pytest.approx(vals[0], rel=0.1)


def test_cover_csv_rows(disk_cover):
    rows = disk_cover.csv_rows()
    assert len(rows) == len(disk_cover.cubes)
    level, i, j, side, dist, nn = rows[0]
    assert side > 0 and dist >= side and nn >= 1
