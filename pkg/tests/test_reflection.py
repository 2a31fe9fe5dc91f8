import math

import numpy as np
import pytest

from obext.errors import UsageError
from obext.geometry import parse_domain, rasterize
from obext.reflection import build_reflections, epsilon0, shells
from obext.whitney import decompose

SQ2 = math.sqrt(2.0)


def test_epsilon0_worked_example():
    assert epsilon0(0.196, 12, 2) == pytest.approx(0.002130, abs=2e-6)


def test_epsilon0_unit_bracket():
    # C_A = 2*gamma0 collapses the bracket to 1
    assert epsilon0(24.0, 12, 2) == pytest.approx(1.0 / (30.0 * SQ2), rel=1e-12)


def test_epsilon0_monotone_in_regularity():
    assert epsilon0(0.4, 12, 2) > epsilon0(0.2, 12, 2)


def test_epsilon0_validation():
    with pytest.raises(UsageError):
        epsilon0(0.0, 12, 2)


@pytest.fixture(scope="module")
def disk_reflection(disk_grid):
    cover = decompose(disk_grid)
    rmap = build_reflections(cover, disk_grid, eps=0.25, eps0=0.00213)
    return cover, rmap


def test_quasi_cubes_in_dilated_cube_and_domain(disk_reflection):
    cover, rmap = disk_reflection
    g = rmap.grid
    for q in np.flatnonzero(rmap.small).tolist():
        c = cover.cubes[q]
        cells = rmap.qstar_cells[q]
        assert cells is not None and cells.size > 0
        ii, jj = cells // g.ny, cells % g.ny
        assert g.indicator[ii, jj].all()
        cx, cy = c.center
        xs = g.x0 + (ii + 0.5) * g.h
        ys = g.y0 + (jj + 0.5) * g.h
        assert np.maximum(np.abs(xs - cx), np.abs(ys - cy)).max() <= 5 * SQ2 * c.side + 1e-12


def test_seed_cube_inside_dilate(disk_reflection):
    cover, rmap = disk_reflection
    # the seed cube at the nearest boundary point stays in 10*sqrt(n) Q
    for q in np.flatnonzero(rmap.small).tolist():
        c = cover.cubes[q]
        cx, cy = c.center
        xx, yy = rmap.xstar[q]
        reach = max(abs(xx - cx), abs(yy - cy)) + c.side / 2.0
        assert reach <= 5 * SQ2 * c.side + 1e-12


def test_gamma_constants_finite(disk_reflection):
    _, rmap = disk_reflection
    assert math.isfinite(rmap.gamma1) and rmap.gamma1 >= 1.0
    assert rmap.gamma2 >= 1
    assert rmap.override_exceeds_eps0


def test_subtraction_disjointness(disk_reflection):
    # resolvable scaled seeds of relevantly smaller cubes never meet Q*
    from obext.reflection import _cells_in_box, _seed_box

    cover, rmap = disk_reflection
    g = rmap.grid
    sides = np.array([c.side for c in cover.cubes])
    small_idx = np.flatnonzero(rmap.small)
    checked = 0
    for q in small_idx.tolist()[: 400]:
        cells = set(rmap.qstar_cells[q].tolist())
        for p in small_idx.tolist():
            if p == q or sides[p] > 0.25 * sides[q] + 1e-12:
                continue
            if 0.25 * sides[p] < 2.0 * g.h:
                continue  # below raster resolution, excluded from subtraction
            qseed = _seed_box(rmap.xstar[q], 0.25 * sides[q])
            pseed = _seed_box(rmap.xstar[p], 0.25 * sides[p])
            if not (pseed[0] < qseed[2] and qseed[0] < pseed[2]
                    and pseed[1] < qseed[3] and qseed[1] < pseed[3]):
                continue
            i0, i1, j0, j1 = _cells_in_box(g, pseed)
            p_cells = {i * g.ny + j for i in range(i0, i1) for j in range(j0, j1)}
            assert not (cells & p_cells)
            checked += 1
    assert checked > 0


def test_gamma2_stable_under_refinement():
    vals = {}
    for h in (0.02, 0.01):
        g = rasterize(parse_domain("disk:1"), h, 4.0)
        cov = decompose(g)
        vals[h] = build_reflections(cov, g, eps=0.25).gamma2
    assert abs(vals[0.02] - vals[0.01]) <= 3


def test_halfplane_unbounded_no_sentinels():
    g = rasterize(parse_domain("halfplane"), 0.02, 4.0)
    cov = decompose(g)
    rmap = build_reflections(cov, g, eps=0.25)
    assert not (~rmap.small).any()
    idx = shells(cov, rmap, kmax=3)
    assert (idx.shell == 0).all()


def test_sentinels_for_relatively_small_domain():
    # domain diameter far below the box scale forces whole-domain reflections
    g = rasterize(parse_domain("disk:0.1"), 0.005, 2.0)
    cov = decompose(g)
    rmap = build_reflections(cov, g, eps=0.25)
    assert (~rmap.small).any()
    for q in np.flatnonzero(~rmap.small).tolist():
        assert rmap.qstar_cells[q] is None
    idx = shells(cov, rmap, kmax=3)
    assert (idx.shell[~rmap.small] >= 1).all() or (idx.shell[~rmap.small] == 0).any() is False


def test_shells_nested(disk_reflection):
    cover, rmap = disk_reflection
    idx = shells(cover, rmap, kmax=3)
    for k in range(3):
        assert set(idx.members(k)).issubset(set(idx.members(k + 1)))
        assert not (idx.v_mask(k) & ~idx.v_mask(k + 1)).any()


def test_shells_kmax_validation(disk_reflection):
    cover, rmap = disk_reflection
    with pytest.raises(UsageError):
        shells(cover, rmap, kmax=2)


def test_reflection_csv(disk_reflection):
    _, rmap = disk_reflection
    rows = rmap.csv_rows()
    assert len(rows) == len(rmap.cover.cubes)
    assert all(r[4] in (0, 1) for r in rows)
