import math

import numpy as np
import pytest

from obext.errors import UsageError
from obext.extension import (CutoffSpec, battery, build_context, cutoff, cutoff_bound,
                             extend, h_split, imbedding_constant, necessity_probe,
                             operator_ratio, shrinking_radii, split_histograms)
from obext.geometry import parse_domain, rasterize
from obext.orlicz_norms import BallPlan, GridFunction, luxemburg
from obext.reflection import build_reflections, shells
from obext.whitney import PartitionOfUnity, decompose
from obext.young import parse_young

PHI3 = parse_young("power:3")


def test_extend_identity_on_domain(disk_pipeline):
    g = disk_pipeline.grid
    u = GridFunction.from_callable(g, lambda x, y: np.sin(2 * x) + y)
    eu = extend(disk_pipeline, u)
    assert np.array_equal(eu.values[g.indicator], u.values[g.indicator])
    assert eu.support.all()


def test_extend_preserves_constants(disk_pipeline):
    c = GridFunction.constant(disk_pipeline.grid, 4.25)
    ec = extend(disk_pipeline, c)
    assert np.abs(ec.values - 4.25).max() <= 1e-12


def test_extend_linear(disk_pipeline):
    g = disk_pipeline.grid
    u = GridFunction.from_callable(g, lambda x, y: x * y)
    v = GridFunction.from_callable(g, lambda x, y: np.cos(3 * y))
    combo = GridFunction(g, 2.0 * u.values - 0.5 * v.values, g.indicator.copy())
    lhs = extend(disk_pipeline, combo).values
    rhs = 2.0 * extend(disk_pipeline, u).values - 0.5 * extend(disk_pipeline, v).values
    assert np.abs(lhs - rhs).max() <= 1e-12


def test_extend_far_field_constant_beyond_second_shell():
    # relatively tiny domain: cubes beyond the second neighbor shell carry
    # whole-domain reflections only, so the extension is the domain average
    # there exactly
    g = rasterize(parse_domain("disk:0.05"), 0.005, 2.0)
    cov = decompose(g)
    rmap = build_reflections(cov, g, eps=0.5)
    idx = shells(cov, rmap, kmax=6)
    ctx = build_context(g, cov, PartitionOfUnity(cov), rmap, idx)
    assert (~rmap.small).any()
    deep = np.flatnonzero(idx.shell >= 3)
    assert deep.size > 0
    u = GridFunction.from_callable(g, lambda x, y: x / 0.05)
    eu = extend(ctx, u)
    u_mean = u.mean(g.indicator)
    for q in deep.tolist():
        si, sj = cov.cube_cell_slices(q)
        assert np.abs(eu.values[si, sj] - u_mean).max() <= 1e-12


def test_h_split_identity(disk_pipeline):
    u = GridFunction.from_callable(disk_pipeline.grid, lambda x, y: x)
    eu = extend(disk_pipeline, u)
    hists = split_histograms(disk_pipeline, eu)
    box = hists[0].combined(hists[1], hists[2])
    for alpha in (0.7, 2.0, 9.0):
        h1, h2, h3 = h_split(disk_pipeline, PHI3, u, alpha, hists=hists)
        assert h1 + 2 * h2 + h3 == pytest.approx(box.modular(PHI3, alpha), abs=1e-10)


def test_h_split_constant_zero(disk_pipeline):
    c = GridFunction.constant(disk_pipeline.grid, 1.0)
    h1, h2, h3 = h_split(disk_pipeline, PHI3, c, 1.0)
    assert (h1, h2, h3) == (0.0, 0.0, 0.0)


def test_h_split_below_one_above_norm(disk_pipeline):
    u = GridFunction.from_callable(disk_pipeline.grid, lambda x, y: x)
    res = operator_ratio(disk_pipeline, PHI3, u)
    h1, h2, h3 = res.h_at_alpha
    assert h1 + 2 * h2 + h3 <= 1.0 + 1e-9


def test_operator_ratio_finite_and_scale_invariant(disk_pipeline):
    u = GridFunction.from_callable(disk_pipeline.grid,
                                   lambda x, y: np.exp(-2 * (x * x + y * y)))
    r1 = operator_ratio(disk_pipeline, PHI3, u)
    r2 = operator_ratio(disk_pipeline, PHI3, u.scaled(3.0))
    assert r1.defined and math.isfinite(r1.ratio)
    assert r2.ratio == pytest.approx(r1.ratio, rel=2e-3)
    assert r1.far_field_tail_bound >= 0.0


def test_operator_ratio_constant_flagged(disk_pipeline):
    c = GridFunction.constant(disk_pipeline.grid, 2.0)
    res = operator_ratio(disk_pipeline, PHI3, c)
    assert not res.defined


def test_cutoff_values_exact(disk_grid):
    spec = CutoffSpec((0.0, 0.0), 0.25, 0.5)
    u = cutoff(spec, disk_grid)
    X = disk_grid.centers_x()[:, None]
    Y = disk_grid.centers_y()[None, :]
    rho = np.hypot(X, Y)
    inner = disk_grid.indicator & (rho < 0.25 - 1e-12)
    outer = disk_grid.indicator & (rho > 0.5 + 1e-12)
    assert (u.values[inner] == 1.0).all()
    assert (u.values[outer] == 0.0).all()
    mid = disk_grid.indicator & (rho > 0.3) & (rho < 0.45)
    expect = (0.5 - rho) / 0.25
    assert np.abs(u.values[mid] - expect[mid]).max() <= 1e-12


def test_cutoff_spec_validation():
    with pytest.raises(UsageError):
        CutoffSpec((0.0, 0.0), 0.5, 0.25)


def test_cutoff_bound_worked_example():
    # n=2, power 3, x=0, r=1/4, t=1/2: the bound collapses to
    # 16*pi*17*(4*pi)^(1/3); recomputed by hand before freezing
    g = rasterize(parse_domain("disk:1"), 0.005, 4.0)
    frozen = 16.0 * math.pi * 17.0 * (4.0 * math.pi) ** (1.0 / 3.0)
    got = cutoff_bound(CutoffSpec((0.0, 0.0), 0.25, 0.5), g, PHI3, cphi_value=1.0)
    assert got == pytest.approx(frozen, rel=0.01)


def test_cutoff_seminorm_below_bound(disk_pipeline):
    g = disk_pipeline.grid
    for spec in (CutoffSpec((0.0, 0.0), 0.25, 0.5), CutoffSpec((0.3, 0.0), 0.1, 0.3)):
        u = cutoff(spec, g)
        bound = cutoff_bound(spec, g, PHI3)
        assert luxemburg(u, PHI3, method="multilevel").value <= bound


def test_battery_fixed_and_versioned(disk_grid):
    funcs = battery(disk_grid)
    assert [n for n, _ in funcs] == [
        "bump_wide", "bump_mid", "bump_narrow", "ramp_x", "ramp_y", "radial",
        "osc_low", "osc_mid", "osc_high", "poly_bump", "saddle", "ramp_plus_bump"]
    for _, u in funcs:
        assert np.all(np.isfinite(u.values[disk_grid.indicator]))


def test_shrinking_radii_anchor(disk_grid):
    m0, bs = shrinking_radii(disk_grid, (0.0, 0.0), 1.0)
    assert bs[0] == 1.0
    assert bs[1] == pytest.approx(1.0 / math.sqrt(2.0), abs=0.01)
    assert all(b2 < b1 for b1, b2 in zip(bs, bs[1:]))
    assert m0 == pytest.approx(math.pi, abs=0.05)


def test_necessity_probe_chain_disc(disk_grid):
    funcs = battery(disk_grid)
    balls = [((0.0, 0.0), 1.0), ((0.0, 0.0), 0.5)]
    c_i = imbedding_constant(disk_grid, PHI3, funcs[:4], balls, method="multilevel")
    assert c_i > 0
    pts = necessity_probe(disk_grid, PHI3, c_i, [((0.0, 0.0), 1.0)])
    assert len(pts) == 1
    p = pts[0]
    assert p.b[0] == 1.0
    assert p.b1_at_least_tenth
    assert p.chain and all(term["ok"] for term in p.chain)
    # telescoping partial sums
    assert p.b[1] - p.b[-1] == pytest.approx(
        sum(p.b[j] - p.b[j + 1] for j in range(1, len(p.b) - 1)), abs=1e-12)


def test_necessity_probe_refuses_non_subexponential(disk_grid):
    with pytest.raises(UsageError):
        necessity_probe(disk_grid, parse_young("powerexp:4,1,1"), 1.0,
                        [((0.0, 0.0), 1.0)])
