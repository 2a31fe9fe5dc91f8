import math

import numpy as np
import pytest

from obext.errors import UsageError
from obext.geometry import (SamplingPlan, ahlfors_constant, ball_measure,
                            ball_measure_analytic, ball_measure_brute, diam,
                            hull_diameter, parse_domain, rasterize)
from obext.geometry import DomainGrid


def test_disk_area_converges(disk_grid):
    assert disk_grid.omega_area() == pytest.approx(math.pi, abs=0.05)


def test_square_area_exact_when_h_divides(square_grid):
    assert square_grid.omega_area() == 1.0


def test_cusp_area():
    g = rasterize(parse_domain("cusp:3,1"), 0.005, 4.0)
    assert g.omega_area() == pytest.approx(0.5, abs=0.02)


def test_box_is_square_lattice_aligned(disk_grid):
    g = disk_grid
    assert g.nx == g.ny and g.nx & (g.nx - 1) == 0
    assert g.x0 / g.h == pytest.approx(round(g.x0 / g.h), abs=1e-9)


def test_margin_precondition():
    with pytest.raises(UsageError):
        rasterize(parse_domain("disk:1"), 0.02, 1.0)  # below 2*diam
    rasterize(parse_domain("disk:1"), 0.05, 1.0, enforce_margin=False)


def test_distance_field_lipschitz(disk_grid):
    d = disk_grid.dist
    h = disk_grid.h
    assert np.abs(np.diff(d, axis=0)).max() <= h * math.sqrt(2) + 1e-12
    assert np.abs(np.diff(d, axis=1)).max() <= h * math.sqrt(2) + 1e-12


def test_distance_field_lipschitz_raster_domain():
    g = rasterize(parse_domain("cusp:3,1"), 0.01, 4.0)
    assert not g.analytic_dist
    assert np.abs(np.diff(g.dist, axis=0)).max() <= g.h * math.sqrt(2) + 1e-12


def test_ball_measure_contains_domain(disk_grid):
    assert ball_measure(disk_grid, (0.0, 0.0), 2.0) == pytest.approx(math.pi, abs=0.05)


def test_ball_measure_subdisk(disk_grid):
    assert ball_measure(disk_grid, (0.0, 0.0), 0.5) == pytest.approx(math.pi / 4, abs=0.02)


def test_ball_measure_matches_brute_force(disk_grid):
    rng = np.random.default_rng(3)
    for _ in range(12):
        x = tuple(rng.uniform(-1.2, 1.2, size=2))
        r = float(rng.uniform(0.05, 1.5))
        assert ball_measure(disk_grid, x, r) == ball_measure_brute(disk_grid, x, r)


def test_ball_measure_matches_lens_formula(disk_grid):
    spec = disk_grid.spec
    for x, r in [((0.3, -0.2), 0.7), ((0.9, 0.0), 0.4), ((0.0, 0.0), 1.5)]:
        m = ball_measure(disk_grid, x, r)
        assert m == pytest.approx(ball_measure_analytic(spec, x, r), abs=0.03)


def test_ball_measure_nondecreasing_in_r(disk_grid):
    vals = [ball_measure(disk_grid, (0.4, 0.1), r) for r in np.linspace(0.05, 2.5, 40)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))


def test_cusp_tip_measure_within_factor():
    # thickness 2x^3 integrates to r^4/2; raster resolves it within factor 1.5
    spec = parse_domain("cusp:3,1")
    g = rasterize(spec, 0.001, 0.3, enforce_margin=False)
    m = ball_measure(g, (0.0, 0.0), 0.1)
    exact = ball_measure_analytic(spec, (0.0, 0.0), 0.1)
    assert exact == pytest.approx(5e-5, rel=0.02)
    assert m / exact > 1 / 1.5 and m / exact < 1.5


def test_diam_disk_square(disk_grid, square_grid):
    assert diam(disk_grid) == 2.0
    assert diam(square_grid) == pytest.approx(math.sqrt(2.0))


def test_diam_cusp_matches_hull_oracle():
    spec = parse_domain("cusp:3,1")
    g = rasterize(spec, 0.005, 4.0)
    # farthest boundary pair of the closure: the two outer corners (1, +-1)
    assert diam(g) == 2.0
    assert hull_diameter(g) == pytest.approx(diam(g), abs=4 * g.h)


def test_diam_halfplane_infinite():
    g = rasterize(parse_domain("halfplane"), 0.02, 4.0)
    assert math.isinf(diam(g))


def test_ahlfors_disk(disk_grid):
    res = ahlfors_constant(disk_grid)
    assert res.c_inf == pytest.approx(math.pi / 16.0, abs=0.02)
    assert res.arg_r == pytest.approx(4.0, rel=0.01)  # worst case at r = 2*diam
    assert res.n_centers_used >= 90


def test_ahlfors_square(square_grid):
    res = ahlfors_constant(square_grid)
    assert res.c_inf == pytest.approx(0.125, abs=0.02)


def test_ahlfors_refinement_stability():
    a = ahlfors_constant(rasterize(parse_domain("disk:1"), 0.02, 4.0)).c_inf
    b = ahlfors_constant(rasterize(parse_domain("disk:1"), 0.01, 4.0)).c_inf
    assert abs(a - b) <= 0.1 * a


def test_ahlfors_plan_validation():
    with pytest.raises(UsageError):
        SamplingPlan(n_centers=10)


def test_cusp_tip_ratio_ladder_decreases():
    # regularity-failure signature at the tip, on the exact thickness profile
    spec = parse_domain("cusp:3,1")
    ratios = [ball_measure_analytic(spec, (0.0, 0.0), 2.0 ** -k) / 4.0 ** -k
              for k in range(1, 8)]
    assert all(b < a for a, b in zip(ratios, ratios[1:]))
    assert ratios[-1] < 0.01


def test_cusp_grid_ratio_ladder_decreases_down_to_resolution():
    g = rasterize(parse_domain("cusp:3,1"), 0.001, 0.3, enforce_margin=False)
    x = (0.08, 0.0005)  # first resolvable cells near the tip
    ratios = [ball_measure(g, x, 2.0 ** -k) / 4.0 ** -k for k in range(1, 5)]
    assert all(b < a for a, b in zip(ratios, ratios[1:]))


def test_grid_file_roundtrip(tmp_path):
    g = rasterize(parse_domain("disk:0.5"), 0.1, 2.0)
    path = tmp_path / "grid.txt"
    g.save(path)
    g2 = DomainGrid.load(path, spec=g.spec)
    assert g2.h == g.h and g2.box == g.box
    assert np.array_equal(g2.indicator, g.indicator)
    assert np.array_equal(g2.dist, g.dist)


def test_annulus_rasterizes():
    g = rasterize(parse_domain("annulus:0.5,1"), 0.02, 4.0)
    assert g.omega_area() == pytest.approx(math.pi * 0.75, abs=0.05)
    assert g.analytic_dist


def test_domain_parse_errors():
    with pytest.raises(UsageError):
        parse_domain("blob:1")
    with pytest.raises(UsageError):
        parse_domain("annulus:1,0.5")
    with pytest.raises(UsageError):
        parse_domain("cusp:0.5,1")
