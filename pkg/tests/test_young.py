import math

import numpy as np
import pytest

from obext.errors import UsageError
from obext.young import check_subexponential, compute_cphi, parse_young

ALL_KINDS = [
    "power:3", "power:2.5", "powerlog:2,2", "powerlog:3,1",
    "powerexp:3,1,0.5", "powerexp:4,1,1", "exptaylor:1,0.5", "exptaylor:1,1",
]


def test_eval_power():
    assert parse_young("power:3")(2.0) == 8.0


def test_eval_zero_is_zero():
    for spec in ALL_KINDS:
        assert parse_young(spec)(0.0) == 0.0


def test_eval_exptaylor_truncated_series():
    # n=2, alpha=1 keeps Taylor terms up to degree 2: e - 1 - 1 - 1/2
    phi = parse_young("exptaylor:1,1", n=2)
    assert phi(1.0) == pytest.approx(math.e - 2.5, abs=1e-12)


def test_eval_overflow_saturates():
    phi = parse_young("powerexp:4,1,1")
    assert math.isinf(phi(1e4))


def test_inverse_power():
    assert parse_young("power:3").inverse(8.0) == pytest.approx(2.0, rel=1e-8)


def test_inverse_zero():
    for spec in ALL_KINDS:
        assert parse_young(spec).inverse(0.0) == 0.0


def test_inverse_roundtrip_exptaylor():
    phi = parse_young("exptaylor:1,1")
    assert phi.inverse(phi(1.0)) == pytest.approx(1.0, rel=1e-8)


@pytest.mark.parametrize("spec", ALL_KINDS)
def test_inverse_roundtrip_log_ladder(spec):
    phi = parse_young(spec)
    for t in np.geomspace(1e-3, 50.0, 100):
        y = phi(float(t))
        if not math.isfinite(y):
            continue
        assert phi.inverse(y) == pytest.approx(t, rel=1e-8)


@pytest.mark.parametrize("spec", ALL_KINDS)
def test_convex_monotone_positive(spec):
    phi = parse_young(spec)
    ts = np.geomspace(1e-4, 30.0, 120)
    vals = phi(ts)
    finite = np.isfinite(vals)
    ts, vals = ts[finite], vals[finite]
    assert np.all(vals > 0)
    assert np.all(np.diff(vals) >= 0)
    # midpoint convexity on the sampled grid
    rng = np.random.default_rng(0)
    for _ in range(200):
        a, b = sorted(rng.uniform(0.0, 20.0, size=2))
        lam = rng.uniform(0.0, 1.0)
        lhs = phi(lam * a + (1 - lam) * b)
        rhs = lam * phi(a) + (1 - lam) * phi(b)
        if math.isfinite(rhs):
            assert lhs <= rhs + 1e-12 * max(rhs, 1.0)


def test_grows_beyond_any_bound():
    for spec in ALL_KINDS:
        phi = parse_young(spec)
        assert phi(1e6) > 1e6 or math.isinf(phi(1e6))


@pytest.mark.parametrize("p,expected", [(2.5, 2.0), (3.0, 1.0), (4.0, 0.5), (6.0, 0.25)])
def test_cphi_power_closed_form(p, expected):
    # hand integration: inner integral t^(p-n)/(p-n), ratio 1/(p-n)
    res = compute_cphi(parse_young(f"power:{p}"))
    assert not res.diverges
    assert res.value == pytest.approx(expected, rel=1e-3)


def test_cphi_power_two_diverges():
    assert compute_cphi(parse_young("power:2")).diverges


def test_cphi_finite_for_listed_families():
    for spec in ALL_KINDS:
        res = compute_cphi(parse_young(spec))
        assert not res.diverges
        assert math.isfinite(res.value)


def test_cphi_borderline_flagged_as_increasing():
    # t^n log^alpha grows along the ladder: sup-so-far plus monotonicity flag
    res = compute_cphi(parse_young("powerlog:2,2"))
    assert res.increasing_at_edge


def test_cphi_argmax_reported():
    res = compute_cphi(parse_young("power:3"))
    assert math.isfinite(res.t_argmax)


SUBEXP_VERDICTS = {
    "power:4": True,
    "powerlog:2,2": True,
    "powerlog:3,1": True,
    "powerexp:3,1,0.5": True,
    "powerexp:4,1,1": False,
    "exptaylor:1,0.5": True,
    "exptaylor:1,1": False,
}


@pytest.mark.parametrize("spec,expected", sorted(SUBEXP_VERDICTS.items()))
def test_subexponential_classification(spec, expected):
    rep = check_subexponential(parse_young(spec))
    assert rep.subexponential is expected
    if not expected:
        assert rep.failing_c is not None


def test_parse_rejects_bad_specs():
    with pytest.raises(UsageError):
        parse_young("power")
    with pytest.raises(UsageError):
        parse_young("nosuch:1")
    with pytest.raises(UsageError):
        parse_young("power:xyz")
    with pytest.raises(UsageError):
        parse_young("power:-1")
    with pytest.raises(UsageError):
        parse_young("powerexp:3,1")


def test_eval_rejects_negative():
    with pytest.raises(UsageError):
        parse_young("power:3")(-1.0)
