import math

import pytest
from hypothesis import given, strategies as st

from bigelfand.exponents import (
    alpha_sharp,
    alpha_star,
    bootstrap_chain,
    cubic_roots,
    delta_margin,
    dim_cutoff,
    exponent_table,
    hausdorff_bound,
    lp_coefficient,
    p_star,
    q_star,
)


def bisect_root(lo, hi, f=lambda x: x**3 - 8 * x + 4):
    flo = f(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if (f(mid) > 0) == (flo > 0):
            lo, flo = mid, f(mid)
        else:
            hi = mid
    return 0.5 * (lo + hi)


def test_roots_against_bisection():
    neg, sharp, star = cubic_roots()
    assert star == pytest.approx(bisect_root(2, 3), abs=1e-12)
    assert sharp == pytest.approx(bisect_root(0.5, 0.6), abs=1e-12)
    assert neg == pytest.approx(bisect_root(-4, -3), abs=1e-12)
    assert star == pytest.approx(2.53407, abs=1e-5)


def test_alpha_sharp_value():
    assert alpha_sharp() == pytest.approx(0.51730, abs=1e-5)


@pytest.mark.xfail(strict=True, reason="literal 0.51740 disagrees with the root 0.517304")
def test_alpha_sharp_published_literal():
    assert alpha_sharp() == pytest.approx(0.51740, abs=1e-5)


def test_vieta():
    r = cubic_roots()
    assert abs(sum(r)) < 1e-12
    assert abs(r[0] * r[1] * r[2] + 4) < 1e-12
    assert abs(r[0] * r[1] + r[0] * r[2] + r[1] * r[2] + 8) < 1e-12


def test_table_invariants():
    t = exponent_table()
    assert 0.5 < t.alpha_sharp < 1
    assert t.alpha_star > 2.5
    assert t.p_star > 3
    assert t.dim_cutoff == dim_cutoff() == 12
    d = t.to_dict()
    assert d["alpha_star"] == round(alpha_star(), 12)
    assert d["by_dim"]["13"]["regular"] is False and d["by_dim"]["12"]["regular"] is True


def test_p_star_is_root_of_shifted_cubic():
    x = p_star()
    assert abs((x - 0.5) ** 3 - 8 * (x - 0.5) + 4) < 1e-12
    assert x == pytest.approx(bisect_root(3, 3.5, lambda y: (y - 0.5) ** 3 - 8 * (y - 0.5) + 4), abs=1e-12)


def test_delta_margin_values():
    assert delta_margin(1.0) == 1.0
    assert abs(delta_margin(alpha_star())) < 1e-10
    assert abs(delta_margin(alpha_sharp())) < 1e-10
    assert delta_margin(3.0) == pytest.approx(2 * math.sqrt(5) / (3 * math.sqrt(3)) - 1)
    assert delta_margin(3.0) == pytest.approx(-0.1394, abs=1e-4)
    with pytest.raises(ValueError):
        delta_margin(0.5)


def test_lp_coefficient_values():
    assert lp_coefficient(1.0) == 0.75
    assert lp_coefficient(2.5) == pytest.approx(0.0234375, abs=1e-15)
    assert abs(lp_coefficient(alpha_star())) < 1e-10
    with pytest.raises(ValueError):
        lp_coefficient(0.5)


@given(st.floats(0.5001, 20.0))
def test_delta_and_coefficient_share_sign(alpha):
    roots = cubic_roots()
    if min(abs(alpha - r) for r in roots) < 1e-6:
        return
    assert (delta_margin(alpha) > 0) == (lp_coefficient(alpha) > 0)
    assert (delta_margin(alpha) > 0) == (alpha_sharp() < alpha < alpha_star())


def test_q_star_and_hausdorff():
    assert q_star(12) == pytest.approx(6.0818, abs=1e-4)
    assert hausdorff_bound(13).bound == pytest.approx(0.8637, abs=1e-4)
    assert hausdorff_bound(16).bound == pytest.approx(3.8637, abs=1e-4)
    assert hausdorff_bound(12).regular and not hausdorff_bound(13).regular
    with pytest.raises(ValueError):
        q_star(2)


def test_bootstrap_examples():
    c = bootstrap_chain(5, 1.0, 2.0)
    assert c.values == pytest.approx((1.0, 5 / 3, 25 / 9))
    assert c.reachable and c.steps == 2
    assert not bootstrap_chain(5, 1.0, 5 / 3 * alpha_star()).reachable
    c3 = bootstrap_chain(3, 1.0, 7.0)
    assert c3.reachable and c3.steps == math.ceil(math.log(7.0) / math.log(3.0))
    with pytest.raises(ValueError):
        bootstrap_chain(2, 1.0, 2.0)


@given(st.integers(3, 40), st.integers(3, 40), st.floats(1.0, 12.0))
def test_reachability_monotone_in_dim(n1, n2, target):
    lo, hi = sorted((n1, n2))
    # smaller N has the larger ratio N/(N-2)
    if bootstrap_chain(hi, 1.0, target).reachable:
        assert bootstrap_chain(lo, 1.0, target).reachable
    assert bootstrap_chain(lo, 1.0, target).reachable == (target < lo / (lo - 2) * alpha_star())
