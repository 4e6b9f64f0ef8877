"""Acceptance criteria 1 to 11, each at its stated tolerance.

Every test is named ``test_criterion_NN_*``; the conftest hook prints one
PASS/FAIL line per criterion number at the end of the session. Frozen
reference values come from the independent oracles in ``oracles.py``.
"""
import dataclasses
import math
import subprocess
import sys

import numpy as np
import pytest

from bigelfand import io as bio
from bigelfand.audit import capacitary_audit, pointwise_lower_bound
from bigelfand.ball import (
    continue_branch,
    cutoff_energy_fit,
    lambda_star_study,
    point_at_lambda,
    regularity_chain_audit,
)
from bigelfand.exponents import (
    cubic_roots,
    delta_margin,
    dim_cutoff,
    exponent_table,
    hausdorff_bound,
    lp_coefficient,
)
from bigelfand.nonradial import (
    AnisotropicQuadratic,
    assemble_u,
    monotone_iterate,
    radial_reference,
    supersolution_pair,
)
from bigelfand.numerics import IntegratorConfig
from bigelfand.radial import (
    BLOWUP_KIND,
    GLOBAL,
    find_beta0,
    shoot,
    singular_constant,
    singular_profile,
    vbar_limit,
)
from bigelfand.spectrum import (
    OUTSIDE_COMPACT,
    STABLE,
    UNSTABLE_OUTSIDE,
    beta1_upper_bound,
    classify_stability,
    find_beta1,
    log_grid,
    singular_residual,
)

LN384 = math.log(384.0)
# fixed-step RK4 bisection in log radius (oracles.rk4_beta0)
BETA0_ORACLE = 1.5583460
# dense log-grid stability oracle (oracles.dense_log_beta1)
BETA1_ORACLE = 2.7113
# first fold of the N=5 branch, frozen from the tolerance study
LAMBDA_STAR_5 = 128.7691362


def _profile(beta, dim=5, r_max=60.0):
    out = shoot(0.0, beta, dim, IntegratorConfig(r_max=r_max))
    assert out.kind == GLOBAL
    return out.profile


def _bisect_cubic(lo, hi):
    f = lambda x: x**3 - 8 * x + 4  # noqa: E731
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if (f(mid) > 0) == (f(lo) > 0):
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


@pytest.fixture(scope="module")
def beta1_bracket(beta0_bracket):
    return find_beta1(5, 1e-4, beta0=beta0_bracket[1])


@pytest.fixture(scope="module")
def branch25():
    return continue_branch(5, 25.0)


# 1 -----------------------------------------------------------------------------


def test_criterion_01_explicit_solution():
    out = shoot(LN384, 32.0, 4, IntegratorConfig(r_max=10.0))
    assert out.kind == GLOBAL
    r = np.linspace(0.0, 10.0, 4001)
    u = out.profile.sample(r)["u"]
    assert np.max(np.abs(u - (LN384 - 4 * np.log1p(r * r)))) <= 1e-6


# 2 -----------------------------------------------------------------------------


@pytest.mark.parametrize("dim, const", [(5, 24), (13, 792)])
def test_criterion_02_singular_solution(dim, const):
    r = log_grid(1e-3, 1e3, 0.1)
    assert singular_residual(dim, r) <= 1e-8
    assert singular_constant(dim) == const
    s = singular_profile(dim, r)
    np.testing.assert_allclose(r**4 * np.exp(s.u), const, rtol=1e-13)


# 3 -----------------------------------------------------------------------------


def test_criterion_03_beta0_bracket_and_flip(beta0_bracket):
    lo, hi = beta0_bracket
    assert hi - lo <= 1e-6
    assert lo - 2e-7 <= BETA0_ORACLE <= hi + 2e-7
    assert shoot(0.0, lo - 0.1, 5).kind == BLOWUP_KIND
    assert shoot(0.0, hi + 0.1, 5).kind == GLOBAL


def test_criterion_03_beta1_bracket(beta0_bracket, beta1_bracket):
    lo1, hi1 = beta1_bracket
    assert lo1 > beta0_bracket[1]
    assert hi1 <= beta1_upper_bound(5, beta0_bracket[1])
    assert hi1 <= beta0_bracket[1] + 16 / (math.e * (5 - 4))
    assert 0.5 * (lo1 + hi1) == pytest.approx(BETA1_ORACLE, abs=5e-4)


def test_criterion_03_trichotomy(beta0_bracket, beta1_bracket):
    lo0, hi0 = beta0_bracket
    lo1, hi1 = beta1_bracket
    picks = (0.5 * (lo0 + hi0), 0.5 * (hi0 + lo1), hi1 + 1.0)
    verdicts = [classify_stability(_profile(b)).status for b in picks]
    assert verdicts == [UNSTABLE_OUTSIDE, OUTSIDE_COMPACT, STABLE]


# 4 -----------------------------------------------------------------------------


@pytest.mark.parametrize("offset", [0.05, 0.5, 2.0, 10.0])
def test_criterion_04_vbar_positive_above_threshold(beta0_bracket, offset):
    est, unc = vbar_limit(_profile(beta0_bracket[1] + offset))
    assert est > 0 and est > unc


def test_criterion_04_vbar_positive_dim6():
    lo, hi = find_beta0(6, tol=1e-3)
    est, unc = vbar_limit(_profile(hi + 0.5, dim=6))
    assert est > unc > 0


def test_criterion_04_threshold_midpoint(beta0_bracket):
    mid = 0.5 * sum(beta0_bracket)
    est, unc = vbar_limit(_profile(mid, r_max=400.0))
    # zero within the tail tolerance: the extrapolated limit is below its own uncertainty
    assert abs(est) <= unc
    v = classify_stability(_profile(mid))
    assert v.status == UNSTABLE_OUTSIDE
    assert v.rho_scan and all(nu < 1 for _, nu in v.rho_scan)


# 5 -----------------------------------------------------------------------------


def test_criterion_05_exponents():
    neg, sharp, star = cubic_roots()
    assert star == pytest.approx(2.53407, abs=1e-5)
    assert star == pytest.approx(_bisect_cubic(2.0, 3.0), abs=1e-12)
    assert sharp == pytest.approx(_bisect_cubic(0.5, 0.6), abs=1e-12)
    assert abs(neg + sharp + star) <= 1e-12
    assert abs(neg * sharp + neg * star + sharp * star + 8) <= 1e-12
    assert abs(neg * sharp * star + 4) <= 1e-12
    t = exponent_table()
    assert t.p_star > 3
    assert dim_cutoff() == 12 and t.dim_cutoff == 12
    assert hausdorff_bound(13).bound == pytest.approx(0.8637, abs=1e-4)
    assert abs(delta_margin(star)) <= 1e-10
    assert abs(lp_coefficient(star)) <= 1e-10


@pytest.mark.xfail(strict=True, reason="target 0.51740 differs from the cubic root 0.517304 by 9.6e-5")
def test_criterion_05_alpha_sharp_target():
    assert exponent_table().alpha_sharp == pytest.approx(0.51740, abs=1e-5)


# 6 -----------------------------------------------------------------------------


def test_criterion_06_branch(branch25):
    pts = branch25.points
    assert pts[-1].a == 25.0
    assert math.isfinite(branch25.lambda_star)
    assert branch25.lambda_star == pytest.approx(LAMBDA_STAR_5, rel=1e-8)
    assert len(branch25.folds) >= 2
    f = branch25.first_fold()
    assert all(p.morse_index == 0 for p in pts[:f])
    assert all(p.morse_index >= 1 for p in pts[f + 1:])
    assert max(p.residual for p in pts) <= 1e-8


def test_criterion_06_lambda_star_refinement(branch25):
    study = lambda_star_study(branch25)
    assert study.spread <= 1e-4
    # grid refinement: a finer arclength step locates the same fold
    fine = continue_branch(5, 2.6, ds=0.025, with_morse=False)
    assert fine.lambda_star == pytest.approx(branch25.lambda_star, rel=1e-4)


# 7 -----------------------------------------------------------------------------


@pytest.mark.parametrize("alpha", [1.0, 2.0, 2.4])
def test_criterion_07_regularity_chain(branch25, alpha):
    point = point_at_lambda(branch25, 0.9 * branch25.lambda_star)
    assert point.lam == pytest.approx(0.9 * branch25.lambda_star)
    checks = regularity_chain_audit(point, alpha)
    assert len(checks) == 3
    assert all(c.holds and c.slack > 0 for c in checks)


# 8 -----------------------------------------------------------------------------


def test_criterion_08_borderline_exponents(beta0_bracket):
    border = _profile(0.5 * sum(beta0_bracket), r_max=400.0)
    radii = np.geomspace(2.0, 150.0, 25)
    e = capacitary_audit(border, 1.0, radii, sharp=True, log_periodic=True)
    v = capacitary_audit(border, 1.0, radii, integrand="v", sharp=True, log_periodic=True)
    assert e.fit.exponent == pytest.approx(5 - 4, abs=0.1)
    assert v.fit.exponent == pytest.approx(5 - 2, abs=0.1)
    assert e.passed and v.passed


def test_criterion_08_cutoff_energy():
    assert cutoff_energy_fit(5).exponent == pytest.approx(-2.0, abs=0.05)


# 9 -----------------------------------------------------------------------------


def test_criterion_09_pointwise_bound(beta1_bracket):
    p = _profile(beta1_bracket[1] + 1.0)
    verdict = classify_stability(p)
    assert verdict.status == STABLE
    margin = p.v - math.sqrt(2) * np.exp(0.5 * p.u)
    assert np.all(margin >= -1e-10)
    assert pointwise_lower_bound(p, verdict).passed
    factor = 0.5 * math.sqrt(2) / p.v[0]
    bad = dataclasses.replace(p, v=factor * p.v, _splines=None)
    rep = pointwise_lower_bound(bad, verdict)
    assert not rep.passed and rep.fit.min_margin < -1e-10


# 10 -----------------------------------------------------------------------------


@pytest.fixture(scope="module")
def nonradial_runs():
    eq = AnisotropicQuadratic((4.0,) * 5)
    an = AnisotropicQuadratic((4.0,) * 4 + (8.0,))
    st = AnisotropicQuadratic((20.0,) * 5)
    return {name: (q, monotone_iterate(q)) for name, q in (("equal", eq), ("aniso", an), ("stable", st))}


def test_criterion_10_monotone_and_sandwich(nonradial_runs):
    for q, fp in nonradial_runs.values():
        assert fp.grid.n == 13
        # monotone_iterate raises on any increase, so reaching here means every step decreased
        assert fp.history[-1] <= 1e-8
        big_z, big_w = supersolution_pair(fp.grid.r2(), 5)[:2]
        assert np.all(fp.z >= 0) and np.all(fp.z <= big_z)
        assert np.all(fp.w >= 0) and np.all(fp.w <= big_w)


def test_criterion_10_equal_alpha_vs_radial(nonradial_runs):
    fp = nonradial_runs["equal"][1]
    ref = radial_reference(4.0, 5)
    t, z = fp.along_axis(0)
    inner = t < 0.8 * fp.grid.length
    rel = np.abs(z[inner] - ref.z_at(t[inner])) / ref.z_at(t[inner])
    assert rel.max() <= 0.05


def test_criterion_10_anisotropic_and_hardy(nonradial_runs):
    q, fp = nonradial_runs["aniso"]
    _, z1 = fp.along_axis(0)
    _, z5 = fp.along_axis(4)
    assert np.max(np.abs(z1 - z5)) > 1e-2 * z1[0]
    sol = assemble_u(fp, q)
    assert math.isfinite(sol.hardy_radius) and sol.hardy_radius >= 0
    q20, fp20 = nonradial_runs["stable"]
    assert assemble_u(fp20, q20).stable_everywhere


# 11 -----------------------------------------------------------------------------

DETERMINISM_RUNS = [
    ["shoot", "--dim", "4", "--a", "5.950642553", "--beta", "32", "--r-max", "10"],
    ["exponents"],
    ["beta0", "--dim", "5"],
    ["beta1", "--dim", "5"],
    ["audit", "--dim", "5", "--estimates", "singular,liouville,borderline,pointwise,kato,fe"],
    ["branch", "--dim", "5", "--a-max", "3", "--ds", "0.1", "--k-max", "2"],
    ["nonradial", "--dim", "5", "--n", "9"],
]


def _cli_run(tmp, args):
    res = subprocess.run([sys.executable, "-m", "bigelfand", *args, "--out", str(tmp)], capture_output=True,
                         text=True)
    assert res.returncode in (0, 1), res.stderr
    return res


def test_criterion_11_determinism(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for args in DETERMINISM_RUNS:
        _cli_run(a, args)
        _cli_run(b, args)
    files_a = sorted(p.name for p in a.iterdir() if not p.name.startswith("manifest_"))
    files_b = sorted(p.name for p in b.iterdir() if not p.name.startswith("manifest_"))
    assert files_a == files_b and len(files_a) > 20
    for name in files_a:
        assert (a / name).read_bytes() == (b / name).read_bytes(), name
    man = bio.read_json(a / "manifest_exponents.json")
    assert "wall_time_s" in man and "versions" in man


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-v"]))
