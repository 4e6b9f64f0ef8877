import dataclasses
import json
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from bigelfand.audit import (
    EstimateReport,
    annulus_integral,
    capacitary_audit,
    fe_constants,
    fit_log_periodic,
    kato_check,
    lemma_fe_audit,
    lemma_se_audit,
    liouville_decay,
    oscillation_exponent,
    pointwise_lower_bound,
    smooth_cutoff,
)
from bigelfand.io import write_reports
from bigelfand.numerics import IntegratorConfig
from bigelfand.radial import GLOBAL, RadialProfile, _profile_from, integrate_profile, shoot, singular_profile
from bigelfand.spectrum import STABLE, classify_stability

BORDER_RADII = np.geomspace(2.0, 150.0, 25)


@pytest.fixture(scope="module")
def border(beta0_bracket):
    out = shoot(0.0, 0.5 * sum(beta0_bracket), 5, IntegratorConfig(r_max=400.0))
    assert out.kind == GLOBAL
    return out.profile


@pytest.fixture(scope="module")
def stable_profile():
    # beta1 + 1 with the frozen beta1 baseline
    p = shoot(0.0, 2.7113 + 1.0, 5, IntegratorConfig(r_max=60.0)).profile
    verdict = classify_stability(p)
    assert verdict.status == STABLE
    return p, verdict


@pytest.fixture(scope="module")
def steep_profile():
    return shoot(0.0, 14.0, 5, IntegratorConfig(r_max=60.0)).profile


def test_oscillation_exponent():
    s = oscillation_exponent(5)
    assert s.real == pytest.approx(-0.5, abs=1e-12)
    assert abs(s * (s + 3) * (s - 2) * (s + 1) - 24) < 1e-9
    assert oscillation_exponent(13) is None


def test_log_periodic_fit_recovers_exponent():
    s = oscillation_exponent(5)
    r = np.geomspace(1, 100, 20)
    vals = 3 * r**1.7 * np.exp(0.4 * r**s.real * np.cos(s.imag * np.log(r) + 0.3))
    fit = fit_log_periodic(list(zip(r, vals)), s)
    # the oscillation enters through exp, so the linear model is exact only to first order
    assert fit.exponent == pytest.approx(1.7, abs=0.05)


def test_borderline_exponents(border):
    rep_e = capacitary_audit(border, 1.0, BORDER_RADII, sharp=True, log_periodic=True)
    rep_v = capacitary_audit(border, 1.0, BORDER_RADII, integrand="v", sharp=True, log_periodic=True)
    assert rep_e.passed and rep_e.fit.exponent == pytest.approx(1.0, abs=0.1)
    assert rep_v.passed and rep_v.fit.exponent == pytest.approx(3.0, abs=0.1)
    assert rep_e.estimate_id == "ama" and rep_v.estimate_id == "l1ev"


def test_capacitary_on_steep_profile(steep_profile):
    radii = np.geomspace(1.0, 20.0, 8)
    vals = [annulus_integral(steep_profile, "exp", r) for r in radii]
    assert np.all(np.diff(vals) < 0)
    rep = capacitary_audit(steep_profile, 2.0, radii)
    assert rep.passed and rep.estimate_id == "capacitary_p"
    with pytest.raises(ValueError):
        capacitary_audit(steep_profile, 0.5, radii)
    with pytest.raises(ValueError):
        capacitary_audit(steep_profile, 1.0, [10.0, 20.0, 40.0])


def test_annulus_quadrature_against_quad(steep_profile):
    r = 3.0
    f = lambda s: math.exp(steep_profile.sample([s])["u"][0]) * s**4  # noqa: E731
    ref = quad(f, r, 2 * r, epsabs=0, epsrel=1e-12)[0] * 2 * math.pi**2.5 / math.gamma(2.5)
    assert annulus_integral(steep_profile, "exp", r) == pytest.approx(ref, rel=1e-8)


def test_pointwise_lower_bound(stable_profile):
    p, verdict = stable_profile
    rep = pointwise_lower_bound(p, verdict)
    assert rep.passed and rep.fit.min_margin >= -1e-10
    # tail margin tends to the limit of v
    assert rep.details["tail_margin"] == pytest.approx(p.v[-1], rel=1e-6)
    bad = dataclasses.replace(p, v=0.3 * p.v, _splines=None)
    rep_bad = pointwise_lower_bound(bad, verdict)
    assert not rep_bad.passed and rep_bad.fit.min_margin < 0
    assert 0 < rep_bad.fit.location < p.r_max
    with pytest.raises(ValueError):
        pointwise_lower_bound(p, "stable_outside_compact")


def test_kato_vacuous_on_stable(stable_profile):
    rep = kato_check(stable_profile[0])
    assert rep.passed and rep.details["vacuous"]


def test_kato_on_blowup_profile():
    # v(0) < sqrt(2): w > 0 throughout, and the margin equals (√2/4) e^{u/2} u'^2 >= 0
    tr = integrate_profile(0.0, 1.2, 5, IntegratorConfig(r_max=60.0))
    p = _profile_from(tr, 0.0, 1.2, 5, 1.0)
    rep = kato_check(p)
    assert rep.passed and rep.fit.n_nodes > 1000
    assert rep.fit.min_margin >= -rep.fit.slack


def test_kato_rejects_non_solution(stable_profile):
    p = stable_profile[0]
    z = np.zeros_like(p.grid)
    fake = RadialProfile(5, p.grid, z, z, z, z, a=0.0, beta=0.0)
    rep = kato_check(fake)
    assert not rep.passed
    assert rep.fit.min_margin == pytest.approx(-1.0)


def test_liouville(border, steep_profile):
    sing = liouville_decay(singular_profile(5, np.geomspace(1e-3, 1e3, 400)))
    assert sing.kind == "positive" and sing.limit == pytest.approx(24.0, rel=1e-6)
    steep = liouville_decay(steep_profile)
    assert steep.kind == "zero" and steep.limit <= 1e-8
    b = liouville_decay(border)
    assert b.kind == "positive" and b.limit == pytest.approx(24.0, rel=0.15)


def test_fe_constants():
    c1, c2 = fe_constants(1.0)
    assert c1 == pytest.approx(1.0) and c2 == pytest.approx(2.0)
    assert fe_constants(2.0)[0] == pytest.approx(3 / (2 * math.sqrt(3)))


@pytest.mark.parametrize("radius", [2.0, 4.0, 8.0])
def test_lemma_fe_on_stable_profile(stable_profile, radius):
    rep = lemma_fe_audit(stable_profile[0], 1.0, radius)
    assert rep.passed
    assert rep.details["ineq1"]["slack"] > 0
    # the underlying identity is exact at alpha = 1
    assert rep.details["identity_defect"] < 1e-10
    assert rep.details["ineq1"]["min_constant"] <= fe_constants(1.0)[0]


def test_lemma_fe_constant_fields():
    # u = c, v = k: every norm is a multiple of a cutoff norm
    grid = np.linspace(0.0, 10.0, 2001)
    c, k, alpha, radius = 0.3, 2.0, 1.5, 2.0
    p = RadialProfile(5, grid, np.full_like(grid, c), 0 * grid, np.full_like(grid, k), 0 * grid, a=c, beta=k)
    rep = lemma_fe_audit(p, alpha, radius)
    area = 2 * math.pi**2.5 / math.gamma(2.5)
    grad2 = quad(lambda s: (smooth_cutoff(s / radius)[1] / radius) ** 2 * s**4, radius, 2 * radius)[0] * area
    phi2 = quad(lambda s: smooth_cutoff(s / radius)[0] ** 2 * s**4, 0, 2 * radius)[0] * area
    e1 = rep.details["ineq1"]
    assert e1["lhs"] == pytest.approx(math.sqrt(2 * alpha - 1) / alpha * k**alpha * math.sqrt(grad2), rel=1e-8)
    assert e1["first"] == pytest.approx(math.exp(c / 2) * k ** (alpha - 0.5) * math.sqrt(phi2), rel=1e-8)
    assert e1["gradient_term"] == pytest.approx(k**alpha * math.sqrt(grad2), rel=1e-8)
    assert rep.passed


def test_lemma_fe_errors(stable_profile):
    p = stable_profile[0]
    with pytest.raises(ValueError):
        lemma_fe_audit(p, 0.5, 2.0)
    neg = dataclasses.replace(p, v=-p.v, _splines=None)
    with pytest.raises(ValueError):
        lemma_fe_audit(neg, 1.0, 2.0)


@settings(max_examples=10, deadline=None)
@given(alpha=st.floats(0.6, 3.0), radius=st.floats(1.0, 20.0))
def test_lemma_fe_holds_on_solutions(stable_profile, alpha, radius):
    rep = lemma_fe_audit(stable_profile[0], alpha, radius, n=8001)
    assert rep.passed


def test_lemma_se_records_alternative(stable_profile):
    rep = lemma_se_audit(stable_profile[0], 2.0, 4.0)
    assert rep.details["alternative"] in {"3", "4"}
    c3, c4 = rep.details["C3"], rep.details["C4"]
    assert rep.details["alternative"] == ("3" if c3 <= c4 else "4")
    with pytest.raises(ValueError):
        lemma_se_audit(stable_profile[0], 0.5, 4.0)


def test_reports_json_lines(tmp_path, border):
    reps = [capacitary_audit(border, 1.0, BORDER_RADII, log_periodic=True),
            kato_check(border)]
    path = tmp_path / "audit.jsonl"
    write_reports(reps, path)
    lines = path.read_text().splitlines()
    assert len(lines) == 2
    rec = json.loads(lines[0])
    assert rec["estimate_id"] == "ama" and list(rec) == sorted(rec)
    write_reports(reps, tmp_path / "again.jsonl")
    assert (tmp_path / "again.jsonl").read_bytes() == path.read_bytes()


def test_report_passed_flag_is_stored():
    rep = EstimateReport("x", None, True)
    assert json.loads(rep.to_json())["passed"] is True
