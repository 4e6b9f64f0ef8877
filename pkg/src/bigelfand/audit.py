"""Numerical audits of integral estimates and pointwise bounds on computed solutions.

Every audit returns an :class:`EstimateReport`; a failed audit is a report with
``passed = False``, never an exception (bad *inputs* still raise).
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from typing import Optional, Union

import numpy as np

from .io import plain
from .numerics import PowerFit, fit_power_law, radial_integral, radial_laplacian
from .radial import RadialProfile
from .spectrum import STABLE

EXPONENT_TOL = 0.1
MARGIN_TOL = 1e-8


@dataclass(frozen=True)
class MarginSummary:
    min_margin: float
    location: float
    n_nodes: int
    slack: float = 0.0


@dataclass
class EstimateReport:
    estimate_id: str
    fit: Union[PowerFit, MarginSummary, None]
    passed: bool
    inputs: dict = field(default_factory=dict)
    details: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = {"estimate_id": self.estimate_id, "passed": self.passed, "inputs": self.inputs,
             "fit": None if self.fit is None else asdict(self.fit), "details": self.details}
        return json.dumps(plain(d), sort_keys=True)


def _check_stencil():
    # the nonuniform three-point stencil must be exact on quadratics
    r = np.array([0.3, 0.45, 0.5, 0.8, 1.3])
    got = radial_laplacian(1 + 2 * r + 3 * r**2, r, 4)[1:-1]
    want = 6 + 3 * (2 + 6 * r[1:-1]) / r[1:-1]
    if not np.allclose(got, want, rtol=1e-12):
        raise RuntimeError("radial stencil is not exact on quadratics")


_check_stencil()


def _ident(p: RadialProfile) -> dict:
    return {"dim": p.dim, "a": p.a, "beta": p.beta, "lam": p.lam, "r_max": p.r_max}


def annulus_integral(p: RadialProfile, integrand: str, radius: float, power: float = 1.0,
                     n: int = 2001) -> float:
    """``∫_{R<|x|<2R}`` of ``e^{power·u}`` (``integrand="exp"``) or ``v^power`` (``"v"``)."""
    if 2 * radius > p.r_max * (1 + 1e-12) or radius <= 0:
        raise ValueError(f"annulus [{radius}, {2 * radius}] outside the profile range")
    s = np.geomspace(radius, 2 * radius, n)
    vals = p.sample(s)
    if integrand == "exp":
        f = np.exp(power * vals["u"])
    elif integrand == "v":
        f = np.abs(vals["v"]) ** power
    else:
        raise ValueError("integrand must be 'exp' or 'v'")
    return radial_integral(f, s, p.dim)


def oscillation_exponent(dim: int) -> Optional[complex]:
    """Complex root ``sigma`` (positive imaginary part) of
    ``s(s+N-2)(s-2)(s+N-4) = 8(N-2)(N-4)``: perturbations of the singular
    solution behave like ``r^sigma``. ``None`` when all roots are real.
    """
    n = dim
    poly = np.polymul(np.polymul([1, 0], [1, n - 2]), np.polymul([1, -2], [1, n - 4]))
    poly[-1] -= 8 * (n - 2) * (n - 4)
    roots = [z for z in np.roots(poly) if z.imag > 1e-12]
    return complex(roots[0]) if roots else None


def fit_log_periodic(samples, sigma: complex) -> PowerFit:
    """Power law with the damped log-periodic correction ``R^Re(s) cos(Im(s) ln R + phase)``.

    Near the singular solution the annulus integrals oscillate in ``ln R``; a
    plain log-log line then depends on where the window starts and ends.
    """
    arr = np.asarray(samples, dtype=float)
    rr, vals = arr[:, 0], arr[:, 1]
    if rr.size < 5:
        raise ValueError("need at least five samples")
    if np.any(vals <= 0) or np.any(rr <= 0):
        raise ValueError("radii and values must be positive")
    lr = np.log(rr)
    damp = rr**sigma.real
    basis = np.column_stack([np.ones_like(lr), lr, damp * np.cos(sigma.imag * lr), damp * np.sin(sigma.imag * lr)])
    coef, *_ = np.linalg.lstsq(basis, np.log(vals), rcond=None)
    resid = float(np.max(np.abs(basis @ coef - np.log(vals))))
    return PowerFit(float(math.exp(coef[0])), float(coef[1]), resid, int(rr.size))


def capacitary_audit(p: RadialProfile, p_val: float, radii, integrand: str = "exp",
                     p_star: Optional[float] = None, sharp: bool = False,
                     log_periodic: bool = False) -> EstimateReport:
    """Fit ``R -> ∫_{A_R} e^{pu}`` (or ``v^p``) against the bound exponent.

    The bound is ``N - 4p`` for ``e^{pu}`` and ``N - 2p`` for ``v^p``. Passing
    means the fitted exponent does not exceed the bound by more than 0.1; with
    ``sharp=True`` it must also lie within 0.1 of it. ``log_periodic`` fits
    the correction of :func:`fit_log_periodic`, meant for profiles close to
    the singular one.
    """
    if integrand == "exp":
        if p_star is None:
            from .exponents import p_star as _ps

            p_star = _ps()
        if not 1 <= p_val < p_star:
            raise ValueError("need 1 <= p < p*")
        bound = p.dim - 4 * p_val
        tag = "ama" if p_val == 1 else "capacitary_p"
    else:
        bound = p.dim - 2 * p_val
        tag = "l1ev" if p_val == 1 else "capacitary_q"
    radii = np.asarray(radii, dtype=float)
    vals = [annulus_integral(p, integrand, r, p_val) for r in radii]
    inputs = _ident(p) | {"p": p_val, "integrand": integrand, "log_periodic": log_periodic}
    details = {"bound_exponent": bound, "empirical_constant": max(v / r**bound for v, r in zip(vals, radii)),
               "sharp": sharp, "radii": list(radii), "values": vals}
    # integrals that underflow to zero satisfy the bound trivially
    live = [(r, v) for r, v in zip(radii, vals) if v > 0]
    details["underflow"] = len(live) < len(vals)
    sigma = oscillation_exponent(p.dim) if log_periodic else None
    if len(live) < (5 if sigma is not None else 3):
        return EstimateReport(tag, None, not sharp, inputs, details)
    fit = fit_log_periodic(live, sigma) if sigma is not None else fit_power_law(live)
    ok = fit.exponent <= bound + EXPONENT_TOL
    if sharp:
        ok = ok and abs(fit.exponent - bound) <= EXPONENT_TOL
    return EstimateReport(tag, fit, bool(ok), inputs, details)


def _is_stable(verdict) -> bool:
    if isinstance(verdict, str):
        return verdict == STABLE
    return getattr(verdict, "status", None) == STABLE


def pointwise_lower_bound(p: RadialProfile, verdict) -> EstimateReport:
    """``min (v - √2 e^{u/2})`` over the profile nodes; requires a stable verdict."""
    if not _is_stable(verdict):
        raise ValueError("the lower bound is only asserted for stable profiles")
    margin = p.v - math.sqrt(2) * np.exp(0.5 * p.u)
    i = int(np.argmin(margin))
    scale = max(1.0, float(np.max(np.abs(p.v))))
    summary = MarginSummary(float(margin[i]), float(p.grid[i]), int(p.grid.size))
    return EstimateReport("ogps", summary, bool(margin[i] >= -1e-10 * scale), _ident(p),
                          {"tail_margin": float(margin[-1])})


def kato_check(p: RadialProfile) -> EstimateReport:
    """``Δw - e^{u/2} w / √2`` on nodes with ``w = √2 e^{u/2} - v > 0``.

    ``Δw`` comes from the three-point stencil applied to ``w'`` (the profile
    carries exact first derivatives). The slack allowed for a negative margin
    is the larger of 1e-8 of the field scale and a Richardson estimate of the
    stencil error from the every-other-node subgrid.
    """
    r, dim = p.grid, p.dim
    eh = np.exp(0.5 * p.u)
    w = math.sqrt(2) * eh - p.v
    dw = eh * p.du / math.sqrt(2) - p.dv

    def lap(idx):
        rr = r[idx]
        out = np.full(rr.size, np.nan)
        hm, hp = rr[1:-1] - rr[:-2], rr[2:] - rr[1:-1]
        g = dw[idx]
        d1 = (-hp / (hm * (hm + hp))) * g[:-2] + ((hp - hm) / (hm * hp)) * g[1:-1] + (hm / (hp * (hm + hp))) * g[2:]
        out[1:-1] = d1 + (dim - 1) * g[1:-1] / rr[1:-1]
        return out

    full = lap(np.arange(r.size))
    coarse = np.full(r.size, np.nan)
    coarse[::2] = lap(np.arange(0, r.size, 2))
    err = np.where(np.isfinite(coarse), np.abs(coarse - full) / 3, 0.0)
    margin = full - eh * w / math.sqrt(2)
    live = (w > 0) & np.isfinite(full)
    if not np.any(live):
        return EstimateReport("kato", MarginSummary(math.inf, math.nan, 0), True, _ident(p), {"vacuous": True})
    scale = MARGIN_TOL * np.maximum(np.abs(full), eh * np.abs(w))
    slack = np.maximum(scale, 4 * err)
    idx = np.flatnonzero(live)
    rel = margin[idx] + slack[idx]
    j = idx[int(np.argmin(margin[idx]))]
    summary = MarginSummary(float(margin[j]), float(r[j]), int(idx.size), float(slack[j]))
    return EstimateReport("kato", summary, bool(np.all(rel >= 0)), _ident(p), {"vacuous": False})


@dataclass(frozen=True)
class LiouvilleReport:
    limit: float
    kind: str
    tail_exponent: float
    r: tuple
    values: tuple


def liouville_decay(p: RadialProfile, decades: float = 0.5) -> LiouvilleReport:
    """Tail of ``r⁴ e^{u}`` over the last ``decades`` of the profile.

    ``kind`` is ``"positive"`` when the tail is flat (fitted log-slope within
    0.1 of zero), otherwise ``"zero"``; ``limit`` is the last value in either case.
    """
    lo = p.r_max * 10**-decades
    r = np.geomspace(max(lo, p.grid[0]), p.r_max, 9)
    vals = r**4 * np.exp(p.sample(r)["u"]) * p.lam
    if np.all(vals > 0):
        slope = float(np.polyfit(np.log(r), np.log(vals), 1)[0])
    else:
        slope = -math.inf
    kind = "positive" if abs(slope) <= 0.1 else "zero"
    return LiouvilleReport(float(vals[-1]), kind, slope, tuple(r), tuple(vals))


def smooth_cutoff(x):
    """C² radial cutoff: 1 on [0, 1], 0 beyond 2; returns (ψ, ψ')."""
    from .ball import smoothstep_cutoff

    z, dz, _ = smoothstep_cutoff(x)
    return z, dz


def fe_constants(alpha: float):
    """Constants that make both first-estimate inequalities hold for solutions."""
    c1 = (abs(alpha - 1) + alpha) / (alpha * math.sqrt(2 * alpha - 1))
    c2 = 2 / math.sqrt(alpha)
    return c1, c2


@dataclass(frozen=True)
class FirstEstimate:
    lhs: float
    first: float
    gradient_term: float
    constant: float
    min_constant: float

    @property
    def rhs(self) -> float:
        return self.first + self.constant * self.gradient_term

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs


def lemma_fe_audit(p: RadialProfile, alpha: float, radius: float, n: int = 40001,
                   constants=None) -> EstimateReport:
    """Both first-estimate inequalities with cutoff ``φ = ψ(|x|/R)`` supported in ``B_2R``.

    ``constants`` overrides the pair ``(C1, C2)``; by default the values from
    solving the quadratic inequality are used. The smallest constant making
    each inequality hold on this input is reported as ``min_constant``.
    """
    if alpha <= 0.5:
        raise ValueError("alpha must exceed 1/2")
    if 2 * radius > p.r_max * (1 + 1e-12):
        raise ValueError("cutoff support exceeds the profile range")
    s = np.linspace(0.0, 2 * radius, n)
    vals = p.sample(s)
    u, du, v, dv = vals["u"], vals["du"], vals["v"], vals["dv"]
    if np.any(v <= 0):
        raise ValueError("v must be positive on the cutoff support")
    psi, dpsi = smooth_cutoff(s / radius)
    dpsi = dpsi / radius
    dim = p.dim
    lam = p.lam

    def norm(f):
        return math.sqrt(max(radial_integral(f**2, s, dim), 0.0))

    c1, c2 = constants if constants is not None else fe_constants(alpha)
    va = v**alpha
    x1 = norm(alpha * v ** (alpha - 1) * dv * psi + va * dpsi)
    b1 = norm(math.sqrt(lam) * np.exp(0.5 * u) * v ** (alpha - 0.5) * psi)
    a1 = norm(va * dpsi)
    lhs1 = math.sqrt(2 * alpha - 1) / alpha * x1
    ea = np.exp(0.5 * alpha * u)
    x2 = norm(ea * (0.5 * alpha * du * psi + dpsi))
    b2 = norm(ea * np.sqrt(v) * psi)
    a2 = norm(ea * dpsi)
    lhs2 = 2 / math.sqrt(alpha) * x2

    def min_c(lhs, first, grad):
        return max(0.0, (lhs - first) / grad) if grad > 0 else (0.0 if lhs <= first else math.inf)

    e1 = FirstEstimate(lhs1, b1, a1, c1, min_c(lhs1, b1, a1))
    e2 = FirstEstimate(lhs2, b2, a2, c2, min_c(lhs2, b2, a2))
    identity = None
    if alpha == 1:
        # with alpha = 1 the estimate comes from X² = A² + B² exactly
        identity = abs(x1**2 - a1**2 - b1**2) / max(x1**2, 1e-300)
    ok = e1.lhs <= e1.rhs * (1 + 1e-12) and e2.lhs <= e2.rhs * (1 + 1e-12)
    return EstimateReport("fe", None, bool(ok), _ident(p) | {"alpha": alpha, "R": radius},
                          {"ineq1": asdict(e1) | {"slack": e1.slack}, "ineq2": asdict(e2) | {"slack": e2.slack},
                           "identity_defect": identity})


def lemma_se_audit(p: RadialProfile, alpha: float, radius: float, n: int = 40001) -> EstimateReport:
    """Both second-estimate alternatives with their empirical constants.

    Only the disjunction is asserted, and its constant is existential, so the
    report records ``C3 = ||∇(v^α φ)||² / ∫ v^{2α}|∇φ|²`` and the analogue
    ``C4`` for ``e^{αu/2}``, and names the alternative with the smaller one.
    """
    from .exponents import alpha_sharp, alpha_star

    if not alpha_sharp() < alpha < alpha_star():
        raise ValueError("alpha must lie between the two largest cubic roots")
    if 2 * radius > p.r_max * (1 + 1e-12):
        raise ValueError("cutoff support exceeds the profile range")
    s = np.linspace(0.0, 2 * radius, n)
    vals = p.sample(s)
    u, du, v, dv = vals["u"], vals["du"], vals["v"], vals["dv"]
    if np.any(v <= 0):
        raise ValueError("v must be positive on the cutoff support")
    psi, dpsi = smooth_cutoff(s / radius)
    dpsi = dpsi / radius
    dim = p.dim
    g3 = radial_integral((alpha * v ** (alpha - 1) * dv * psi + v**alpha * dpsi) ** 2, s, dim)
    r3 = radial_integral(v ** (2 * alpha) * dpsi**2, s, dim)
    ea = np.exp(0.5 * alpha * u)
    g4 = radial_integral((ea * (0.5 * alpha * du * psi + dpsi)) ** 2, s, dim)
    r4 = radial_integral(ea**2 * dpsi**2, s, dim)
    c3 = g3 / r3 if r3 > 0 else math.inf
    c4 = g4 / r4 if r4 > 0 else math.inf
    alt = "3" if c3 <= c4 else "4"
    return EstimateReport("se", None, bool(math.isfinite(min(c3, c4))), _ident(p) | {"alpha": alpha, "R": radius},
                          {"C3": c3, "C4": c4, "alternative": alt})


def growth_audit(point, radii, x0_dist: float = 0.0) -> list:
    """``l1ev`` and ``ama0`` reports for a ball solution on the stable branch."""
    from .ball import ama0_audit, l1_growth_audit

    dim = point.profile.dim
    fit, ratio, vals = l1_growth_audit(point, x0_dist, radii)
    rep1 = EstimateReport("l1ev", fit, bool(fit.exponent >= dim - 2 - EXPONENT_TOL),
                          {"dim": dim, "a": point.a, "lam": point.lam, "x0": x0_dist},
                          {"sup_ratio": ratio, "values": vals})
    fit2 = ama0_audit(point, radii)
    rep2 = EstimateReport("ama0", fit2, bool(fit2.exponent >= dim - 4 - EXPONENT_TOL),
                          {"dim": dim, "a": point.a, "lam": point.lam}, {})
    return [rep1, rep2]
