"""Stability spectra of radial solutions.

Test functions are decomposed into spherical harmonics, ``phi = g(r) Y_k``,
so each mode gives a one-dimensional pencil

    A_k(g) = int (g'' + (N-1) g'/r - mu_k g / r^2)^2 r^(N-1) dr
    B(g)   = int W(r) g^2 r^(N-1) dr,    W = lam e^u,

with ``mu_k = k(k+N-2)``. The radial Laplacian is discretized in flux form
on dual cells (stiffness ``K``, lumped mass ``M``), and ``A = K M^-1 K``,
which is the mixed discretization of ``|Δφ|²`` on ``H² ∩ H¹₀`` (the natural
condition ``Δφ = 0`` appears at constrained ends).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
from scipy.special import comb

from .numerics import (
    IntegratorConfig,
    QuadraticFormPair,
    bisect,
    cell_volumes,
    min_generalized_eig,
    smallest_generalized_eigs,
)
from .radial import GLOBAL, RadialProfile, shoot

log = logging.getLogger(__name__)

CLAMPED = "clamped_value"
ORIGIN = "origin_regular"
BCS = (CLAMPED, ORIGIN)

STABLE = "stable"
OUTSIDE_COMPACT = "stable_outside_compact"
UNSTABLE_OUTSIDE = "unstable_everywhere_outside"

DEFAULT_NODES = 600
TOL_SPEC = 1e-3
BORDERLINE = 1e-8

_GX, _GW = np.polynomial.legendre.leggauss(3)


class UndeterminedStability(RuntimeError):
    """The truncated problem passes but the unbounded tail cannot be certified."""


def mode_mu(dim: int, k: int) -> float:
    return float(k * (k + dim - 2))


def mode_multiplicity(dim: int, k: int) -> int:
    """Dimension of the degree-k spherical harmonics on S^(N-1)."""
    if k < 0:
        return 0
    first = comb(k + dim - 1, dim - 1, exact=True)
    second = comb(k + dim - 3, dim - 1, exact=True) if k >= 2 else 0
    return int(first - second)


def hardy_rellich_constant(dim: int) -> float:
    return dim**2 * (dim - 4) ** 2 / 16.0


def radial_grid(lo: float, hi: float, n: int, scale: float = 1.0) -> np.ndarray:
    """Nodes ``scale * sinh(x)`` with ``x`` uniform: even spacing below ``scale``,
    geometric above it."""
    if not 0 <= lo < hi:
        raise ValueError("need 0 <= lo < hi")
    if n < 4:
        raise ValueError("need at least 4 nodes")
    x = np.linspace(math.asinh(lo / scale), math.asinh(hi / scale), n)
    r = scale * np.sinh(x)
    r[0], r[-1] = lo, hi
    return r


def log_grid(lo: float, hi: float, dt: float) -> np.ndarray:
    n = int(round(math.log(hi / lo) / dt)) + 1
    return np.exp(np.linspace(math.log(lo), math.log(hi), n))


def profile_length(p: RadialProfile) -> float:
    """Intrinsic length of a profile (1 for the singular one)."""
    scale = 1.0
    if p.regular:
        if p.beta > 0:
            scale = min(scale, p.beta**-0.5)
        scale = min(scale, (p.lam * math.exp(p.a)) ** -0.25)
    return scale


def potential_of(p: RadialProfile) -> Callable:
    def w(r):
        return p.lam * np.exp(p.sample(r)["u"])

    return w


def _cell_integrals(grid, dim, fn):
    """``int fn(s) s^(N-1) ds`` over each dual cell, two 3-point Gauss halves per cell."""
    faces = np.concatenate(([grid[0]], 0.5 * (grid[1:] + grid[:-1]), [grid[-1]]))
    out = np.zeros(len(grid))
    for a, b in ((faces[:-1], grid), (grid, faces[1:])):
        h = 0.5 * (b - a)
        m = 0.5 * (a + b)
        live = h > 0
        for x, w in zip(_GX, _GW):
            s = m[live] + h[live] * x
            out[live] += w * h[live] * fn(s) * s ** (dim - 1)
    return out


def _stiffness(grid, dim, mu):
    """Flux-form ``-Δ_k``: tridiagonal ``K`` with ``(Kφ)_i ≈ -V_i Δ_k φ(r_i)``."""
    mid = 0.5 * (grid[1:] + grid[:-1])
    c = mid ** (dim - 1) / np.diff(grid)
    diag = np.zeros(len(grid))
    diag[:-1] += c
    diag[1:] += c
    if mu:
        diag += mu * _cell_integrals(grid, dim, lambda s: s**-2.0)
    return diag, -c


@dataclass
class ModeForms:
    forms: QuadraticFormPair
    stiffness: sp.csr_matrix
    volumes: np.ndarray
    weights: np.ndarray


def assemble_mode_forms(p: Optional[RadialProfile], mode_k: int, interval, bc: str = CLAMPED,
                        n_nodes: int = DEFAULT_NODES, grid=None, potential=None,
                        dim: Optional[int] = None, detail: bool = False):
    """Discrete pencil ``(A, B)`` for mode ``mode_k`` on ``[rho, R]``.

    ``potential`` overrides ``lam e^u`` of the profile (then ``p`` may be None
    and ``dim`` must be given). Constrained nodes are removed; ``forms.free``
    records which grid nodes remain.
    """
    if bc not in BCS:
        raise ValueError(f"unsupported bc {bc!r}; expected one of {BCS}")
    rho, big_r = float(interval[0]), float(interval[1])
    if p is not None:
        dim = p.dim
        if big_r > p.r_max * (1 + 1e-12) or rho < 0:
            raise ValueError("interval outside the profile range")
        if rho < p.grid[0] and not (p.regular or math.isfinite(p.singular_c)):
            raise ValueError("interval starts below the profile grid")
        if potential is None:
            potential = potential_of(p)
    elif potential is None or dim is None:
        raise ValueError("without a profile both potential and dim are required")
    if bc == ORIGIN and rho != 0:
        raise ValueError("origin_regular needs rho = 0")
    if grid is None:
        scale = profile_length(p) if p is not None else 1.0
        if rho > 0:
            scale = min(scale, rho)
        grid = radial_grid(rho, big_r, n_nodes, scale)
    grid = np.asarray(grid, dtype=float)
    mu = mode_mu(dim, mode_k)
    diag, off = _stiffness(grid, dim, mu)
    vol = cell_volumes(grid, dim)
    weights = _cell_integrals(grid, dim, potential)

    n = len(grid)
    free = np.ones(n, dtype=bool)
    free[-1] = False
    if not (bc == ORIGIN and mode_k == 0):
        free[0] = False
    idx = np.flatnonzero(free)
    k_full = sp.diags([off, diag, off], [-1, 0, 1], format="csr")
    k_ff = k_full[idx][:, idx]
    a = (k_ff @ sp.diags(1.0 / vol[idx]) @ k_ff).tocsr()
    a = 0.5 * (a + a.T)
    b = sp.diags(weights[idx], format="csr")
    forms = QuadraticFormPair(a, b, grid, free=idx)
    if detail:
        return ModeForms(forms, k_ff, vol[idx], weights[idx])
    return forms


@dataclass
class ModeSpectrum:
    mode_k: int
    mu_k: float
    nu_min: float
    domain: tuple
    bc: str
    eigvec: Optional[np.ndarray] = field(default=None, repr=False)

    def to_dict(self):
        return {"k": self.mode_k, "nu_min": self.nu_min}


def mode_spectrum(p, mode_k, interval, bc=CLAMPED, n_nodes=DEFAULT_NODES, **kw) -> ModeSpectrum:
    forms = assemble_mode_forms(p, mode_k, interval, bc, n_nodes, **kw)
    nu, vec = min_generalized_eig(forms)
    dim = p.dim if p is not None else kw["dim"]
    return ModeSpectrum(mode_k, mode_mu(dim, mode_k), nu, (float(interval[0]), float(interval[1])), bc, vec)


def scan_modes(p, interval, k_max=8, bc=CLAMPED, n_nodes=DEFAULT_NODES):
    return [mode_spectrum(p, k, interval, bc, n_nodes) for k in range(k_max + 1)]


@dataclass
class HardyRellichMargin:
    r: np.ndarray
    margin: np.ndarray
    last_negative: Optional[float]
    truncation: Optional[float]
    tail_certified: bool


def hardy_rellich_margin(p: RadialProfile, truncation: Optional[float] = None) -> HardyRellichMargin:
    """Pointwise ``N²(N-4)²/(16 r⁴) - W(r)`` on the profile nodes.

    The tail is certified when the margin is nonnegative on every node beyond
    ``truncation`` and ``r⁴ W`` is nonincreasing at the last node, so the
    margin stays nonnegative past the end of the profile.
    """
    if p.dim < 5:
        raise ValueError("Hardy-Rellich margins need dim >= 5")
    r = p.grid
    w = p.lam * np.exp(p.u)
    margin = hardy_rellich_constant(p.dim) / r**4 - w
    neg = np.flatnonzero(margin < 0)
    last = float(r[neg[-1]]) if neg.size else None
    if truncation is None:
        truncation = last if last is not None else float(r[0])
    beyond = r >= truncation
    tail_ok = bool(r[-1] * p.du[-1] <= -4 + 1e-12)
    certified = bool(np.all(margin[beyond] >= 0) and tail_ok and margin[-1] >= 0)
    return HardyRellichMargin(r, margin, last, truncation, certified)


@dataclass
class StabilityVerdict:
    status: str
    rho_star: Optional[float]
    k_scan_max: int
    tail_certified: bool
    truncation: float
    modes: list
    k_min: int
    rho_scan: list = field(default_factory=list)

    @property
    def nu_min(self) -> float:
        return min(m.nu_min for m in self.modes)

    def to_dict(self, beta=None, dim=None):
        return {
            "beta": beta,
            "dim": dim,
            "modes": [m.to_dict() for m in self.modes],
            "verdict": self.status,
            "rho_star": self.rho_star,
            "tail_certified": self.tail_certified,
        }


OUTER_FACTOR = 1e5


def extended_potential(p: RadialProfile) -> Callable:
    """``lam e^u`` inside the profile range, continued as ``W(r_max)(r_max/r)^4``.

    The continuation bounds the true potential from above whenever ``r^4 W``
    is nonincreasing past ``r_max`` (the tail condition of the certificate).
    """
    inside = potential_of(p)
    r_end = p.r_max
    w_end = p.lam * math.exp(p.u[-1])

    def w(r):
        r = np.asarray(r, dtype=float)
        out = np.empty_like(r)
        m = r <= r_end
        out[m] = inside(r[m])
        out[~m] = w_end * (r_end / r[~m]) ** 4
        return out

    return w


def default_truncation(p: RadialProfile, hr: HardyRellichMargin) -> float:
    """Outer radius of the truncated problems.

    With a Dirichlet end at ``R`` the quotient converges like ``R^(4-N)``, so
    the radius is pushed to ``1e5`` times the larger of the intrinsic length
    and the last negative-margin radius.
    """
    base = profile_length(p)
    if hr.last_negative is not None:
        base = max(base, hr.last_negative)
    return max(p.r_max, OUTER_FACTOR * base)


def _min_over_modes(p, interval, k_max, bc, n_nodes, stop_below=None, potential=None):
    modes = []
    lo, hi = interval
    scale = profile_length(p)
    if lo > 0:
        scale = min(scale, lo)
    grid = radial_grid(lo, hi, n_nodes, scale)
    pot = potential or extended_potential(p)
    for k in range(k_max + 1):
        modes.append(mode_spectrum(None, k, interval, bc, grid=grid, potential=pot, dim=p.dim))
        if stop_below is not None and modes[-1].nu_min < stop_below:
            break
    return modes


def classify_stability(p: RadialProfile, k_max: int = 8, truncation: Optional[float] = None,
                       tol: float = TOL_SPEC, n_nodes: int = DEFAULT_NODES, n_rho: int = 24,
                       rho_min: Optional[float] = None) -> StabilityVerdict:
    """Stable / stable outside a compact set / unstable on every exterior domain.

    Modes ``k <= k_max`` are tested on ``[0, R_T]`` and, if that fails, on
    annuli ``[rho, R_T]`` for a geometric ``rho`` grid up to ``R_T / 16``.
    Passing verdicts require the Hardy-Rellich tail certificate beyond the
    profile range, where the potential is continued by its ``r^-4`` bound.
    """
    if p.dim < 5:
        raise ValueError("stability classification is implemented for dim >= 5")
    hr0 = hardy_rellich_margin(p)
    big_r = truncation if truncation is not None else default_truncation(p, hr0)
    hr = hardy_rellich_margin(p, min(big_r, p.r_max))
    threshold = 1.0 - tol
    # a scale-invariant potential is under-resolved at the origin on any grid;
    # points have zero H^2 capacity for N >= 5, so clamp at the first node
    inner = 0.0 if p.regular else float(p.grid[0])
    bc = ORIGIN if inner == 0 else CLAMPED
    modes = _min_over_modes(p, (inner, big_r), k_max, bc, n_nodes)
    nus = [m.nu_min for m in modes]
    k_min = int(np.argmin(nus))
    if min(nus) >= threshold:
        if not hr.tail_certified:
            raise UndeterminedStability(
                f"nu_min={min(nus):.6g} on [0, {big_r:.4g}] but the tail beyond it is not certified")
        return StabilityVerdict(STABLE, None, k_max, True, big_r, modes, k_min)

    lo = rho_min if rho_min is not None else max(inner, 0.05 * profile_length(p))
    rhos = np.geomspace(max(lo, 1e-12), big_r / 16, n_rho)
    scan = []
    for rho in rhos:
        ann = _min_over_modes(p, (rho, big_r), k_max, CLAMPED, n_nodes, stop_below=threshold)
        nu = min(m.nu_min for m in ann)
        scan.append((float(rho), nu))
        if nu >= threshold:
            if not hr.tail_certified:
                raise UndeterminedStability(
                    f"annulus [{rho:.4g}, {big_r:.4g}] passes but the tail is not certified")
            return StabilityVerdict(OUTSIDE_COMPACT, float(rho), k_max, True, big_r, modes, k_min, scan)
    return StabilityVerdict(UNSTABLE_OUTSIDE, None, k_max, hr.tail_certified, big_r, modes, k_min, scan)


def stability_nu(p: RadialProfile, k_max: int = 8, n_nodes: int = DEFAULT_NODES, stop_below=None) -> float:
    """Smallest mode quotient on the whole space (truncated at the default radius)."""
    big_r = default_truncation(p, hardy_rellich_margin(p))
    modes = _min_over_modes(p, (0.0, big_r), k_max, ORIGIN, n_nodes, stop_below=stop_below)
    return min(m.nu_min for m in modes)


def find_beta1(dim: int, tol: float = 1e-4, beta0: Optional[float] = None, k_max: int = 8,
               n_nodes: int = DEFAULT_NODES, r_max: float = 60.0, samples: Optional[list] = None):
    """Bracket of the stability threshold on ``beta = v(0)`` (``u(0) = 0``).

    ``beta0`` should be an upper estimate of the existence threshold; it is
    computed when omitted. Every evaluated ``(beta, nu_min)`` pair is appended
    to ``samples`` when a list is supplied.
    """
    if beta0 is None:
        from .radial import find_beta0

        beta0 = find_beta0(dim, 1e-6)[1]
    cfg = IntegratorConfig(r_max=r_max)
    log_ = samples if samples is not None else []

    def stable(beta):
        out = shoot(0.0, beta, dim, cfg)
        if out.kind != GLOBAL:
            raise RuntimeError(f"beta={beta} is not global")
        nu = stability_nu(out.profile, k_max, n_nodes, stop_below=1.0)
        log_.append((beta, nu))
        return nu >= 1.0

    lo = beta0 + 1e-3
    if stable(lo):
        raise RuntimeError(f"profile just above beta0 is already stable: samples {log_}")
    hi = beta0 + 16.0 / (math.e * (dim - 4)) + 1.0
    while not stable(hi):
        lo, hi = hi, hi + 2 * (hi - beta0)
        if hi > beta0 + 1e4:
            raise RuntimeError(f"no stable profile found; samples {log_}")
    return bisect(stable, lo, hi, tol)


def beta1_upper_bound(dim: int, beta0: float) -> float:
    """Largest beta1 allowed by the closed-form Hardy-Rellich comparison."""
    return beta0 + 16.0 / (math.e * (dim - 4))


def discrete_bilaplacian(f, r, dim: int) -> np.ndarray:
    """``Δ²f`` for radial ``f`` on a uniform-in-log grid.

    Uses ``r⁴Δ² = (D-2)(D+N-4) D (D+N-2)`` with ``D = d/d ln r`` and central
    differences; exact on functions linear in ``ln r``. The two nodes at each
    end are NaN.
    """
    f = np.asarray(f, dtype=float)
    r = np.asarray(r, dtype=float)
    t = np.log(r)
    dt = np.diff(t)
    h = dt.mean()
    if np.max(np.abs(dt - h)) > 1e-9 * h:
        raise ValueError("grid must be uniform in log r")
    n = dim
    # coefficients of the quartic in D, low to high degree
    poly = np.polynomial.polynomial.polyfromroots([2, 4 - n, 0, 2 - n]).real
    out = np.full_like(f, np.nan)
    fm2, fm1, f0, fp1, fp2 = f[:-4], f[1:-3], f[2:-2], f[3:-1], f[4:]
    d1 = (fp1 - fm1) / (2 * h)
    d2 = (fp1 - 2 * f0 + fm1) / h**2
    d3 = (fp2 - 2 * fp1 + 2 * fm1 - fm2) / (2 * h**3)
    d4 = (fp2 - 4 * fp1 + 6 * f0 - 4 * fm1 + fm2) / h**4
    out[2:-2] = (poly[1] * d1 + poly[2] * d2 + poly[3] * d3 + poly[4] * d4) / r[2:-2] ** 4
    return out


def singular_residual(dim: int, r) -> float:
    """Max relative defect ``|Δ²u - e^u| / e^u`` of the singular profile under
    :func:`discrete_bilaplacian`."""
    from .radial import singular_profile

    s = singular_profile(dim, r)
    lhs = discrete_bilaplacian(s.u, s.grid, dim)[2:-2]
    rhs = np.exp(s.u[2:-2])
    return float(np.max(np.abs(lhs - rhs) / rhs))


def _gradient_forms(grid, dim, potential):
    diag, off = _stiffness(grid, dim, 0.0)
    return diag, off, _cell_integrals(grid, dim, potential)


def _bump(r, c, w):
    x = (r - c) / w
    return np.where(np.abs(x) < 1, (1 - x * x) ** 3, 0.0)


def _bump_d(r, c, w):
    x = (r - c) / w
    return np.where(np.abs(x) < 1, -6 * x * (1 - x * x) ** 2 / w, 0.0)


@dataclass
class InterpolatedCheck:
    worst_ratio: float
    ratios: list
    passed: bool


def interpolated_form_check(p: RadialProfile, verdict, interval=None, centers=None, widths=None,
                            n_eigvecs: int = 3, tol: float = 1e-3,
                            n_nodes: int = 2000) -> InterpolatedCheck:
    """Worst ``int W^(1/2) φ² / int |∇φ|²`` over bump and discrete-eigenvector families.

    ``verdict`` is a :class:`StabilityVerdict` with status stable, or a Morse
    index (int) that must be 0.
    """
    ok = verdict == 0 if isinstance(verdict, (int, np.integer)) else getattr(verdict, "status", None) == STABLE
    if not ok:
        raise ValueError("interpolated_form_check needs an input verified stable")
    dim = p.dim
    if interval is None:
        interval = (0.0, p.r_max)
    lo, hi = interval
    scale = profile_length(p)
    r = radial_grid(lo, hi, n_nodes, scale)
    half_w = lambda s: np.sqrt(potential_of(p)(s))  # noqa: E731
    if centers is None:
        centers = list(np.linspace(lo, lo + 0.8 * (hi - lo), 5))
    if widths is None:
        widths = [0.1 * (hi - lo), 0.3 * (hi - lo)]
    ratios = []
    sq = np.sqrt(np.abs(potential_of(p)(r)))
    for c in centers:
        for w in widths:
            w_eff = min(w, hi - c) if c > lo else w
            phi = _bump(r, c, w_eff)
            dphi = _bump_d(r, c, w_eff)
            if c == lo and lo > 0:
                continue
            num = np.trapezoid(sq * phi**2 * r ** (dim - 1), r)
            den = np.trapezoid(dphi**2 * r ** (dim - 1), r)
            ratios.append(0.0 if den == 0 else float(num / den))
    # eigenvectors of the second-order pencil: the worst admissible ratios
    diag, off, wts = _gradient_forms(r, dim, half_w)
    free = np.ones(len(r), dtype=bool)
    free[-1] = False
    if lo > 0:
        free[0] = False
    idx = np.flatnonzero(free)
    k_ff = sp.diags([off, diag, off], [-1, 0, 1], format="csr")[idx][:, idx]
    vals, _ = smallest_generalized_eigs(k_ff, sp.diags(wts[idx]), n_eigvecs)
    ratios.extend(0.0 if not math.isfinite(v) else float(1.0 / v) for v in vals)
    worst = max(ratios) if ratios else 0.0
    return InterpolatedCheck(worst, ratios, worst <= 1.0 + tol)


@dataclass
class MorseReport:
    index: int
    per_mode: dict
    borderline: list
    nu_min: float


def morse_index_navier(p: RadialProfile, k_max: int = 8, n_nodes: int = DEFAULT_NODES,
                       radius: float = 1.0) -> MorseReport:
    """Count generalized eigenvalues ``nu < 1`` of ``(∫|Δφ|², ∫λe^uφ²)`` on the ball.

    Each degree-k mode contributes with the dimension of its harmonic space.
    Eigenvalues within ``1e-8`` of 1 are listed as borderline and not counted.
    """
    total = 0
    per_mode = {}
    borderline = []
    nu_min = math.inf
    for k in range(k_max + 1):
        md = assemble_mode_forms(p, k, (0.0, radius), ORIGIN, n_nodes, detail=True)
        a = md.forms.a_matrix
        s = 1.0 / np.sqrt(md.weights)
        c = sp.diags(s) @ a @ sp.diags(s)
        n = c.shape[0]
        band = np.zeros((3, n))
        band[2] = c.diagonal(0)
        band[1, 1:] = c.diagonal(1)
        band[0, 2:] = c.diagonal(2)
        vals = sla.eig_banded(band, eigvals_only=True, select="v", select_range=(-np.inf, 1.0 + BORDERLINE))
        first = sla.eig_banded(band, eigvals_only=True, select="i", select_range=(0, 0))[0]
        nu_min = min(nu_min, float(first))
        near = [float(v) for v in vals if abs(v - 1.0) <= BORDERLINE]
        count = int(np.sum(vals < 1.0 - BORDERLINE))
        borderline.extend((k, v) for v in near)
        mult = mode_multiplicity(p.dim, k)
        per_mode[k] = count * mult
        total += count * mult
    return MorseReport(total, per_mode, borderline, nu_min)
