"""Radial solutions of the biharmonic Gel'fand equation in R^N.

The equation is handled as the cooperative system ``-Δu = v, -Δv = λ e^u``
written in the radial variable, state ``(u, u', v, v')``. Entire solutions
use ``λ = 1``; the ball module reuses the same machinery with a load.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.interpolate import CubicHermiteSpline

from .numerics import BLOWUP, REACHED, UNDERFLOW, IntegratorConfig, bisect, integrate

GLOBAL = "global"
BLOWUP_KIND = "blowup"
UNDETERMINED = "undetermined"

DEFAULT_R0 = 1e-3
# bisection on beta needs the deviation from the singular-like profile to show
THRESHOLD_CFG = IntegratorConfig(rel_tol=1e-12, abs_tol=1e-14, h_init=1e-5, r_max=1e4)


def _exp(x: float) -> float:
    return math.exp(x) if x < 700.0 else math.inf


def radial_field(dim: int, r: float, state, lam: float = 1.0) -> np.ndarray:
    """Derivative of ``(u, u', v, v')`` for ``-Δu = v, -Δv = lam e^u``."""
    if r <= 0:
        raise ValueError("radial_field is singular at r = 0; start with series_start")
    u, du, v, dv = state
    c = (dim - 1) / r
    return np.array((du, -v - c * du, dv, -lam * _exp(u) - c * dv))


def make_field(dim: int, lam: float = 1.0):
    def f(r, y):
        c = (dim - 1) / r
        return np.array((y[1], -y[2] - c * y[1], y[3], -lam * _exp(y[0]) - c * y[3]))

    return f


def series_coefficients(a: float, beta: float, dim: int, lam: float = 1.0):
    """Even Taylor coefficients ``(u0, u2, u4, u6), (v0, v2, v4, v6)`` at the origin."""
    n = dim
    f0 = lam * _exp(a)
    u2 = -beta / (2 * n)
    v2 = -f0 / (2 * n)
    u4 = -v2 / (4 * (n + 2))
    v4 = -f0 * u2 / (4 * (n + 2))
    u6 = -v4 / (6 * (n + 4))
    v6 = -f0 * (u4 + 0.5 * u2 * u2) / (6 * (n + 4))
    return (a, u2, u4, u6), (beta, v2, v4, v6)


def series_start(a: float, beta: float, dim: int, r0: float, lam: float = 1.0) -> np.ndarray:
    """Regular state at ``r0`` from the Taylor expansion about the origin.

    Terms through ``r^6`` are kept, so the local error is ``O(r0^8)``.
    """
    if r0 <= 0:
        raise ValueError("r0 must be positive")
    (_, u2, u4, u6), (_, v2, v4, v6) = series_coefficients(a, beta, dim, lam)
    r2 = r0 * r0
    u = a + r2 * (u2 + r2 * (u4 + r2 * u6))
    du = r0 * (2 * u2 + r2 * (4 * u4 + 6 * r2 * u6))
    v = beta + r2 * (v2 + r2 * (v4 + r2 * v6))
    dv = r0 * (2 * v2 + r2 * (4 * v4 + 6 * r2 * v6))
    return np.array((u, du, v, dv))


def natural_r0(a: float, beta: float, lam: float = 1.0, base: float = DEFAULT_R0) -> float:
    """Series start radius scaled to the solution's intrinsic length."""
    scale = 1.0
    if beta != 0:
        scale = min(scale, abs(beta) ** -0.5)
    f0 = lam * _exp(a)
    if f0 > 0:
        scale = min(scale, f0 ** -0.25)
    return base * scale


@dataclass
class RadialProfile:
    dim: int
    grid: np.ndarray
    u: np.ndarray
    du: np.ndarray
    v: np.ndarray
    dv: np.ndarray
    a: float = math.nan
    beta: float = math.nan
    lam: float = 1.0
    # for the singular solution: constant c in u = -4 ln r + ln c, used below the grid
    singular_c: float = math.nan
    _splines: Optional[tuple] = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        self.grid = np.asarray(self.grid, dtype=float)
        if self.grid.size > 1 and np.any(np.diff(self.grid) <= 0):
            raise ValueError("profile grid must be strictly increasing")

    @property
    def r_max(self) -> float:
        return float(self.grid[-1])

    @property
    def regular(self) -> bool:
        return math.isfinite(self.a) and math.isfinite(self.beta)

    def sample(self, r) -> dict:
        """Values of u, u', v, v' at arbitrary radii inside the profile range.

        Radii below the first node are filled from the origin series when the
        profile is regular.
        """
        r = np.asarray(r, dtype=float)
        if np.any(r > self.grid[-1] * (1 + 1e-12)):
            raise ValueError("radius beyond the profile range")
        if self._splines is None:
            self._splines = (
                CubicHermiteSpline(self.grid, self.u, self.du),
                CubicHermiteSpline(self.grid, self.v, self.dv),
            )
        su, sv = self._splines
        out = {"u": su(r), "du": su(r, 1), "v": sv(r), "dv": sv(r, 1)}
        inner = r < self.grid[0]
        if np.any(inner) and not self.regular:
            if not math.isfinite(self.singular_c):
                raise ValueError("radius below the first node of a non-regular profile")
            x = r[inner]
            out["u"][inner] = -4 * np.log(x) + math.log(self.singular_c)
            out["du"][inner] = -4 / x
            out["v"][inner] = 4 * (self.dim - 2) / x**2
            out["dv"][inner] = -8 * (self.dim - 2) / x**3
        elif np.any(inner):
            (u0, u2, u4, u6), (v0, v2, v4, v6) = series_coefficients(self.a, self.beta, self.dim, self.lam)
            x = r[inner]
            x2 = x * x
            out["u"][inner] = u0 + x2 * (u2 + x2 * (u4 + x2 * u6))
            out["du"][inner] = x * (2 * u2 + x2 * (4 * u4 + 6 * x2 * u6))
            out["v"][inner] = v0 + x2 * (v2 + x2 * (v4 + x2 * v6))
            out["dv"][inner] = x * (2 * v2 + x2 * (4 * v4 + 6 * x2 * v6))
        return out

    def restrict(self, r_lo: float, r_hi: float) -> "RadialProfile":
        keep = (self.grid >= r_lo) & (self.grid <= r_hi)
        return replace(self, grid=self.grid[keep], u=self.u[keep], du=self.du[keep],
                       v=self.v[keep], dv=self.dv[keep], _splines=None)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["r", "u", "du", "v", "dv"])
            for row in zip(self.grid, self.u, self.du, self.v, self.dv):
                w.writerow([f"{x:.17g}" for x in row])

    @classmethod
    def from_csv(cls, path, dim: int, a: float = math.nan, beta: float = math.nan, lam: float = 1.0):
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(dim=dim, grid=data[:, 0], u=data[:, 1], du=data[:, 2], v=data[:, 3],
                   dv=data[:, 4], a=a, beta=beta, lam=lam)


@dataclass
class ShootOutcome:
    kind: str
    blowup_radius: Optional[float] = None
    profile: Optional[RadialProfile] = None
    stop_reason: str = ""


def _profile_from(traj, a, beta, dim, lam):
    y = traj.y
    return RadialProfile(dim=dim, grid=traj.r, u=y[:, 0], du=y[:, 1], v=y[:, 2], dv=y[:, 3],
                         a=a, beta=beta, lam=lam)


def integrate_profile(a, beta, dim, cfg: IntegratorConfig, grid=None, lam=1.0, r0=None):
    """Integrate from the series start; returns the raw trajectory."""
    if r0 is None:
        r0 = natural_r0(a, beta, lam)
    if grid is not None:
        grid = np.asarray(grid, dtype=float)
        r0 = min(r0, 0.5 * grid[grid > 0][0]) if np.any(grid > 0) else r0
        grid = grid[grid > r0]
    y0 = series_start(a, beta, dim, r0, lam)
    return integrate(make_field(dim, lam), y0, r0, cfg, r_eval=grid)


def shoot(a: float, beta: float, dim: int, cfg: Optional[IntegratorConfig] = None,
          grid=None, extend: float = 1e3) -> ShootOutcome:
    """Classify the entire radial solution with ``u(0) = a`` and ``v(0) = beta``.

    ``global``: ``r_max`` reached with ``u < -1`` decreasing and ``v > 0``.
    ``blowup``: ``u`` crossed the blow-up threshold. Once ``v`` is negative it
    stays negative and forces blow-up, so a run that ends at ``r_max`` with
    ``v < 0`` is continued (up to ``extend * r_max``) to locate the radius.
    """
    if dim < 1:
        raise ValueError("dim must be >= 1")
    cfg = cfg or IntegratorConfig()
    traj = integrate_profile(a, beta, dim, cfg, grid=grid)
    y = traj.y
    if traj.stop_reason == BLOWUP:
        return ShootOutcome(BLOWUP_KIND, blowup_radius=float(traj.r[-1]), stop_reason=BLOWUP)
    if traj.stop_reason == UNDERFLOW:
        if y[-1, 1] > 0:
            return ShootOutcome(BLOWUP_KIND, blowup_radius=float(traj.r[-1]), stop_reason=UNDERFLOW)
        return ShootOutcome(UNDETERMINED, profile=_profile_from(traj, a, beta, dim, 1.0),
                            stop_reason=UNDERFLOW)
    prof = _profile_from(traj, a, beta, dim, 1.0)
    if y[-1, 2] < 0:
        # v < 0 is a blow-up certificate; locate the radius
        tail = integrate(make_field(dim), y[-1], float(traj.r[-1]), cfg.replace(r_max=extend * cfg.r_max))
        if tail.stop_reason in (BLOWUP, UNDERFLOW):
            return ShootOutcome(BLOWUP_KIND, blowup_radius=float(tail.r[-1]), stop_reason=tail.stop_reason)
        return ShootOutcome(UNDETERMINED, profile=prof, stop_reason="v_negative")
    if y[-1, 1] < 0 and y[-1, 0] < -1.0 and np.all(y[:, 2] > 0):
        return ShootOutcome(GLOBAL, profile=prof, stop_reason=REACHED)
    return ShootOutcome(UNDETERMINED, profile=prof, stop_reason=REACHED)


def _is_global(beta, dim, cfg, a=0.0) -> bool:
    out = shoot(a, beta, dim, cfg)
    if out.kind == UNDETERMINED:
        tight = cfg.replace(rel_tol=cfg.rel_tol / 100, abs_tol=cfg.abs_tol / 100,
                            h_min=min(cfg.h_min, 1e-16))
        out = shoot(a, beta, dim, tight)
    # undetermined counts as the blow-up side
    return out.kind == GLOBAL


def find_beta0(dim: int, tol: float = 1e-6, cfg: Optional[IntegratorConfig] = None,
               lo: float = 0.0, hi: Optional[float] = None):
    """Bracket ``(lo, hi)`` of the existence threshold on ``v(0)`` with ``u(0) = 0``."""
    if dim < 5:
        raise ValueError("the threshold search is meant for dim >= 5")
    cfg = cfg or THRESHOLD_CFG
    if _is_global(lo, dim, cfg):
        raise ValueError(f"beta={lo} already gives a global solution")
    if hi is None:
        hi = max(1.0, 2 * lo)
        while not _is_global(hi, dim, cfg):
            lo, hi = hi, 2 * hi
            if hi > 1e8:
                raise RuntimeError("no global solution found below beta = 1e8")
    elif not _is_global(hi, dim, cfg):
        raise ValueError(f"beta={hi} does not give a global solution")
    return bisect(lambda b: _is_global(b, dim, cfg), lo, hi, tol)


def scale_profile(p: RadialProfile, lam: float) -> RadialProfile:
    """Apply ``u(x) -> u(lam x) + 4 ln lam`` to a profile."""
    if lam <= 0:
        raise ValueError("scale factor must be positive")
    s = 4 * math.log(lam)
    return RadialProfile(dim=p.dim, grid=p.grid / lam, u=p.u + s, du=lam * p.du,
                         v=lam**2 * p.v, dv=lam**3 * p.dv, a=p.a + s,
                         beta=p.beta * lam**2, lam=p.lam, singular_c=p.singular_c)


def singular_constant(dim: int) -> float:
    return 8.0 * (dim - 2) * (dim - 4)


def singular_profile(dim: int, grid) -> RadialProfile:
    """``u = -4 ln r + ln(8(N-2)(N-4))``, the scale-invariant singular solution."""
    if dim <= 4:
        raise ValueError("the singular solution needs dim >= 5")
    r = np.asarray(grid, dtype=float)
    if np.any(r <= 0):
        raise ValueError("grid must exclude the origin")
    n = dim
    return RadialProfile(dim=n, grid=r, u=-4 * np.log(r) + math.log(singular_constant(n)),
                         du=-4 / r, v=4 * (n - 2) / r**2, dv=-8 * (n - 2) / r**3,
                         singular_c=singular_constant(n))


def vbar_limit(p: RadialProfile):
    """Tail limit of ``v`` by Richardson extrapolation in ``r^-2``.

    Returns ``(estimate, uncertainty)`` with uncertainty ``|v(r_max) - estimate|``.
    """
    if np.any(p.v <= 0) or p.du[-1] >= 0:
        raise ValueError("vbar_limit needs a global (decreasing, v > 0) profile")
    r2 = p.r_max
    r1 = 0.5 * r2
    v1 = float(p.sample([r1])["v"][0])
    v2 = float(p.v[-1])
    est = (r2**2 * v2 - r1**2 * v1) / (r2**2 - r1**2)
    return est, abs(v2 - est)


def equation_residual(p: RadialProfile) -> float:
    """Relative finite-difference defect of the first-order system on the grid.

    Compares centered differences of ``u'`` and ``v'`` with ``-v`` and
    ``-λe^u`` (after removing the ``(N-1)/r`` terms); each part is scaled by
    the magnitude of its right-hand side so the value is scale invariant.
    """
    r = p.grid
    n = p.dim

    def deriv(f):
        hm = r[1:-1] - r[:-2]
        hp = r[2:] - r[1:-1]
        return (-hp / (hm * (hm + hp))) * f[:-2] + ((hp - hm) / (hm * hp)) * f[1:-1] + (hm / (hp * (hm + hp))) * f[2:]

    rc = r[1:-1]
    res_u = deriv(p.du) + (n - 1) * p.du[1:-1] / rc + p.v[1:-1]
    f = p.lam * np.exp(p.u[1:-1])
    res_v = deriv(p.dv) + (n - 1) * p.dv[1:-1] / rc + f
    return float(max(np.max(np.abs(res_u)) / np.max(np.abs(p.v)),
                     np.max(np.abs(res_v)) / np.max(f)))
