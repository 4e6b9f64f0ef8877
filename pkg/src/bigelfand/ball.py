"""The Navier problem Δ²u = λe^u in the unit ball, u = Δu = 0 on the boundary.

Radial solutions are shot from the origin with data ``u(0) = a``,
``v(0) = beta`` under load ``lam``; the boundary conditions ``u(1) = v(1) = 0``
fix ``(beta, lam)`` for each ``a``. The solution set is a curve in
``(a, beta, lam)`` followed by pseudo-arclength continuation in ``(a, lam)``.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import solve_ivp
from scipy.optimize import minimize_scalar
from scipy.special import betainc

from .numerics import (
    IntegratorConfig,
    PowerFit,
    ball_volume,
    fit_power_law,
    integrate,
    radial_integral,
    sphere_area,
)
from .radial import RadialProfile, make_field, natural_r0, series_start
from .spectrum import morse_index_navier, radial_grid

log = logging.getLogger(__name__)

BALL_CFG = IntegratorConfig(rel_tol=1e-12, abs_tol=1e-14, h_init=1e-5, r_max=1.0, blowup_threshold=200.0)
PROFILE_NODES = 801


class BallSolveError(RuntimeError):
    def __init__(self, msg, residual=math.inf, condition=math.inf):
        super().__init__(f"{msg} (best residual {residual:.3g}, Jacobian condition {condition:.3g})")
        self.residual = residual
        self.condition = condition


class ContinuationStall(RuntimeError):
    pass


def green_center(dim: int) -> float:
    """``G(0)`` for ``Δ²G = 1`` in the unit ball with Navier conditions."""
    return (dim + 4) / (8.0 * dim**2 * (dim + 2))


@dataclass
class BranchPoint:
    a: float
    lam: float
    beta: float
    sup_norm: float
    morse_index: int = -1
    is_fold: bool = False
    residual: float = math.nan
    bc_residual: float = math.nan
    nu_min: float = math.nan
    profile: Optional[RadialProfile] = field(default=None, repr=False, compare=False)

    def row(self):
        return {"a": self.a, "lambda": self.lam, "beta": self.beta, "sup_norm": self.sup_norm,
                "morse_index": self.morse_index, "is_fold": int(self.is_fold)}


@dataclass
class Branch:
    dim: int
    points: list
    lambda_star: float
    folds: list
    a_star: float = math.nan

    def first_fold(self) -> Optional[int]:
        return self.folds[0] if self.folds else None


def _sensitivity_field(dim, lam):
    n1 = dim - 1

    def f(r, y):
        c = n1 / r
        eu = math.exp(y[0]) if y[0] < 700 else math.inf
        out = np.empty(16)
        out[0] = y[1]
        out[1] = -y[2] - c * y[1]
        out[2] = y[3]
        out[3] = -lam * eu - c * y[3]
        # sensitivities with respect to (a, beta, lam)
        for j, forced in ((4, 0.0), (8, 0.0), (12, 1.0)):
            out[j] = y[j + 1]
            out[j + 1] = -y[j + 2] - c * y[j + 1]
            out[j + 2] = y[j + 3]
            out[j + 3] = -lam * eu * y[j] - forced * eu - c * y[j + 3]
        return out

    return f


def _start16(a, beta, lam, dim, r0):
    y = np.empty(16)
    y[:4] = series_start(a, beta, dim, r0, lam)
    # the series is a low-degree polynomial in the data: central differences are exact enough
    for j, (da, db, dl) in ((4, (1, 0, 0)), (8, (0, 1, 0)), (12, (0, 0, 1))):
        h = 1e-5 * max(1.0, abs(a) * da + abs(beta) * db + abs(lam) * dl)
        plus = series_start(a + h * da, beta + h * db, dim, r0, lam + h * dl)
        minus = series_start(a - h * da, beta - h * db, dim, r0, lam - h * dl)
        y[j:j + 4] = (plus - minus) / (2 * h)
    return y


def _solve(fun, y0, r0, cfg, r_eval=None):
    # 8th-order steps pay off at the tight tolerances used on the ball
    with np.errstate(over="ignore", invalid="ignore"):
        sol = solve_ivp(fun, (r0, 1.0), y0, method="DOP853", rtol=cfg.rel_tol, atol=cfg.abs_tol,
                        first_step=min(cfg.h_init, 0.1 * r0), t_eval=r_eval)
    if sol.status != 0 or not np.all(np.isfinite(sol.y[:, -1])):
        return None
    return sol


def ball_map(a, beta, lam, dim, cfg: IntegratorConfig = BALL_CFG):
    """``F = (u(1), v(1))`` and its Jacobian with respect to ``(a, beta, lam)``."""
    r0 = natural_r0(a, beta, lam)
    sol = _solve(_sensitivity_field(dim, lam), _start16(a, beta, lam, dim, r0), r0, cfg)
    if sol is None:
        return None, None
    y = sol.y[:, -1]
    f = np.array((y[0], y[2]))
    jac = np.array([[y[4], y[8], y[12]], [y[6], y[10], y[14]]])
    return f, jac


def _scaled_norm(f, a, beta):
    # boundary values relative to the central values they are integrated down from
    return max(abs(f[0]) / max(1.0, abs(a)), abs(f[1]) / max(1.0, abs(beta)))


def _profile(a, beta, lam, dim, cfg, n_nodes=PROFILE_NODES):
    scale = min(1.0, (lam * math.exp(a)) ** -0.25 if lam > 0 else 1.0)
    if beta > 0:
        scale = min(scale, beta**-0.5)
    grid = radial_grid(0.0, 1.0, n_nodes, scale)
    r0 = natural_r0(a, beta, lam)
    r_eval = np.concatenate(([r0], grid[grid > r0]))
    sol = _solve(make_field(dim, lam), series_start(a, beta, dim, r0, lam), r0, cfg, r_eval)
    if sol is None:
        raise BallSolveError(f"profile integration failed at a={a}")
    y = sol.y
    return RadialProfile(dim=dim, grid=sol.t, u=y[0], du=y[1], v=y[2], dv=y[3], a=a, beta=beta, lam=lam)


def _finish(a, beta, lam, dim, cfg, with_morse, k_max):
    p = _profile(a, beta, lam, dim, cfg)
    tight = cfg.replace(rel_tol=max(cfg.rel_tol / 100, 5e-14), abs_tol=cfg.abs_tol / 100)
    q = _profile(a, beta, lam, dim, tight)
    res = max(np.max(np.abs(p.u - q.u)) / max(1.0, np.max(np.abs(q.u))),
              np.max(np.abs(p.v - q.v)) / max(1.0, np.max(np.abs(q.v))))
    bc = _scaled_norm((q.u[-1], q.v[-1]), a, beta)
    pt = BranchPoint(a, lam, beta, float(max(np.max(p.u), a)), residual=float(res),
                     bc_residual=float(bc), profile=p)
    if with_morse:
        rep = morse_index_navier(p, k_max=k_max)
        pt.morse_index = rep.index
        pt.nu_min = rep.nu_min
    return pt


def solve_ball(a: float, dim: int, guess=None, cfg: IntegratorConfig = BALL_CFG, tol: float = 1e-10,
               max_iter: int = 40, with_morse: bool = True, k_max: int = 8) -> BranchPoint:
    """Newton on ``(beta, lam)`` for ``u(1) = v(1) = 0`` with ``u(0) = a``.

    ``a = 0`` returns the zero-load seed ``lam = beta = 0``. Without a guess
    the linear response ``u ≈ lam G`` is used, which is good for small ``a``.
    """
    if a < 0:
        raise ValueError("a must be nonnegative")
    if a == 0:
        return BranchPoint(0.0, 0.0, 0.0, 0.0, morse_index=0, residual=0.0, bc_residual=0.0)
    if guess is None:
        lam = a / green_center(dim)
        guess = (lam / (2 * dim), lam)
    x = np.array(guess, dtype=float)
    f, jac = ball_map(a, x[0], x[1], dim, cfg)
    if f is None:
        raise BallSolveError("integration failed at the initial guess")
    best = _scaled_norm(f, a, x[0])
    cond = math.inf
    for _ in range(max_iter):
        if best <= tol:
            return _finish(a, x[0], x[1], dim, cfg, with_morse, k_max)
        j2 = jac[:, 1:]
        cond = float(np.linalg.cond(j2))
        step = np.linalg.solve(j2, -f)
        t = 1.0
        while t > 1e-4:
            trial = x + t * step
            if trial[1] > 0:
                ft, jt = ball_map(a, trial[0], trial[1], dim, cfg)
                if ft is not None and _scaled_norm(ft, a, trial[0]) < best:
                    x, f, jac = trial, ft, jt
                    best = _scaled_norm(f, a, x[0])
                    break
            t *= 0.5
        else:
            break
    if best <= tol:
        return _finish(a, x[0], x[1], dim, cfg, with_morse, k_max)
    raise BallSolveError(f"Newton did not converge for a={a}", best, cond)


def _tangent(jac, prev=None, lam_scale=1.0):
    t = np.cross(jac[0], jac[1])
    norm = math.hypot(t[0], t[2] / lam_scale)
    t = t / norm
    if prev is not None:
        if t[0] * prev[0] + t[2] * prev[2] / lam_scale**2 < 0:
            t = -t
    elif t[0] < 0:
        t = -t
    return t


def _beta_of(y):
    return math.exp(y[1] + 0.5 * y[0] + 0.5 * math.log(y[2]))


def _log_map(y, dim, cfg):
    # branch coordinates (a, c, lam) with beta = sqrt(lam) e^{a/2} e^c: the scaling
    # of the concentrated profile, so c stays nearly constant deep along the branch
    if y[2] <= 0:
        return None, None
    beta = _beta_of(y)
    f, jac = ball_map(y[0], beta, y[2], dim, cfg)
    if f is None:
        return None, None
    jb = jac[:, 1] * beta
    out = np.column_stack([jac[:, 0] + 0.5 * jb, jb, jac[:, 2] + 0.5 * jb / y[2]])
    return f, out


def _to_branch_coords(a, beta, lam):
    return np.array([a, math.log(beta) - 0.5 * a - 0.5 * math.log(lam), lam])


def _corrector(y_pred, t, dim, cfg, lam_scale, tol=1e-10, floor_tol=1e-8, max_iter=8):
    """Newton on ``F = 0`` plus the arclength constraint.

    Deep along the branch the boundary values carry integration noise near
    ``tol``; a point is then accepted once the Newton update is negligible and
    ``|F| <= floor_tol``.
    """
    y = y_pred.copy()
    last_step = math.inf
    for it in range(max_iter):
        f, jac = _log_map(y, dim, cfg)
        if f is None:
            log.debug("corrector: integration failed at %s", y)
            return None, None, it
        err = _scaled_norm(f, y[0], _beta_of(y))
        log.debug("corrector it %d: |F|=%.3g step=%.3g", it, err, last_step)
        g = np.array([f[0], f[1], t[0] * (y[0] - y_pred[0]) + t[2] * (y[2] - y_pred[2]) / lam_scale**2])
        if abs(g[2]) <= 1e-12 and (err <= tol or (err <= floor_tol and last_step <= 1e-10)):
            return y, jac, it
        m = np.vstack([jac, [t[0], 0.0, t[2] / lam_scale**2]])
        try:
            dy = np.linalg.solve(m, -g)
        except np.linalg.LinAlgError:
            return None, None, it
        last_step = float(np.max(np.abs(dy) / np.maximum(1.0, np.abs(y))))
        y = y + dy
        if y[2] <= 0 or not np.all(np.isfinite(y)):
            return None, None, it
    return None, None, max_iter


def _pin_a(y, a, dim, cfg, iters=6):
    # move a branch state onto u(0) = a exactly; keeps the state if Newton fails
    z = np.array([a, y[1], y[2]])
    for _ in range(iters):
        f, jac = _log_map(z, dim, cfg)
        if f is None:
            return y
        if _scaled_norm(f, a, _beta_of(z)) <= 1e-10:
            return z
        try:
            z[1:] += np.linalg.solve(jac[:, 1:], -f)
        except np.linalg.LinAlgError:
            return y
    return y if _log_map(z, dim, cfg)[0] is None else z


def continue_branch(dim: int, a_max: float, ds: float = 0.05, cfg: IntegratorConfig = BALL_CFG,
                    lam_scale: Optional[float] = None, ds_min: float = 1e-7, k_max: int = 8,
                    refine_folds: bool = True, with_morse: bool = True) -> Branch:
    """Follow the branch from the zero-load seed up to ``u(0) = a_max``.

    Arclength is measured in ``(a, lam / lam_scale)``, by default with
    ``lam_scale = 1 / G(0)`` so both coordinates are O(1); ``ds`` bounds every
    step. Folds are sign changes of ``dlam/ds``; each is refined by maximizing
    (or minimizing) ``lam(a)`` at fixed ``a``, since ``a`` increases along the branch.
    """
    if ds <= 0 or a_max <= 0:
        raise ValueError("need ds > 0 and a_max > 0")
    if lam_scale is None:
        lam_scale = 1.0 / green_center(dim)
    a0 = min(ds, a_max) * 0.5
    first = solve_ball(a0, dim, cfg=cfg, with_morse=False)
    x = _to_branch_coords(first.a, first.beta, first.lam)
    _, jac = _log_map(x, dim, cfg)
    t = _tangent(jac, lam_scale=lam_scale)
    states = [(x.copy(), t.copy())]
    h = ds
    while x[0] < a_max:
        step = min(h, ds)
        if t[0] > 0:
            step = min(step, (a_max - x[0]) / t[0] + 1e-12) if x[0] + step * t[0] > a_max else step
        x_new, jac_new, iters = _corrector(x + step * t, t, dim, cfg, lam_scale)
        if x_new is None:
            h = step * 0.5
            if h < ds_min:
                raise ContinuationStall(f"step fell below {ds_min} at a={x[0]:.6g}, lam={x[2]:.6g}")
            continue
        t = _tangent(jac_new, t, lam_scale)
        x = x_new
        states.append((x.copy(), t.copy()))
        log.debug("branch step %d: a=%.6g lam=%.6g ds=%.3g", len(states), x[0], x[2], step)
        h = min(ds, step * (1.5 if iters <= 3 else 1.0))
        if x[0] >= a_max - 1e-3 * ds:
            states[-1] = (_pin_a(x, a_max, dim, cfg), t)
            break

    fold_pairs = [i for i in range(1, len(states)) if states[i - 1][1][2] * states[i][1][2] < 0]
    refined = {}
    if refine_folds:
        for i in fold_pairs:
            refined[i] = _refine_fold(states[i - 1][0], states[i][0], states[i - 1][1][2] > 0, dim, cfg)

    points = []
    folds = []
    for i, (ys, _) in enumerate(states):
        xs = (ys[0], _beta_of(ys), ys[2])
        if i in refined:
            xf = refined[i]
            folds.append(len(points))
            pt = _finish(xf[0], xf[1], xf[2], dim, cfg, with_morse, k_max)
            pt.is_fold = True
            points.append(pt)
        elif not refine_folds and i in fold_pairs:
            folds.append(len(points))
        pt = _finish(xs[0], xs[1], xs[2], dim, cfg, with_morse, k_max)
        if not refine_folds and i in fold_pairs:
            pt.is_fold = True
        points.append(pt)
    lam_star = max(p.lam for p in points)
    a_star = next(p.a for p in points if p.lam == lam_star)
    return Branch(dim, points, lam_star, folds, a_star)


def _refine_fold(y_lo, y_hi, is_max, dim, cfg, xatol=1e-9):
    """Locate the extremum of ``lam(a)`` between two bracketing branch states ``(a, ln beta, lam)``."""
    cache = {}

    def lam_at(a):
        if a not in cache:
            # linear interpolation of the bracket as the Newton guess
            s = (a - y_lo[0]) / (y_hi[0] - y_lo[0])
            y = (1 - s) * y_lo[1:] + s * y_hi[1:]
            pt = solve_ball(a, dim, guess=(_beta_of((a, y[0], y[1])), y[1]), cfg=cfg, with_morse=False)
            cache[a] = (pt.beta, pt.lam)
        return cache[a][1]

    lo, hi = sorted((y_lo[0], y_hi[0]))
    pad = 0.5 * (hi - lo)
    lo, hi = max(lo - pad, 1e-12), hi + pad
    sign = -1.0 if is_max else 1.0
    res = minimize_scalar(lambda a: sign * lam_at(a), bounds=(lo, hi), method="bounded",
                          options={"xatol": xatol})
    a = float(res.x)
    lam_at(a)
    beta, lam = cache[a]
    return np.array([a, beta, lam])


def extremal_parameter(branch: Branch) -> float:
    return branch.lambda_star


@dataclass(frozen=True)
class LambdaStarStudy:
    values: tuple
    rel_tols: tuple
    spread: float


def lambda_star_study(branch: Branch, rel_tols=(1e-11, 1e-12, 1e-13)) -> LambdaStarStudy:
    """Relocate the first fold at several integrator tolerances.

    ``spread`` is the largest relative deviation from the tightest value.
    """
    if not branch.folds:
        raise ValueError("branch has no fold")
    i = branch.first_fold()
    lo = branch.points[max(i - 1, 0)]
    hi = branch.points[min(i + 1, len(branch.points) - 1)]
    y_lo = _to_branch_coords(lo.a, lo.beta, lo.lam)
    y_hi = _to_branch_coords(hi.a, hi.beta, hi.lam)
    values = []
    for rt in rel_tols:
        cfg = BALL_CFG.replace(rel_tol=rt, abs_tol=min(BALL_CFG.abs_tol, rt * 1e-2))
        values.append(float(_refine_fold(y_lo, y_hi, True, branch.dim, cfg)[2]))
    ref = values[-1]
    spread = max(abs(v / ref - 1) for v in values)
    return LambdaStarStudy(tuple(values), tuple(rel_tols), spread)


def point_at_lambda(branch: Branch, lam: float, cfg: IntegratorConfig = BALL_CFG, k_max: int = 8) -> BranchPoint:
    """Minimal-branch solution with the given load (before the first fold)."""
    stop = branch.first_fold() if branch.folds else len(branch.points) - 1
    pts = branch.points[: stop + 1]
    if not 0 < lam <= pts[-1].lam:
        raise ValueError("lambda outside the computed minimal branch")
    lams = np.array([p.lam for p in pts])
    i = int(np.searchsorted(lams, lam))
    i = min(max(i, 1), len(pts) - 1)
    p0, p1 = pts[i - 1], pts[i]
    s = (lam - p0.lam) / (p1.lam - p0.lam) if p1.lam != p0.lam else 0.0
    a = p0.a + s * (p1.a - p0.a)
    beta = p0.beta + s * (p1.beta - p0.beta)
    # Newton in (a, beta) at fixed lam
    x = np.array([a, beta])
    for _ in range(30):
        f, jac = ball_map(x[0], x[1], lam, branch.dim, cfg)
        if f is None:
            raise BallSolveError("integration failed while pinning lambda")
        if _scaled_norm(f, x[0], x[1]) <= 1e-10:
            return _finish(x[0], x[1], lam, branch.dim, cfg, True, k_max)
        x = x + np.linalg.solve(jac[:, :2], -f)
    raise BallSolveError(f"could not pin lambda={lam}", _scaled_norm(f, x[0], x[1]))


# audits on ball solutions -------------------------------------------------


@dataclass
class InequalityCheck:
    name: str
    lhs: float
    rhs: float

    @property
    def slack(self) -> float:
        return self.rhs - self.lhs

    @property
    def holds(self) -> bool:
        return self.lhs <= self.rhs


def normalized_profile(point: BranchPoint, n_nodes: int = 4001) -> RadialProfile:
    """The solution rescaled to unit load on the ball of radius ``lam^(1/4)``."""
    p = point.profile
    if p is None:
        raise ValueError("branch point carries no profile")
    s = point.lam**0.25
    r = radial_grid(0.0, 1.0, n_nodes, min(1.0, (point.lam * math.exp(point.a)) ** -0.25))
    vals = p.sample(r)
    return RadialProfile(dim=p.dim, grid=r * s, u=vals["u"], du=vals["du"] / s,
                         v=vals["v"] / s**2, dv=vals["dv"] / s**3, a=point.a, beta=point.beta / s**2)


CHAIN_CHECKS = ("weighted_exp", "weighted_v", "lp_bound")


def regularity_chain_audit(point: BranchPoint, alpha: float, alpha_star: Optional[float] = None,
                           dim: Optional[int] = None):
    """The three integral inequalities of the L^p bootstrap on a stable ball solution.

    Evaluated after rescaling to unit load on ``B_R``, ``R = lam^(1/4)``; the
    zero-load seed is evaluated as ``u = v = 0`` on the unit ball (``dim`` is
    then required). Returns :class:`InequalityCheck` records named by
    ``CHAIN_CHECKS``.
    """
    if alpha_star is None:
        from .exponents import alpha_star as _star

        alpha_star = _star()
    if not 0.5 < alpha < alpha_star:
        raise ValueError("alpha must lie in (1/2, alpha_star)")
    if point.lam == 0:
        if dim is None:
            raise ValueError("dim is needed for the zero-load seed")
        r = np.linspace(0.0, 1.0, 5)
        q = RadialProfile(dim, r, *(np.zeros(5),) * 4, a=0.0, beta=0.0)
    else:
        q = normalized_profile(point)
    r, u, v, n = q.grid, q.u, np.maximum(q.v, 0.0), q.dim

    def integral(f):
        return radial_integral(f, r, n)

    eh = np.exp(0.5 * u)
    lhs1 = integral(eh * (np.exp(0.5 * alpha * u) - 1) ** 2)
    rhs1 = 0.25 * alpha * integral((np.exp(alpha * u) - 1) * v)
    lhs2 = integral(eh * v ** (2 * alpha))
    rhs2 = alpha**2 / (2 * alpha - 1) * integral(np.exp(u) * v ** (2 * alpha - 1))
    coef = 1 - alpha**3 / (8 * alpha - 4)
    power = alpha / (2 * alpha + 1)
    lhs3 = coef * integral(np.exp((alpha + 0.5) * u)) ** power
    rhs3 = 2 * ball_volume(n, r[-1]) ** power
    return [InequalityCheck(name, lhs, rhs) for name, lhs, rhs in
            zip(CHAIN_CHECKS, (lhs1, lhs2, lhs3), (rhs1, rhs2, rhs3))]


def smoothstep_cutoff(x):
    """C² cutoff: 1 on [0, 1], 0 beyond 2, quintic in between; returns (ζ, ζ', ζ'')."""
    x = np.asarray(x, dtype=float)
    s = np.clip(x - 1.0, 0.0, 1.0)
    z = 1 - (10 * s**3 - 15 * s**4 + 6 * s**5)
    live = (x > 1) & (x < 2)
    dz = np.where(live, -(30 * s**2 - 60 * s**3 + 30 * s**4), 0.0)
    d2z = np.where(live, -(60 * s - 180 * s**2 + 120 * s**3), 0.0)
    return z, dz, d2z


@dataclass
class CapacitaryCutoff:
    """``ψ = a - b|x|²`` inside ``r``, ``|x|^(1-N/2)`` outside, times ``ζ(|x|/R0)``."""

    dim: int
    r: float
    r0: float

    def __post_init__(self):
        if not 0 < self.r < self.r0:
            raise ValueError("need 0 < r < R0")
        n = self.dim
        self.a = (n + 2) / 4 * self.r ** (1 - n / 2)
        self.b = (n - 2) / 4 * self.r ** (-1 - n / 2)

    def psi(self, s):
        s = np.asarray(s, dtype=float)
        n = self.dim
        inner = s < self.r
        out = np.empty_like(s)
        out[inner] = self.a - self.b * s[inner] ** 2
        out[~inner] = s[~inner] ** (1 - n / 2)
        return out

    def dpsi(self, s):
        s = np.asarray(s, dtype=float)
        n = self.dim
        inner = s < self.r
        out = np.empty_like(s)
        out[inner] = -2 * self.b * s[inner]
        out[~inner] = (1 - n / 2) * s[~inner] ** (-n / 2)
        return out

    def lap_psi(self, s):
        s = np.asarray(s, dtype=float)
        n = self.dim
        inner = s < self.r
        out = np.empty_like(s)
        out[inner] = -2 * n * self.b
        out[~inner] = -((n / 2 - 1) ** 2) * s[~inner] ** (-1 - n / 2)
        return out

    def phi(self, s):
        z, _, _ = smoothstep_cutoff(np.asarray(s) / self.r0)
        return self.psi(s) * z

    def lap_phi(self, s):
        s = np.asarray(s, dtype=float)
        z, dz, d2z = smoothstep_cutoff(s / self.r0)
        dz, d2z = dz / self.r0, d2z / self.r0**2
        safe = np.where(s > 0, s, 1.0)
        lap_z = np.where(s > 0, d2z + (self.dim - 1) * dz / safe, 0.0)
        return z * self.lap_psi(s) + 2 * self.dpsi(s) * dz + self.psi(s) * lap_z

    def energy(self, n_per_region: int = 4001) -> float:
        """``∫|Δφ|²`` over the inner ball, the shell up to R0 and the cutoff layer."""
        total = 0.0
        for lo, hi in ((0.0, self.r), (self.r, self.r0), (self.r0, 2 * self.r0)):
            if lo == 0.0:
                s = np.linspace(0.0, hi, n_per_region)
            else:
                s = np.geomspace(lo, hi, n_per_region)
            total += radial_integral(self.lap_phi(s) ** 2, s, self.dim)
        return total


def capacitary_cutoff(r: float, r0: float, dim: int) -> CapacitaryCutoff:
    return CapacitaryCutoff(dim, r, r0)


def cutoff_energy_fit(dim: int, r0: float = 1.0, radii=None) -> PowerFit:
    if radii is None:
        radii = np.geomspace(1e-4, 1e-2, 9) * r0
    return fit_power_law([(float(r), capacitary_cutoff(float(r), r0, dim).energy()) for r in radii])


def cap_fraction(dim: int, s, d: float, rho: float):
    """Fraction of the sphere ``|x| = s`` lying inside the ball ``B_rho(x0)``, ``|x0| = d``."""
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    if d == 0:
        out[s < rho] = 1.0
        return out
    inside = s <= rho - d
    out[inside] = 1.0
    partial = (s > abs(rho - d)) & (s < rho + d)
    c = (s[partial] ** 2 + d * d - rho * rho) / (2 * s[partial] * d)
    c = np.clip(c, -1.0, 1.0)
    # cap of polar angle θ0 = arccos(c) about the direction of x0
    sin2 = 1 - c * c
    half = 0.5 * betainc((dim - 1) / 2, 0.5, sin2)
    out[partial] = np.where(c >= 0, half, 1 - half)
    return out


def off_center_integral(values_fn, dim: int, d: float, rho: float, n: int = 4001) -> float:
    """``∫_{B_rho(x0)} f(|x|) dx`` for radial ``f`` with ``|x0| = d``."""
    lo = max(0.0, d - rho)
    s = np.linspace(lo, d + rho, n)
    w = cap_fraction(dim, s, d, rho)
    return sphere_area(dim) * float(np.trapezoid(values_fn(s) * w * s ** (dim - 1), s))


def l1_growth_audit(point: BranchPoint, x0_dist: float, radii, n: int = 4001):
    """Fit ``r -> ∫_{B_r(x0)} v`` and report ``sup ∫v / r^(N-2)``."""
    p = point.profile
    radii = np.asarray(radii, dtype=float)
    if np.any(radii + x0_dist > 1.0 + 1e-12):
        raise ValueError("balls must stay inside the unit ball")
    vals = [off_center_integral(lambda s: p.sample(s)["v"], p.dim, x0_dist, r, n) for r in radii]
    fit = fit_power_law(list(zip(radii, vals)))
    ratio = max(v / r ** (p.dim - 2) for v, r in zip(vals, radii))
    return fit, ratio, vals


def ama0_audit(point: BranchPoint, radii):
    """Fit ``r -> ∫_{B_r} lam e^u`` on a centered ball."""
    p = point.profile
    vals = []
    for r in radii:
        s = np.linspace(0.0, r, 2001)
        vals.append(radial_integral(p.lam * np.exp(p.sample(s)["u"]), s, p.dim))
    return fit_power_law(list(zip(radii, vals)))


def scaling_oracle_point(b: float, dim: int, cfg: Optional[IntegratorConfig] = None):
    """Ball solution from the entire one with ``u(0) = 0, v(0) = b`` (``b`` below the
    existence threshold): cut at the first zero ``R_b`` of ``v`` and rescale.

    Returns ``(a, lam, beta)``.
    """
    cfg = cfg or IntegratorConfig(rel_tol=1e-12, abs_tol=1e-14, r_max=100.0)

    r0 = natural_r0(0.0, b)
    tr = integrate(make_field(dim), series_start(0.0, b, dim, r0), r0, cfg)
    v = tr.y[:, 2]
    k = np.flatnonzero(v <= 0)
    if k.size == 0:
        raise ValueError("v has no zero before blow-up or r_max")
    i = int(k[0])
    # refine the zero by integrating exactly to a bisected radius
    lo, hi = tr.r[i - 1], tr.r[i]
    y_lo = tr.y[i - 1]
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        seg = integrate(make_field(dim), y_lo, lo, cfg.replace(r_max=mid))
        if seg.y[-1, 2] > 0:
            lo, y_lo = mid, seg.y[-1]
        else:
            hi = mid
    big_r = 0.5 * (lo + hi)
    w = float(y_lo[0])
    a = -w
    lam = big_r**4 * math.exp(w)
    beta = big_r**2 * b
    return a, lam, beta
