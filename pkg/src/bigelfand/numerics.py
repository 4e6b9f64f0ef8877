"""Shared numerical kernels: ODE integration, bracketing, symmetric pencils,
radial quadrature, conjugate gradients and power-law fits."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.integrate import simpson
from scipy.special import gamma

# Dormand-Prince 5(4) tableau.
_C = (0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0)
_A = (
    (),
    (1 / 5,),
    (3 / 40, 9 / 40),
    (44 / 45, -56 / 15, 32 / 9),
    (19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729),
    (9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656),
    (35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84),
)
# difference between 5th and embedded 4th order weights
_E = (71 / 57600, 0.0, -71 / 16695, 71 / 1920, -17253 / 339200, 22 / 525, -1 / 40)

REACHED = "reached_r_max"
BLOWUP = "blowup_detected"
UNDERFLOW = "step_underflow"


@dataclass(frozen=True)
class IntegratorConfig:
    rel_tol: float = 1e-10
    abs_tol: float = 1e-12
    h_init: float = 1e-4
    h_min: float = 1e-14
    r_max: float = 50.0
    blowup_threshold: float = 50.0

    def __post_init__(self):
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("tolerances must be positive")
        if self.h_min > self.h_init:
            raise ValueError("h_min must not exceed h_init")
        if self.r_max <= 0 or self.blowup_threshold <= 0:
            raise ValueError("r_max and blowup_threshold must be positive")

    def replace(self, **changes) -> "IntegratorConfig":
        fields = dict(self.__dict__)
        fields.update(changes)
        return IntegratorConfig(**fields)


@dataclass
class Trajectory:
    r: np.ndarray
    y: np.ndarray
    stop_reason: str
    n_steps: int
    n_rejected: int
    max_local_error: float  # largest accepted scaled error estimate (<= 1)


def integrate(
    field: Callable[[float, np.ndarray], np.ndarray],
    state0: Sequence[float],
    r0: float,
    cfg: IntegratorConfig,
    r_eval: Optional[Sequence[float]] = None,
    blowup_index: int = 0,
) -> Trajectory:
    """Adaptive Dormand-Prince 5(4) integration from ``r0`` to ``cfg.r_max``.

    With ``r_eval`` the steps are shortened to land exactly on the requested
    radii and only those are recorded; otherwise every accepted step is.
    Integration stops early when ``state[blowup_index]`` exceeds the blow-up
    threshold, or when the step size falls below ``cfg.h_min``.
    """
    if r0 < 0:
        raise ValueError("r0 must be nonnegative")
    y = np.array(state0, dtype=float)
    if not np.all(np.isfinite(y)):
        raise ValueError("initial state must be finite")
    r_end = cfg.r_max
    if r_eval is not None:
        targets = np.asarray(r_eval, dtype=float)
        if np.any(np.diff(targets) <= 0):
            raise ValueError("r_eval must be strictly increasing")
        targets = targets[(targets >= r0) & (targets <= r_end)]
        rs, ys = [], []
        if targets.size and targets[0] == r0:
            rs.append(r0)
            ys.append(y.copy())
            targets = targets[1:]
        ti = 0
    else:
        targets = None
        rs, ys = [r0], [y.copy()]

    rtol, atol = cfg.rel_tol, cfg.abs_tol
    r = float(r0)
    h = min(cfg.h_init, r_end - r) if r_end > r else 0.0
    k1 = field(r, y)
    err_old = 1e-4
    n_steps = n_rej = 0
    max_err = 0.0
    reason = REACHED

    while r < r_end:
        stop = r_end
        if targets is not None and ti < targets.size:
            stop = targets[ti]
        land = False
        if r + h >= stop or r + 1.01 * h >= stop:
            h = stop - r
            land = True

        k = [k1]
        for s in range(1, 7):
            a = _A[s]
            yi = y.copy()
            for j, aj in enumerate(a):
                if aj:
                    yi += (h * aj) * k[j]
            k.append(field(r + _C[s] * h, yi))
        y_new = yi  # stage 7 input is the 5th-order solution (FSAL)
        err_vec = _E[0] * k[0]
        for j in range(2, 7):
            err_vec = err_vec + _E[j] * k[j]
        err_vec *= h
        scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
        with np.errstate(invalid="ignore", over="ignore"):
            err = float(np.max(np.abs(err_vec) / scale))
        if not np.isfinite(err):
            err = 1e10

        if err <= 1.0:
            n_steps += 1
            max_err = max(max_err, err)
            r = stop if land else r + h
            y = y_new
            k1 = k[6]
            if targets is None:
                rs.append(r)
                ys.append(y.copy())
            elif land and ti < targets.size:
                rs.append(r)
                ys.append(y.copy())
                ti += 1
            if y[blowup_index] > cfg.blowup_threshold:
                reason = BLOWUP
                break
            fac = 0.9 * max(err, 1e-10) ** (-0.17) * err_old ** 0.04
            fac = min(5.0, max(0.2, fac))
            err_old = max(err, 1e-4)
            h_next = h * fac
            if land:
                h_next = max(h_next, h)
            h = h_next
        else:
            n_rej += 1
            h *= max(0.2, 0.9 * err ** (-0.2))
            if h < cfg.h_min or r + h == r:
                reason = UNDERFLOW
                break

    return Trajectory(
        r=np.asarray(rs, dtype=float),
        y=np.asarray(ys, dtype=float).reshape(len(rs), y.size),
        stop_reason=reason,
        n_steps=n_steps,
        n_rejected=n_rej,
        max_local_error=max_err,
    )


def bisect(f, lo: float, hi: float, tol: float, max_iter: int = 200):
    """Shrink ``[lo, hi]`` around the sign change of ``f``.

    ``f`` may return a real number or a bool; for a predicate the endpoint
    values must differ. Returns ``(lo, hi)`` with ``hi - lo <= tol``.
    """
    f_lo, f_hi = f(lo), f(hi)
    if isinstance(f_lo, (bool, np.bool_)):
        if bool(f_lo) == bool(f_hi):
            raise ValueError("predicate has the same value at both endpoints")
        side = bool(f_lo)
        test = lambda x: bool(f(x)) == side  # noqa: E731
    else:
        if f_lo == 0:
            return lo, lo
        if f_hi == 0:
            return hi, hi
        if np.sign(f_lo) == np.sign(f_hi):
            raise ValueError("no sign change on the bracket")
        s_lo = np.sign(f_lo)
        test = lambda x: np.sign(f(x)) == s_lo  # noqa: E731
    it = 0
    while hi - lo > tol:
        if it >= max_iter:
            raise RuntimeError(f"bisection did not reach tol={tol} in {max_iter} iterations")
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if test(mid):
            lo = mid
        else:
            hi = mid
        it += 1
    return lo, hi


@dataclass
class QuadraticFormPair:
    """Stiffness/potential pencil ``(A, B)`` on a radial grid.

    ``free`` lists the grid indices carried by the matrices (the others are
    constrained to zero).
    """

    a_matrix: np.ndarray
    b_matrix: np.ndarray
    grid: np.ndarray
    free: Optional[np.ndarray] = None

    def __post_init__(self):
        a, b = self.a_matrix, self.b_matrix
        if a.shape != b.shape or a.shape[0] != a.shape[1]:
            raise ValueError("A and B must be square and of equal size")
        if np.any(np.diff(self.grid) <= 0):
            raise ValueError("grid must be strictly increasing")
        for name, m in (("A", a), ("B", b)):
            if sp.issparse(m):
                m = sp.csr_matrix(m)
                vals, skew = m.data, abs(m - m.T).data
            else:
                vals = np.asarray(m)
                skew = np.abs(vals - vals.T)
            if not np.all(np.isfinite(vals)):
                raise ValueError(f"{name} has non-finite entries")
            scale = max(np.max(np.abs(vals), initial=0.0), 1e-300)
            if np.max(skew, initial=0.0) > 1e-12 * scale:
                raise ValueError(f"{name} is not symmetric")


DENSE_LIMIT = 2000


def _dense(m):
    return m.toarray() if sp.issparse(m) else np.asarray(m, dtype=float)


def min_generalized_eig(forms, b_matrix=None):
    """Smallest ``nu`` with ``A x = nu B x`` over vectors with ``x'Bx > 0``.

    Accepts a :class:`QuadraticFormPair` or two matrices. Returns
    ``(nu, x)``; ``nu`` is ``inf`` when ``B`` vanishes numerically. Sparse
    (banded) input or size >= DENSE_LIMIT goes through a banded Cholesky of
    ``A`` and Lanczos; otherwise a dense solve is used.
    """
    if b_matrix is None:
        a, b = forms.a_matrix, forms.b_matrix
    else:
        a, b = forms, b_matrix
    n = a.shape[0]
    banded = sp.issparse(a) or n >= DENSE_LIMIT
    bscale = abs(b).max() if sp.issparse(b) else float(np.max(np.abs(b)))
    if bscale <= 1e-300:
        return math.inf, np.zeros(n)
    if not banded:
        ad, bd = _dense(a), _dense(b)
        try:
            # B x = theta A x, largest theta = 1/nu; fine when B is singular
            theta, vec = sla.eigh(bd, ad, subset_by_index=[n - 1, n - 1])
        except np.linalg.LinAlgError:
            # A only semidefinite: fall back to the direct pencil when B is definite
            nu, vec = sla.eigh(ad, bd, subset_by_index=[0, 0])
            return float(nu[0]), vec[:, 0]
        th = float(theta[0])
        if th <= 1e-14 * bscale / max(np.max(np.abs(ad)), 1e-300):
            return math.inf, vec[:, 0]
        return 1.0 / th, vec[:, 0]
    nus, vecs = _smallest_banded(sp.csr_matrix(a), sp.csr_matrix(b), 1)
    return nus[0], vecs[:, 0]


def smallest_generalized_eigs(a, b, count: int):
    """The ``count`` smallest generalized eigenvalues (ascending) and vectors of
    a banded pencil with ``A`` positive definite; ``B`` may be singular."""
    return _smallest_banded(sp.csr_matrix(a), sp.csr_matrix(b), count)


def _smallest_banded(a, b, count):
    """Lanczos on U^{-T} B U^{-1} with a banded Cholesky ``A = U'U``.

    Both matrices are first congruence-scaled to unit diagonal of ``A``.
    """
    n = a.shape[0]
    d = a.diagonal()
    if np.any(d <= 0):
        raise np.linalg.LinAlgError("A has a nonpositive diagonal entry")
    scale_d = sp.diags(1.0 / np.sqrt(d))
    a = (scale_d @ a @ scale_d).tocsr()
    b = (scale_d @ b @ scale_d).tocsr()
    coo = a.tocoo()
    bw = int(np.max(np.abs(coo.row - coo.col)))
    ab = np.zeros((bw + 1, n))
    for d in range(bw + 1):
        ab[bw - d, d:] = a.diagonal(d)
    upper = sla.cholesky_banded(ab, lower=False)
    lower = _transpose_upper(upper, bw)

    def matvec(x):
        y = sla.solve_banded((0, bw), upper, x)
        return sla.solve_banded((bw, 0), lower, b @ y)

    if n <= count + 2:
        op = np.column_stack([matvec(e) for e in np.eye(n)])
        theta, vec = np.linalg.eigh(0.5 * (op + op.T))
        theta, vec = theta[::-1][:count], vec[:, ::-1][:, :count]
    else:
        op = spla.LinearOperator((n, n), matvec=matvec, dtype=float)
        theta, vec = spla.eigsh(op, k=count, which="LA", v0=np.ones(n), tol=1e-13)
        order = np.argsort(theta)[::-1]
        theta, vec = theta[order], vec[:, order]
    floor = 1e-14 * max(abs(b).max(), 1e-300)
    nus = np.array([1.0 / th if th > floor else math.inf for th in theta])
    xs = scale_d @ sla.solve_banded((0, bw), upper, vec)
    xs = xs / np.maximum(np.linalg.norm(xs, axis=0), 1e-300)
    return nus, xs


def _transpose_upper(ub, bw):
    """Convert upper banded storage of U into lower banded storage of U'."""
    n = ub.shape[1]
    lb = np.zeros_like(ub)
    for d in range(bw + 1):
        lb[d, : n - d] = ub[bw - d, d:]
    return lb


def sphere_area(dim: int) -> float:
    """Surface measure of the unit sphere in R^dim."""
    return 2.0 * math.pi ** (dim / 2) / gamma(dim / 2)


def ball_volume(dim: int, radius: float = 1.0) -> float:
    return sphere_area(dim) * radius**dim / dim


def cell_volumes(r: np.ndarray, dim: int) -> np.ndarray:
    """Exact ``int s^(dim-1) ds`` over the dual cells of a radial grid."""
    r = np.asarray(r, dtype=float)
    faces = np.concatenate(([r[0]], 0.5 * (r[1:] + r[:-1]), [r[-1]]))
    p = faces**dim / dim
    return p[1:] - p[:-1]


def radial_integral(values, r, dim: int) -> float:
    """``int_{r[0] < |x| < r[-1]} f(|x|) dx`` for radial ``f`` by Simpson's rule."""
    r = np.asarray(r, dtype=float)
    return sphere_area(dim) * float(simpson(np.asarray(values) * r ** (dim - 1), x=r))


def fd_weights(x0: float, pts: np.ndarray, order: int) -> np.ndarray:
    """Finite-difference weights for the ``order``-th derivative at ``x0``."""
    pts = np.asarray(pts, dtype=float)
    m = pts.size
    h = pts - x0
    scale = np.max(np.abs(h))
    vander = np.vander(h / scale, m, increasing=True).T
    rhs = np.zeros(m)
    rhs[order] = math.factorial(order)
    return np.linalg.solve(vander, rhs) / scale**order


def radial_laplacian(f: np.ndarray, r: np.ndarray, dim: int) -> np.ndarray:
    """Centered three-point ``f'' + (dim-1) f'/r`` on a nonuniform grid.

    Exact on quadratics; the two end nodes are returned as NaN.
    """
    f = np.asarray(f, dtype=float)
    r = np.asarray(r, dtype=float)
    out = np.full_like(f, np.nan)
    hm = r[1:-1] - r[:-2]
    hp = r[2:] - r[1:-1]
    d1 = (-hp / (hm * (hm + hp))) * f[:-2] + ((hp - hm) / (hm * hp)) * f[1:-1] + (hm / (hp * (hm + hp))) * f[2:]
    d2 = 2.0 * (f[:-2] / (hm * (hm + hp)) - f[1:-1] / (hm * hp) + f[2:] / (hp * (hm + hp)))
    out[1:-1] = d2 + (dim - 1) * d1 / r[1:-1]
    return out


def conjugate_gradient(apply, rhs, x0=None, diag=None, rtol=1e-12, maxiter=5000):
    """Preconditioned CG on a matrix-free SPD operator; arrays of any shape.

    Returns ``(x, iterations)``; raises ``RuntimeError`` on non-convergence.
    """
    shape = rhs.shape
    n = rhs.size
    op = spla.LinearOperator((n, n), matvec=lambda x: apply(x.reshape(shape)).ravel(), dtype=float)
    m = None
    if diag is not None:
        inv = (1.0 / diag).ravel()
        m = spla.LinearOperator((n, n), matvec=lambda x: inv * x, dtype=float)
    count = [0]

    def cb(_):
        count[0] += 1

    x, info = spla.cg(op, rhs.ravel(), x0=None if x0 is None else x0.ravel(), rtol=rtol,
                      atol=0.0, maxiter=maxiter, M=m, callback=cb)
    if info != 0:
        raise RuntimeError(f"CG did not converge (info={info})")
    return x.reshape(shape), count[0]


@dataclass(frozen=True)
class PowerFit:
    constant: float
    exponent: float
    max_residual: float
    n_points: int

    def __call__(self, r):
        return self.constant * np.asarray(r, dtype=float) ** self.exponent


def fit_power_law(samples) -> PowerFit:
    """Least-squares line through ``(log R, log value)``."""
    arr = np.asarray(samples, dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 3:
        raise ValueError("need at least three (R, value) samples")
    rr, vals = arr[:, 0], arr[:, 1]
    if np.any(vals <= 0) or np.any(rr <= 0):
        raise ValueError("radii and values must be positive")
    if np.any(np.diff(rr) <= 0):
        raise ValueError("radii must be strictly increasing")
    x, y = np.log(rr), np.log(vals)
    slope, intercept = np.polyfit(x, y, 1)
    resid = np.max(np.abs(y - (slope * x + intercept)))
    return PowerFit(constant=float(np.exp(intercept)), exponent=float(slope),
                    max_residual=float(resid), n_points=int(arr.shape[0]))
