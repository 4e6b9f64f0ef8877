"""Nonradial entire solutions ``u = -p + z`` with ``p`` an anisotropic quadratic.

``(z, w = -Δz)`` solves ``-Δz = w``, ``-Δw = e^{-p} e^z``. The iteration starts
at the supersolution ``(Z, W)`` and decreases monotonically. Fields are stored
on the positive orthant of a box ``[0, L]^N``; reflection symmetry in every
coordinate covers the rest.
"""
from __future__ import annotations

import itertools
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.integrate import solve_ivp
from scipy.interpolate import RegularGridInterpolator
from scipy.optimize import fsolve

from .numerics import conjugate_gradient
from .spectrum import hardy_rellich_constant

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AnisotropicQuadratic:
    alphas: tuple
    center: Optional[tuple] = None

    def __post_init__(self):
        n = len(self.alphas)
        if n < 1:
            raise ValueError("need at least one coefficient")
        bound = 1 + n / 2
        if min(self.alphas) <= bound:
            raise ValueError(f"every coefficient must exceed 1 + N/2 = {bound}")
        if self.center is not None and len(self.center) != n:
            raise ValueError("center has the wrong dimension")

    @property
    def dim(self) -> int:
        return len(self.alphas)

    def __call__(self, *coords):
        c = self.center or (0.0,) * self.dim
        return sum(a * (x - x0) ** 2 for a, x, x0 in zip(self.alphas, coords, c))


def supersolution_pair(r2, dim: int):
    """``(Z, W, -ΔZ, -ΔW)`` as functions of ``|x|²``."""
    if dim <= 4:
        raise ValueError("the supersolution pair needs dim >= 5")
    s = 1.0 + np.asarray(r2, dtype=float)
    mz = 2 - dim / 2
    z = s**mz
    w = s ** (1 - dim / 2)
    # Δ(1+r²)^m = 2mN(1+r²)^(m-1) + 4m(m-1) r²(1+r²)^(m-2)
    lap_z = 2 * mz * dim * s ** (mz - 1) + 4 * mz * (mz - 1) * (s - 1) * s ** (mz - 2)
    minus_lap_w = dim * (dim - 2) * s ** (-1 - dim / 2)
    return z, w, -lap_z, minus_lap_w


@dataclass
class OrthantGrid:
    dim: int
    length: float
    n: int

    @property
    def h(self) -> float:
        return self.length / (self.n - 1)

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(0.0, self.length, self.n)

    def coords(self):
        """Coordinates of the unknown nodes (all coordinates below L)."""
        ax = self.axis[:-1]
        return np.meshgrid(*([ax] * self.dim), indexing="ij", sparse=True)

    def r2(self):
        return sum(c**2 for c in self.coords())

    def sym_weights(self):
        # half weight per coordinate on a symmetry plane makes the operator symmetric
        c = np.ones(self.n - 1)
        c[0] = 0.5
        out = np.ones((self.n - 1,) * self.dim)
        for j in range(self.dim):
            shape = [1] * self.dim
            shape[j] = -1
            out = out * c.reshape(shape)
        return out


def _neg_laplacian(u, h):
    """``-Δ_h u`` with even reflection at 0 and zero data at L (unknown block only)."""
    dim = u.ndim
    out = 2 * dim * u
    for j in range(dim):
        up = np.zeros_like(u)
        dn = np.empty_like(u)
        sl = [slice(None)] * dim
        src = [slice(None)] * dim
        sl[j], src[j] = slice(0, -1), slice(1, None)
        up[tuple(sl)] = u[tuple(src)]
        sl[j], src[j] = slice(1, None), slice(0, -1)
        dn[tuple(sl)] = u[tuple(src)]
        sl[j], src[j] = slice(0, 1), slice(1, 2)
        dn[tuple(sl)] = u[tuple(src)]
        out -= up + dn
    return out / h**2


def _boundary_source(grid: OrthantGrid, boundary_fn):
    """Contribution of the Dirichlet data on the faces ``x_j = L`` to ``-Δ_h``."""
    dim, h = grid.dim, grid.h
    ax = grid.axis[:-1]
    out = np.zeros((grid.n - 1,) * dim)
    for j in range(dim):
        coords = [ax] * dim
        coords = list(np.meshgrid(*coords, indexing="ij", sparse=True))
        coords[j] = np.array([grid.length]).reshape([1 if k != j else 1 for k in range(dim)])
        r2 = sum(c**2 for c in coords)
        vals = np.broadcast_to(boundary_fn(r2), [grid.n - 1 if k != j else 1 for k in range(dim)])
        sl = [slice(None)] * dim
        sl[j] = slice(-1, None)
        out[tuple(sl)] += vals / h**2
    return out


@dataclass
class FieldPair:
    grid: OrthantGrid
    alphas: tuple
    z: np.ndarray
    w: np.ndarray
    iteration_count: int
    residual: float
    history: list = field(default_factory=list, repr=False)
    boundary: str = "supersolution"
    far_constants: tuple = (math.nan, math.nan)

    def face_data(self, name: str) -> Callable:
        dim = self.grid.dim
        k = 0 if name == "z" else 1
        if self.boundary == "supersolution":
            return lambda r2: supersolution_pair(r2, dim)[k]
        c = self.far_constants[k]
        if name == "z":
            return lambda r2: np.minimum(c * np.maximum(r2, 1e-12) ** (2 - dim / 2) / (2 * (dim - 4)),
                                         supersolution_pair(r2, dim)[0])
        return lambda r2: np.minimum(c * np.maximum(r2, 1e-12) ** (1 - dim / 2), supersolution_pair(r2, dim)[1])

    def full(self, name: str) -> np.ndarray:
        """Field on all ``n^N`` orthant nodes including the faces at L."""
        inner = getattr(self, name)
        fn = self.face_data(name)
        ax = self.grid.axis
        r2 = sum(c**2 for c in np.meshgrid(*([ax] * self.grid.dim), indexing="ij", sparse=True))
        out = np.array(np.broadcast_to(fn(r2), (self.grid.n,) * self.grid.dim))
        out[(slice(0, -1),) * self.grid.dim] = inner
        return out

    def along_axis(self, j: int, name: str = "z"):
        f = self.full(name)
        idx = [0] * self.grid.dim
        idx[j] = slice(None)
        return self.grid.axis, f[tuple(idx)]

    def save(self, stem) -> None:
        """Flat little-endian float64 ``z`` then ``w`` in C order plus a JSON sidecar."""
        stem = Path(stem)
        data = np.concatenate([self.full("z").ravel(), self.full("w").ravel()]).astype("<f8")
        stem.with_suffix(".bin").write_bytes(data.tobytes())
        meta = {"dim": self.grid.dim, "n": self.grid.n, "L": self.grid.length, "alphas": list(self.alphas),
                "fields": ["z", "w"], "order": "C", "iterations": self.iteration_count, "residual": self.residual,
                "boundary": self.boundary, "far_constants": list(self.far_constants)}
        stem.with_suffix(".json").write_text(json.dumps(meta, sort_keys=True, indent=1) + "\n")

    @classmethod
    def load(cls, stem):
        stem = Path(stem)
        meta = json.loads(stem.with_suffix(".json").read_text())
        grid = OrthantGrid(meta["dim"], meta["L"], meta["n"])
        raw = np.frombuffer(stem.with_suffix(".bin").read_bytes(), dtype="<f8")
        shape = (grid.n,) * grid.dim
        size = grid.n**grid.dim
        inner = (slice(0, -1),) * grid.dim
        z = raw[:size].reshape(shape)[inner].copy()
        w = raw[size:].reshape(shape)[inner].copy()
        return cls(grid, tuple(meta["alphas"]), z, w, meta["iterations"], meta["residual"],
                   boundary=meta["boundary"], far_constants=tuple(meta["far_constants"]))


class MonotonicityError(RuntimeError):
    pass


def monotone_iterate(p: AnisotropicQuadratic, n: int = 13, length: float = 3.0, tol: float = 1e-8,
                     max_iter: int = 200, cg_rtol: float = 1e-13, slack: float = 1e-10,
                     boundary: str = "farfield") -> FieldPair:
    """Decreasing iteration from ``(Z, W)``: ``-Δz_{k+1} = w_k``, ``-Δw_{k+1} = e^{-p} e^{z_k}``.

    Dirichlet data on the outer faces: ``boundary="supersolution"`` uses
    ``(Z, W)`` themselves; ``"farfield"`` uses the monopole field of the
    current source, ``w ~ c|x|^{2-N}``, ``z ~ c|x|^{4-N}/(2(N-4))`` with
    ``c = ∫e^{-p}e^{z_k} / ((N-2)|S^{N-1}|)``, capped by ``(Z, W)``. The mass
    decreases with ``z_k``, so the data decrease too and the sandwich is kept.
    Raises :class:`MonotonicityError` if an iterate rises above its
    predecessor by more than ``slack`` or leaves ``0 <= z <= Z``.
    """
    from .numerics import sphere_area

    dim = p.dim
    if p.center is not None and any(c != 0 for c in p.center):
        raise ValueError("the orthant grid assumes the center at the origin")
    if n < 9:
        raise ValueError("need at least 9 nodes per axis")
    if boundary not in ("farfield", "supersolution"):
        raise ValueError(f"unknown boundary mode {boundary!r}")
    grid = OrthantGrid(dim, length, n)
    h = grid.h
    coords = grid.coords()
    r2 = grid.r2()
    big_z, big_w, _, _ = supersolution_pair(r2, dim)
    big_z = np.broadcast_to(big_z, (n - 1,) * dim).copy()
    big_w = np.broadcast_to(big_w, (n - 1,) * dim).copy()
    decay = np.exp(-sum(a * c**2 for a, c in zip(p.alphas, coords)))
    decay = np.broadcast_to(decay, big_z.shape)
    wts = grid.sym_weights()
    diag = wts * (2 * dim / h**2)
    area = sphere_area(dim)

    def data(c_z, c_w):
        if boundary == "supersolution":
            return (_boundary_source(grid, lambda s: supersolution_pair(s, dim)[0]),
                    _boundary_source(grid, lambda s: supersolution_pair(s, dim)[1]))
        fz = lambda s: np.minimum(c_z * s ** (2 - dim / 2) / (2 * (dim - 4)), supersolution_pair(s, dim)[0])  # noqa: E731
        fw = lambda s: np.minimum(c_w * s ** (1 - dim / 2), supersolution_pair(s, dim)[1])  # noqa: E731
        return _boundary_source(grid, fz), _boundary_source(grid, fw)

    def mass_const(z):
        # full-space trapezoid from the orthant; the source is negligible at the outer faces
        m = 2**dim * h**dim * float(np.sum(wts * decay * np.exp(z)))
        return m / ((dim - 2) * area)

    def apply(u):
        return wts * _neg_laplacian(u, h)

    def solve(rhs, x0):
        x, _ = conjugate_gradient(apply, wts * rhs, x0=x0, diag=diag, rtol=cg_rtol, maxiter=20000)
        return x

    z, w = big_z.copy(), big_w.copy()
    c_prev = math.inf  # the far field of W itself is |x|^{2-N}; the cap handles it
    history = []
    for k in range(1, max_iter + 1):
        c_now = mass_const(z)
        bz, bw = data(c_prev if math.isfinite(c_prev) else 1.0, c_now)
        z_new = solve(w + bz, z)
        w_new = solve(decay * np.exp(z) + bw, w)
        rise = max(float(np.max(z_new - z)), float(np.max(w_new - w)))
        if rise > slack:
            raise MonotonicityError(f"iterate {k} rose by {rise:.3g}")
        if np.min(z_new) < -slack or np.min(w_new) < -slack or np.max(z_new - big_z) > slack:
            raise MonotonicityError(f"iterate {k} left the sandwich")
        change = max(float(np.max(np.abs(z_new - z))), float(np.max(np.abs(w_new - w))))
        history.append(change)
        z, w, c_prev = z_new, w_new, c_now
        if change <= tol:
            break
    else:
        raise RuntimeError(f"no convergence after {max_iter} iterations (last change {history[-1]:.3g})")
    bz, bw = data(c_prev, mass_const(z))
    res_z = np.max(np.abs(_neg_laplacian(z, h) - bz - w))
    res_w = np.max(np.abs(_neg_laplacian(w, h) - bw - decay * np.exp(z)))
    return FieldPair(grid, tuple(p.alphas), z, w, k, float(max(res_z, res_w)), history,
                     boundary, (c_prev, mass_const(z)))


@dataclass
class RadialReference:
    alpha: float
    dim: int
    r: np.ndarray
    z: np.ndarray
    w: np.ndarray

    def z_at(self, r):
        return np.interp(r, self.r, self.z)


def _newton_potential(f, r, dim):
    """Radial solution of ``-Δy = f`` decaying at infinity (``f`` negligible past ``r[-1]``)."""
    from scipy.integrate import cumulative_trapezoid

    inner = cumulative_trapezoid(f * r ** (dim - 1), r, initial=0.0)
    outer_tail = cumulative_trapezoid((f * r)[::-1], r[::-1], initial=0.0)[::-1] * -1
    safe = np.where(r > 0, r, 1.0)
    head = np.where(r > 0, inner * safe ** (2 - dim), 0.0)
    return (head + outer_tail) / (dim - 2)


def radial_reference(alpha: float, dim: int = 5, r_max: float = 12.0, n: int = 6001) -> RadialReference:
    """Radial ``(z, w)`` for ``p = alpha |x|²`` by shooting from the origin.

    The unknowns ``(z(0), w(0))`` are fixed by decay conditions at ``r_max``:
    ``w ∝ r^{2-N}`` and ``z`` free of any constant mode. A short fixed-point
    iteration on radial Newton potentials supplies the starting guess.
    """
    if alpha <= 1 + dim / 2:
        raise ValueError("alpha must exceed 1 + N/2")
    r = np.linspace(0.0, r_max, n)
    z = np.zeros(n)
    for _ in range(60):
        w = _newton_potential(np.exp(-alpha * r**2 + z), r, dim)
        z_new = _newton_potential(w, r, dim)
        if np.max(np.abs(z_new - z)) < 1e-12:
            z = z_new
            break
        z = z_new

    def rhs(t, y):
        c = (dim - 1) / t
        return [y[1], -y[2] - c * y[1], y[3], -math.exp(-alpha * t * t + y[0]) - c * y[3]]

    r0 = 1e-4

    def start(z0, w0):
        # series to second order: z ≈ z0 - w0 r²/(2N), w ≈ w0 - e^{z0} r²/(2N)
        return [z0 - w0 * r0**2 / (2 * dim), -w0 * r0 / dim, w0 - math.exp(z0) * r0**2 / (2 * dim),
                -math.exp(z0) * r0 / dim]

    def shoot(x):
        sol = solve_ivp(rhs, (r0, r_max), start(*x), method="DOP853", rtol=1e-12, atol=1e-14)
        zz, dz, ww, dw = sol.y[:, -1]
        big = r_max
        g1 = big * dw + (dim - 2) * ww
        g2 = big * dz + (dim - 2) * zz - ww * big**2 / (dim - 4)
        return [g1, g2]

    x, info, ier, msg = fsolve(shoot, [z[0], w[0]], full_output=True, xtol=1e-13)
    if ier != 1:
        raise RuntimeError(f"radial shooting did not converge: {msg}")
    sol = solve_ivp(rhs, (r0, r_max), start(*x), method="DOP853", rtol=1e-12, atol=1e-14,
                    t_eval=np.concatenate(([r0], r[1:])))
    rr = np.concatenate(([0.0], sol.t[1:]))
    zz = np.concatenate(([x[0]], sol.y[0, 1:]))
    ww = np.concatenate(([x[1]], sol.y[2, 1:]))
    return RadialReference(alpha, dim, rr, zz, ww)


@dataclass
class AssembledSolution:
    u: np.ndarray
    tail_constant: float
    hardy_radius: float
    stable_everywhere: bool
    hardy_radius_nodal: float


def assemble_u(fp: FieldPair, p: AnisotropicQuadratic, shell: float = 0.8) -> AssembledSolution:
    """``u = -p + z`` on the full orthant grid with tail and Hardy-Rellich reports.

    ``tail_constant`` is ``max |u + p| |x|^{N-4}`` over ``|x| >= shell L``.
    ``hardy_radius`` is the largest node radius where ``e^{1-p} <= C_N/|x|^4``
    fails (0 when it holds at every node); ``hardy_radius_nodal`` applies the
    same test to ``e^u`` itself.
    """
    g = fp.grid
    ax = g.axis
    coords = np.meshgrid(*([ax] * g.dim), indexing="ij", sparse=True)
    pv = p(*coords)
    z = fp.full("z")
    u = z - pv
    r2 = np.broadcast_to(sum(c**2 for c in coords), u.shape)
    r = np.sqrt(r2)
    outer = r >= shell * g.length
    tail = float(np.max(np.abs(z[outer]) * r[outer] ** (g.dim - 4))) if np.any(outer) else math.nan
    c = hardy_rellich_constant(g.dim)
    safe = np.where(r > 0, r, 1.0)
    rhs = np.where(r > 0, c / safe**4, np.inf)
    fail = np.exp(1 - np.broadcast_to(pv, u.shape)) > rhs
    fail_u = np.exp(u) > rhs
    radius = float(np.max(r[fail])) if np.any(fail) else 0.0
    radius_u = float(np.max(r[fail_u])) if np.any(fail_u) else 0.0
    return AssembledSolution(u, tail, radius, not np.any(fail), radius_u)


def sphere_rule(dim: int, n: int = 8):
    """Product Gauss rule on the positive orthant of ``S^{N-1}``; returns (points, weights).

    Weights sum to one; with even integrands this averages over the sphere.
    """
    nodes, wts = leggauss(n)
    th = 0.25 * math.pi * (nodes + 1)
    tw = 0.25 * math.pi * wts
    angle_sets = [(th, tw)] * (dim - 1)
    pts, ws = [], []
    for combo in itertools.product(range(n), repeat=dim - 1):
        angles = [angle_sets[k][0][i] for k, i in enumerate(combo)]
        weight = math.prod(angle_sets[k][1][i] for k, i in enumerate(combo))
        x = []
        s = 1.0
        for k, a in enumerate(angles):
            x.append(s * math.cos(a))
            weight *= math.sin(a) ** (dim - 2 - k)
            s *= math.sin(a)
        x.append(s)
        pts.append(x)
        ws.append(weight)
    ws = np.array(ws)
    return np.array(pts), ws / ws.sum()


@dataclass
class SphericalAverage:
    radii: np.ndarray
    mean: np.ndarray
    mean_exp: np.ndarray
    jensen_ok: bool


def spherical_average(values, radii, grid: Optional[OrthantGrid] = None, n_angles: int = 8) -> SphericalAverage:
    """Averages of ``u`` and ``e^u`` over spheres, with the Jensen check ``e^{ū} <= avg e^u``.

    ``values`` is a callable on points of shape ``(m, N)`` or an array on the
    full orthant grid (interpolated by tensor cubic splines).
    """
    radii = np.asarray(radii, dtype=float)
    if callable(values):
        fn: Callable = values
        if grid is None:
            raise ValueError("grid (for the dimension) is required")
    else:
        if grid is None:
            raise ValueError("grid values need their grid")
        if np.any(radii > grid.length):
            raise ValueError("radius outside the grid")
        interp = RegularGridInterpolator([grid.axis] * grid.dim, values, method="cubic")
        fn = interp
    pts, wts = sphere_rule(grid.dim, n_angles)
    means, mexp = [], []
    for rad in radii:
        f = np.asarray(fn(rad * pts), dtype=float)
        means.append(float(wts @ f))
        mexp.append(float(wts @ np.exp(f)))
    means, mexp = np.array(means), np.array(mexp)
    ok = bool(np.all(np.exp(means) <= mexp * (1 + 1e-12)))
    return SphericalAverage(radii, means, mexp, ok)
