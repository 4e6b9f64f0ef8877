"""Closed-form exponents attached to the cubic ``X³ - 8X + 4``."""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import lru_cache


def _cubic(x):
    return x**3 - 8 * x + 4


@lru_cache(maxsize=1)
def cubic_roots():
    """Real roots of ``X³ - 8X + 4`` in increasing order.

    Trigonometric form for three real roots of ``t³ + pt + q``, then one
    Newton step each.
    """
    p, q = -8.0, 4.0
    m = 2 * math.sqrt(-p / 3)
    theta = math.acos(3 * q / (p * m)) / 3
    roots = [m * math.cos(theta - 2 * math.pi * k / 3) for k in range(3)]
    roots = [x - _cubic(x) / (3 * x * x - 8) for x in roots]
    return tuple(sorted(roots))


def alpha_star() -> float:
    return cubic_roots()[2]


def alpha_sharp() -> float:
    return cubic_roots()[1]


def p_star() -> float:
    return alpha_star() + 0.5


def q_star(dim: int) -> float:
    if dim <= 2:
        raise ValueError("q_star needs dim >= 3")
    return 2 * dim / (dim - 2) * alpha_star()


def dim_cutoff() -> int:
    """Largest integer N with N < 4 p*."""
    bound = 4 * p_star()
    n = math.floor(bound)
    return n - 1 if n == bound else n


def delta_margin(alpha: float) -> float:
    if alpha <= 0.5:
        raise ValueError("delta_margin needs alpha > 1/2")
    return 2 * math.sqrt(2 * alpha - 1) / (alpha * math.sqrt(alpha)) - 1


def lp_coefficient(alpha: float) -> float:
    if alpha == 0.5:
        raise ValueError("alpha = 1/2 is a pole")
    return 1 - alpha**3 / (8 * alpha - 4)


@dataclass(frozen=True)
class HausdorffBound:
    dim: int
    bound: float
    regular: bool


def hausdorff_bound(dim: int) -> HausdorffBound:
    """``N - 4 p*``; dimensions up to the cutoff are flagged regular."""
    return HausdorffBound(dim, dim - 4 * p_star(), dim <= dim_cutoff())


@dataclass(frozen=True)
class BootstrapChain:
    dim: int
    values: tuple
    reachable: bool
    ceiling: float

    @property
    def steps(self) -> int:
        return len(self.values) - 1


def bootstrap_chain(dim: int, alpha_start: float, alpha_target: float) -> BootstrapChain:
    """Geometric chain ``alpha, r alpha, r² alpha, ...`` with ``r = N/(N-2)``.

    A step is allowed only from an exponent below ``alpha*``, so every
    exponent below ``r alpha*`` is reachable and nothing at or above it is.
    """
    if dim <= 2:
        raise ValueError("bootstrap_chain needs dim >= 3")
    if alpha_start < 1:
        raise ValueError("alpha_start must be >= 1")
    ratio = dim / (dim - 2)
    ceiling = ratio * alpha_star()
    values = [float(alpha_start)]
    while values[-1] < alpha_target and values[-1] < alpha_star():
        values.append(values[-1] * ratio)
    if values[-1] < alpha_target < ceiling:
        # the chain overshot alpha* short of the target; step from target / ratio instead,
        # which lies below alpha* and is covered by the exponents already reached
        values.append(float(alpha_target))
    reachable = values[-1] >= alpha_target and alpha_target < ceiling
    return BootstrapChain(dim, tuple(values), bool(reachable), ceiling)


@dataclass(frozen=True)
class ExponentTable:
    root_neg: float
    alpha_sharp: float
    alpha_star: float
    p_star: float
    dim_cutoff: int

    def q_star(self, dim: int) -> float:
        return q_star(dim)

    def hausdorff_bound(self, dim: int) -> float:
        return dim - 4 * self.p_star

    def to_dict(self, dims=range(3, 17)) -> dict:
        """Report form: exponents rounded to 12 decimals, per-dimension entries keyed by N."""
        r12 = lambda x: round(x, 12)  # noqa: E731
        per_dim = {}
        for n in dims:
            hb = hausdorff_bound(n)
            per_dim[str(n)] = {"q_star": r12(q_star(n)), "hausdorff_bound": r12(hb.bound), "regular": hb.regular}
        return {
            "alpha_sharp": r12(self.alpha_sharp),
            "alpha_star": r12(self.alpha_star),
            "root_neg": r12(self.root_neg),
            "p_star": r12(self.p_star),
            "dim_cutoff": self.dim_cutoff,
            "by_dim": per_dim,
        }


def exponent_table() -> ExponentTable:
    neg, sharp, star = cubic_roots()
    return ExponentTable(neg, sharp, star, star + 0.5, dim_cutoff())
