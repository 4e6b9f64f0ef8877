import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from bigelfand.numerics import (
    BLOWUP,
    REACHED,
    IntegratorConfig,
    QuadraticFormPair,
    bisect,
    cell_volumes,
    conjugate_gradient,
    fd_weights,
    fit_power_law,
    integrate,
    min_generalized_eig,
    radial_integral,
    radial_laplacian,
)

from oracles import newton


def decay(r, y):
    return -y


def test_config_validation():
    with pytest.raises(ValueError):
        IntegratorConfig(rel_tol=0)
    with pytest.raises(ValueError):
        IntegratorConfig(h_min=1.0, h_init=0.1)
    with pytest.raises(ValueError):
        IntegratorConfig(r_max=-1)
    assert IntegratorConfig().replace(r_max=3).r_max == 3


def test_exponential_decay():
    tr = integrate(decay, np.array([1.0]), 0.0, IntegratorConfig(r_max=1.0))
    assert tr.stop_reason == REACHED
    assert tr.r[-1] == 1.0
    assert abs(tr.y[-1, 0] - math.exp(-1)) < 1e-9


def test_zero_field_constant():
    y0 = np.array([1.5, -2.0, 3.0])
    tr = integrate(lambda r, y: np.zeros_like(y), y0, 0.5, IntegratorConfig(r_max=4.0))
    assert tr.stop_reason == REACHED
    np.testing.assert_array_equal(tr.y, np.tile(y0, (len(tr.r), 1)))


def test_lands_on_requested_nodes():
    nodes = np.linspace(0.1, 2.0, 7)
    tr = integrate(decay, np.array([1.0]), 0.0, IntegratorConfig(r_max=2.0), r_eval=nodes)
    np.testing.assert_array_equal(tr.r, nodes)
    np.testing.assert_allclose(tr.y[:, 0], np.exp(-nodes), rtol=1e-9)


def test_blowup_detection():
    # y' = y^2 from y(0)=1 blows up at r=1
    tr = integrate(lambda r, y: y * y, np.array([1.0]), 0.0, IntegratorConfig(r_max=5.0))
    assert tr.stop_reason == BLOWUP
    assert 0.97 < tr.r[-1] < 1.0


def test_tolerance_halving_reduces_error():
    errs = []
    for tol in (1e-4, 1e-5, 1e-6):
        cfg = IntegratorConfig(rel_tol=tol, abs_tol=tol, r_max=5.0)
        tr = integrate(decay, np.array([1.0]), 0.0, cfg)
        errs.append(abs(tr.y[-1, 0] - math.exp(-5)))
    # a tenfold tolerance cut buys well over 4x (two halvings)
    assert errs[1] <= errs[0] / 4
    assert errs[2] <= errs[1] / 4


def test_bisect_sqrt2():
    lo, hi = bisect(lambda x: x * x - 2, 1, 2, 1e-10)
    assert hi - lo <= 1e-10
    assert abs(0.5 * (lo + hi) - math.sqrt(2)) < 1e-10


def test_bisect_cubic_against_newton():
    ref = newton(lambda x: x**3 - 8 * x + 4, lambda x: 3 * x * x - 8, 2.5)
    assert abs(ref - 2.53407) < 1e-5
    lo, hi = bisect(lambda x: x**3 - 8 * x + 4, 2, 3, 1e-8)
    assert abs(0.5 * (lo + hi) - ref) < 1e-8


def test_bisect_odd_and_predicate():
    lo, hi = bisect(lambda x: x, -1, 1, 1e-12)
    assert lo <= 0 <= hi and hi - lo <= 1e-12
    lo, hi = bisect(lambda x: x > 0.3, 0, 1, 1e-9)
    assert lo <= 0.3 <= hi


def test_bisect_errors():
    with pytest.raises(ValueError):
        bisect(lambda x: x * x + 1, -1, 1, 1e-6)
    with pytest.raises(RuntimeError):
        bisect(lambda x: x - 0.123, 0, 1, 1e-30, max_iter=10)


def _pair(a, b):
    return QuadraticFormPair(np.asarray(a, float), np.asarray(b, float), np.arange(len(a), dtype=float))


def test_eig_identity_and_diag():
    nu, vec = min_generalized_eig(_pair(np.eye(3), np.eye(3)))
    assert nu == pytest.approx(1.0, abs=1e-12)
    assert np.linalg.norm(vec) > 0
    nu, vec = min_generalized_eig(_pair(np.diag([2.0, 5.0]), np.eye(2)))
    assert nu == pytest.approx(2.0, abs=1e-12)
    assert abs(vec[1]) < 1e-12


def test_eig_zero_potential_is_infinite():
    nu, _ = min_generalized_eig(_pair(np.eye(4), np.zeros((4, 4))))
    assert nu == math.inf


def test_eig_rejects_asymmetric():
    with pytest.raises(ValueError):
        _pair([[1.0, 0.5], [0.0, 1.0]], np.eye(2))


def _random_pencil(seed, n=12):
    rng = np.random.default_rng(seed)
    m = rng.standard_normal((n, n))
    a = m @ m.T + n * np.eye(n)
    c = rng.standard_normal((n, n))
    b = c @ c.T
    return a, b


@given(st.integers(0, 10_000), st.floats(0.01, 100.0))
@settings(max_examples=30, deadline=None)
def test_eig_scaling(seed, c):
    a, b = _random_pencil(seed)
    nu, _ = min_generalized_eig(_pair(a, b))
    nu_both, _ = min_generalized_eig(_pair(c * a, c * b))
    nu_a, _ = min_generalized_eig(_pair(c * a, b))
    assert nu_both == pytest.approx(nu, rel=1e-8)
    assert nu_a == pytest.approx(c * nu, rel=1e-8)


def test_eig_banded_path_matches_dense():
    n = 2500
    main = 2.0 + np.linspace(0, 1, n)
    a = np.diag(main) - np.diag(np.ones(n - 1), 1) - np.diag(np.ones(n - 1), -1)
    b = np.diag(np.linspace(1.0, 2.0, n))
    nu, vec = min_generalized_eig(_pair(a, b))
    from scipy.linalg import eigh
    ref = eigh(a, b, eigvals_only=True, subset_by_index=[0, 0])[0]
    assert nu == pytest.approx(ref, rel=1e-8)
    assert vec @ a @ vec / (vec @ b @ vec) == pytest.approx(ref, rel=1e-8)


def test_radial_integral_and_volumes():
    r = np.linspace(0, 2, 401)
    assert radial_integral(np.ones_like(r), r, 3) == pytest.approx(4 * math.pi * 8 / 3, rel=1e-10)
    v = cell_volumes(r, 5)
    # radial measure s^(N-1) ds without the sphere area
    assert v.sum() == pytest.approx(32 / 5, rel=1e-12)


def test_fd_weights_and_laplacian():
    w = fd_weights(0.0, np.array([-1.0, 0.0, 1.0]), 2)
    np.testing.assert_allclose(w, [1, -2, 1], atol=1e-14)
    r = np.geomspace(0.1, 3, 200)
    lap = radial_laplacian(r**2, r, 5)
    np.testing.assert_allclose(lap[1:-1], 10.0, rtol=1e-9)
    assert np.isnan(lap[0]) and np.isnan(lap[-1])


def test_conjugate_gradient():
    n = 50
    main = 4 * np.ones(n)
    mat = np.diag(main) - np.diag(np.ones(n - 1), 1) - np.diag(np.ones(n - 1), -1)
    rhs = np.arange(n, dtype=float)
    x, iters = conjugate_gradient(lambda v: mat @ v, rhs, diag=main)
    np.testing.assert_allclose(mat @ x, rhs, atol=1e-9)
    assert iters > 0


def test_power_fit_exact():
    r = np.geomspace(1, 100, 9)
    fit = fit_power_law(list(zip(r, 3 * r**2)))
    assert fit.exponent == pytest.approx(2.0, abs=1e-10)
    assert fit.constant == pytest.approx(3.0, rel=1e-10)
    assert fit.n_points == 9


def test_power_fit_perturbed():
    r = np.geomspace(1, 1e4, 40)
    fit = fit_power_law(list(zip(r, r**2 * (1 + 0.01 * np.sin(np.log(r))))))
    assert abs(fit.exponent - 2) < 0.02


@pytest.mark.parametrize("samples", [[(1.0, 1.0)], [(1.0, 1.0), (2.0, 4.0)],
                                     [(1.0, 1.0), (2.0, -1.0), (3.0, 2.0)],
                                     [(1.0, 1.0), (1.0, 2.0), (3.0, 2.0)]])
def test_power_fit_rejects(samples):
    with pytest.raises(ValueError):
        fit_power_law(samples)


@given(st.floats(-5, 5), st.floats(0.01, 100))
@settings(max_examples=50, deadline=None)
def test_power_fit_recovers_slope(e, c):
    r = np.geomspace(0.5, 50, 6)
    fit = fit_power_law(list(zip(r, c * r**e)))
    assert fit.exponent == pytest.approx(e, abs=1e-10)
