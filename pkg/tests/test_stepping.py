"""Grid construction, quadrature weights, and stencil helpers."""

import numpy as np
import pytest

from nmoptomech.stepping import (
    TimeGrid,
    midpoint_derivative,
    midpoint_values,
    pairwise_sum,
    trapezoid_weights,
)


def test_grid_node_count_and_times():
    g = TimeGrid(dt=0.1, t_final=1.0)
    assert g.n_points == 11
    t = g.times()
    assert t[0] == 0.0
    assert t[-1] == pytest.approx(1.0, abs=1e-12)
    assert np.allclose(np.diff(t), 0.1)


def test_grid_rejects_bad_steps():
    with pytest.raises(ValueError):
        TimeGrid(dt=0.0, t_final=1.0)
    with pytest.raises(ValueError):
        TimeGrid(dt=0.1, t_final=0.05)


def test_refine_doubles_resolution():
    g = TimeGrid(dt=0.1, t_final=1.0)
    r = g.refine()
    assert r.n_points == 21
    assert np.allclose(r.times()[::2], g.times())
    assert g.matches(TimeGrid(dt=0.1, t_final=1.0))
    assert not g.matches(r)


def test_trapezoid_weights_integrate_polynomials():
    # trapezoid is exact for linear integrands
    n, h = 11, 0.3
    w = trapezoid_weights(n, h)
    x = h * np.arange(n)
    assert w.sum() == pytest.approx(h * (n - 1), abs=1e-14)
    assert (w * x).sum() == pytest.approx((h * (n - 1)) ** 2 / 2, abs=1e-12)


def test_trapezoid_weights_degenerate_sizes():
    assert trapezoid_weights(1, 0.5).tolist() == [0.0]
    assert trapezoid_weights(2, 0.5).tolist() == [0.25, 0.25]


def test_midpoint_values_fourth_order():
    # error of the 4-point stencil decays like h^4 on smooth data
    errs = []
    for n in (9, 17, 33):
        x = np.linspace(0.0, 1.0, n)
        y = np.sin(3.0 * x)
        mid = midpoint_values(y)
        exact = np.sin(3.0 * (x[:-1] + x[1:]) / 2)
        errs.append(np.max(np.abs(mid - exact)))
    assert errs[0] / errs[1] > 10
    assert errs[1] / errs[2] > 10


def test_midpoint_derivative_matches_cosine():
    n = 101
    x = np.linspace(0.0, 1.0, n)
    y = np.sin(2.0 * x)
    d = midpoint_derivative(y, x[1] - x[0])
    exact = 2.0 * np.cos(2.0 * (x[:-1] + x[1:]) / 2)
    assert np.max(np.abs(d - exact)) < 1e-6


def test_pairwise_sum_matches_exact_sum():
    rng = np.random.default_rng(7)
    v = rng.standard_normal((1000, 3))
    assert np.allclose(pairwise_sum(v), v.sum(axis=0), atol=1e-12)
    assert pairwise_sum(np.zeros((0, 2))).shape == (2,)
