import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shelab.grid import LatticeGrid, fit_time_step, grid_for
from shelab.kernel import (heat_kernel, kernel_double_argument, kernel_product_split, kernel_time_merge,
                           semigroup_convolve, wrapped_heat_kernel)


def test_heat_kernel_examples():
    assert heat_kernel(1.0, 0.0) == pytest.approx(1 / math.sqrt(2 * math.pi), rel=1e-15)
    assert heat_kernel(2.0, [1.0, 1.0], d=2) == pytest.approx(math.exp(-0.5) / (4 * math.pi), rel=1e-15)
    assert heat_kernel(1.0, 3.0) == heat_kernel(1.0, -3.0)


def test_heat_kernel_errors():
    with pytest.raises(ValueError):
        heat_kernel(0.0, 1.0)
    with pytest.raises(ValueError):
        heat_kernel(-1.0, 1.0)
    with pytest.raises(ValueError):
        heat_kernel(1.0, [1.0, 2.0, 3.0], d=2)


def test_identity_examples():
    a, b = kernel_product_split(1.0, 0.0, 0.0)
    assert 2 * a * b == pytest.approx(1 / (2 * math.pi), rel=1e-14)
    for s, x, y, d in ((0.5, 1.0, -1.0, 1), (1.0, [1.0, 0.0], [0.0, 1.0], 2)):
        a, b = kernel_product_split(s, x, y, d)
        assert 2 ** d * a * b == pytest.approx(heat_kernel(s, x, d) * heat_kernel(s, y, d), rel=1e-12)
    pref, k = kernel_time_merge(1.0, 1.0, 0.0)
    assert pref == pytest.approx((2 * math.pi) ** -0.5 * 2 ** -0.5)
    assert k == pytest.approx(math.pi ** -0.5)
    for s, r, x, d in ((1.0, 3.0, 2.0, 1), (2.0, 2.0, [1.0, 1.0], 2)):
        pref, k = kernel_time_merge(s, r, x, d)
        assert pref * k == pytest.approx(heat_kernel(s, x, d) * heat_kernel(r, x, d), rel=1e-12)
    for s, x, d in ((1.0, 0.0, 1), (0.5, 1.0, 1), (1.0, [1.0, 2.0], 2)):
        lhs, rhs = kernel_double_argument(s, x, d)
        assert lhs == pytest.approx(rhs, rel=1e-12)
    with pytest.raises(ValueError):
        kernel_product_split(0.0, 1.0, 1.0)
    with pytest.raises(ValueError):
        kernel_time_merge(1.0, -1.0, 1.0)


@settings(max_examples=200, deadline=None)
@given(st.floats(0.1, 10), st.floats(0.1, 10), st.lists(st.floats(-5, 5), min_size=4, max_size=4),
       st.sampled_from([1, 2]))
def test_identities_property(s, r, xy, d):
    x, y = np.array(xy[:d]), np.array(xy[2:2 + d])
    a, b = kernel_product_split(s, x, y, d)
    assert 2 ** d * a * b == pytest.approx(heat_kernel(s, x, d) * heat_kernel(s, y, d), rel=1e-12, abs=1e-300)
    pref, k = kernel_time_merge(s, r, x, d)
    assert pref * k == pytest.approx(heat_kernel(s, x, d) * heat_kernel(r, x, d), rel=1e-12, abs=1e-300)
    lhs, rhs = kernel_double_argument(s, x, d)
    assert lhs == pytest.approx(rhs, rel=1e-12, abs=1e-300)


def test_normalisation():
    t = 0.7
    x = np.linspace(-8 * math.sqrt(t), 8 * math.sqrt(t), 4001)
    assert abs(heat_kernel(t, x).sum() * (x[1] - x[0]) - 1) < 1e-8


@pytest.mark.parametrize("d", [1, 2])
def test_semigroup_properties(d):
    grid = LatticeGrid(d, 64, 0.125, 0.01)
    rng = np.random.default_rng(1)
    f = rng.random(grid.shape)
    two = semigroup_convolve(semigroup_convolve(f, 0.3, grid), 0.4, grid)
    one = semigroup_convolve(f, 0.7, grid)
    assert np.max(np.abs(two - one)) <= 1e-12
    assert semigroup_convolve(f, 0.5, grid).sum() == pytest.approx(f.sum(), rel=1e-12)
    assert np.allclose(semigroup_convolve(np.full(grid.shape, 2.5), 1.0, grid), 2.5, atol=1e-13)
    shifted = np.roll(f, 3, axis=0)
    assert np.allclose(semigroup_convolve(shifted, 0.2, grid), np.roll(semigroup_convolve(f, 0.2, grid), 3, axis=0),
                       atol=1e-13)
    assert semigroup_convolve(f, 0.3, grid).min() >= 0
    with pytest.raises(ValueError):
        semigroup_convolve(np.ones(7), 0.1, grid)


def test_spike_matches_wrapped_kernel():
    grid = LatticeGrid(1, 512, 1 / 32, 1e-3)
    spike = np.zeros(grid.shape)
    spike[0] = 1 / grid.dx
    t = 0.05
    out = semigroup_convolve(spike, t, grid)
    ref = wrapped_heat_kernel(t, grid)
    assert np.max(np.abs(out - ref)) < 1e-8


def test_grid_helpers():
    g = grid_for(1, 0.125, 100.0)
    assert g.n_sites == 1024 and g.length >= 100
    assert g.window_sites(64) == 512
    with pytest.raises(ValueError):
        g.window_sites(0.1)
    with pytest.raises(ValueError):
        LatticeGrid(1, 100, 0.1, 0.01)
    dt = fit_time_step(1 / 128, [0.3, 0.6])
    assert dt <= 1 / 128
    for t in (0.3, 0.6):
        assert abs(t / dt - round(t / dt)) < 1e-9
    g = g.with_dt(dt)
    assert g.steps(0.3) == round(0.3 / dt)
    with pytest.raises(ValueError):
        g.steps(0.3 + dt / 3)
