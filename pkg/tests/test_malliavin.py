import math

import numpy as np
import pytest

from shelab.grid import LatticeGrid
from shelab.kernel import semigroup_convolve
from shelab.malliavin import (a_eps, clark_ocone_check, constant_c_star, constant_c_tke, constants_report,
                              log_constant_c_star, log_constant_c_tke, minimal_image, rate_bound_eval,
                              simulate_derivative, theta_estimate)
from shelab.noise import NoiseModel
from shelab.observables import ObservableSpec
from shelab.solver import DiffusionSpec, replay, simulate

DIRAC = NoiseModel("dirac", 1)
GAUSS = NoiseModel("gaussian", 1, bandwidth=1.0)
GRID = LatticeGrid(1, 128, 1 / 8, 1 / 128)


def test_constant_sigma_derivative_is_heat_kernel():
    sigma = DiffusionSpec.constant(0.7)
    base = simulate(GRID, GAUSS, sigma, 0.5, [0.25, 0.5], seed=(2, 0), store_noise=True)
    frames = simulate_derivative(base, 0.125, 40, 0.5, sigma)
    spike = np.zeros(GRID.shape)
    spike[40] = 0.7 / GRID.dx
    for f in frames:
        if f.t <= 0.125:
            assert not f.values.any()
        else:
            assert np.max(np.abs(f.values - semigroup_convolve(spike, f.t - 0.125, GRID))) <= 1e-10


def test_derivative_matches_finite_difference():
    sigma = DiffusionSpec.linear()
    base = simulate(GRID, GAUSS, sigma, 0.25, [0.25], seed=(4, 0), store_noise=True)
    j, z = 8, 30
    d = simulate_derivative(base, j * GRID.dt, z, 0.25, sigma)[-1].values
    h = 1e-4
    noise = base.noise.copy()
    noise[j, z] += h
    *_, up = replay(GRID, sigma, noise)
    noise[j, z] -= 2 * h
    *_, down = replay(GRID, sigma, noise)
    fd = (up - down) / (2 * h) / GRID.dx
    assert np.max(np.abs(fd - d)) <= 1e-8 * np.max(np.abs(d))


def test_derivative_errors():
    sigma = DiffusionSpec.linear()
    base = simulate(GRID, GAUSS, sigma, 0.25, [0.25], seed=(4, 0))
    with pytest.raises(ValueError):
        simulate_derivative(base, 0.0, 3, 0.25, sigma)
    base = simulate(GRID, GAUSS, sigma, 0.25, [0.25], seed=(4, 0), store_noise=True)
    with pytest.raises(ValueError):
        simulate_derivative(base, GRID.dt / 3, 3, 0.25, sigma)
    with pytest.raises(ValueError):
        simulate_derivative(base, 0.25, 3, 0.25, sigma)


def test_minimal_image():
    assert minimal_image(GRID, 2, 126)[0] == pytest.approx(4 * GRID.dx)
    assert minimal_image(GRID, 126, 2)[0] == pytest.approx(-4 * GRID.dx)


def test_clark_ocone_constant_sigma_is_exact():
    # with constant sigma the derivative is deterministic; only the lattice kernel differs from p_{t-s}
    sigma = DiffusionSpec.constant(1.0)
    grid = LatticeGrid(1, 256, 1 / 16, 1 / 256)
    res = clark_ocone_check(np.ones(grid.shape), grid, GAUSS, sigma, 0.25, 128, 0.75, 130, 100, 1)
    assert res.se <= 1e-12 * abs(res.target)
    assert res.relative_error < 1e-3


def test_clark_ocone_linear_sigma():
    sigma = DiffusionSpec.linear()
    grid = LatticeGrid(1, 256, 1 / 16, 1 / 256)
    u_s = simulate(grid, GAUSS, sigma, 0.25, [0.25], seed=(6, 0)).frame_at(0.25).values
    res = clark_ocone_check(u_s, grid, GAUSS, sigma, 0.25, 128, 0.75, 128, 400, 6)
    assert abs(res.estimate - res.target) <= 4 * res.se + 1e-3 * abs(res.target)


def test_constants_examples():
    zero = DiffusionSpec.constant(0.0)
    assert constant_c_tke(1.0, 4, 0.5, zero, DIRAC) == math.inf
    assert a_eps(0.5, zero, 1) == math.inf
    # t -> 0 leaves the prefactor 16 / eps^2
    assert constant_c_star(1e-15, 4, 0.5, DIRAC) == pytest.approx(64.0, rel=1e-9)
    assert log_constant_c_star(1.0, 8, 0.5, DIRAC) > log_constant_c_star(1.0, 4, 0.5, DIRAC)
    assert constant_c_star(1e-4, 8, 0.5, DIRAC) > constant_c_star(1e-4, 4, 0.5, DIRAC)
    lin = DiffusionSpec.linear()
    assert log_constant_c_tke(2.0, 4, 0.5, lin, DIRAC) > log_constant_c_tke(1.0, 4, 0.5, lin, DIRAC)
    # white noise: Lambda(y) = 1 / (2 y^2)
    a = a_eps(0.5, lin, 1)
    expected = math.log(8) + 2 * 1.0 / (2 * (a / 4) ** 2) - 1.5 * math.log(0.5)
    assert log_constant_c_tke(1.0, 4, 0.5, lin, DIRAC) == pytest.approx(expected, rel=1e-10)
    assert constant_c_tke(10.0, 4, 0.5, lin, DIRAC) == math.inf
    assert math.isfinite(log_constant_c_star(10.0, 4, 0.5, DIRAC))
    with pytest.raises(ValueError):
        a_eps(1.0, lin, 1)
    with pytest.raises(ValueError):
        log_constant_c_tke(1.0, 1, 0.5, lin, DIRAC)


def test_theta_and_rate_bound():
    th = theta_estimate(np.full(100, 2.0), ObservableSpec.log(), 6)
    # g' = 1/2, g'' = -1/4 at u = 2
    assert th.value == pytest.approx(0.25) and th.se == pytest.approx(0.0, abs=1e-15)
    with_bad = theta_estimate(np.r_[np.full(100, 2.0), -1.0], ObservableSpec.log(), 6)
    assert with_bad.rejected == 1
    with pytest.raises(ValueError):
        theta_estimate(np.ones(10), ObservableSpec.log(), 4)
    assert rate_bound_eval(1.0, 4, 1.0, 1.0, 0.0, theta=1.0, d=1) == pytest.approx(0.5)
    with pytest.raises(ValueError):
        rate_bound_eval(1.0, 4, 0.0, 1.0, 0.0)
    rep = constants_report(1.0, 4, 0.5, DiffusionSpec.linear(), DIRAC, n_window=4, b=1.0)
    assert rep.rate_bound == pytest.approx(0.5)
    assert rep.c_tke == math.inf and rep.to_dict()["c_tke"] == "inf"
