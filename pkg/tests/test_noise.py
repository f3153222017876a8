import math

import numpy as np
import pytest

from shelab.grid import LatticeGrid
from shelab.kernel import heat_kernel
from shelab.noise import (KINDS, NoiseModel, NoiseSampler, dalang_integral, has_zero_atom, lambda_inverse,
                          lattice_covariance, lattice_spectrum, sample_increment, spectral_density, upsilon)
from shelab.rng import seed_stream

DIRAC = NoiseModel("dirac", 1)
GAUSS = NoiseModel("gaussian", 1, bandwidth=1.0)
EXPO = NoiseModel("exponential", 1, rate=2.0)


def test_model_validation():
    with pytest.raises(ValueError):
        NoiseModel("dirac", 2)
    with pytest.raises(ValueError):
        NoiseModel("riesz", 1)
    with pytest.raises(ValueError):
        NoiseModel("gaussian", 1, bandwidth=0.0)
    for kind in KINDS:
        assert not has_zero_atom(NoiseModel(kind, 1))


def test_spectral_density_examples():
    assert spectral_density(DIRAC, 0.0) == 1.0
    assert spectral_density(GAUSS, 0.0) == pytest.approx(1.0)
    assert spectral_density(GAUSS, math.sqrt(2)) == pytest.approx(math.exp(-1), rel=1e-14)
    assert spectral_density(EXPO, 1.0) == pytest.approx(4 / 5)


def test_dalang_examples():
    r = dalang_integral(DIRAC, 0.0)
    assert r.finite and r.value == pytest.approx(math.pi, rel=1e-9)
    assert dalang_integral(DIRAC, 1.0).status == "divergent"
    assert dalang_integral(DIRAC, 0.5).status == "divergent"
    assert dalang_integral(DIRAC, 0.45).finite
    g2 = NoiseModel("gaussian", 2, bandwidth=1.0)
    a = dalang_integral(g2, 0.5, epsrel=1e-10)
    b = dalang_integral(g2, 0.5, epsrel=1e-7)
    assert a.finite and abs(a.value - b.value) <= 1e-6 * abs(a.value)


def test_upsilon_and_lambda_closed_form():
    for lam in (0.1, 0.5, 1.0, 2.0, 10.0):
        assert upsilon(DIRAC, lam) == pytest.approx(1 / math.sqrt(2 * lam), rel=1e-10)
    for lam in (0.01, 1.0, 100.0):
        a = math.sqrt(2 * lam)
        assert upsilon(EXPO, lam) == pytest.approx(EXPO.rate / (a * (EXPO.rate + a)), rel=1e-10)
    assert lambda_inverse(DIRAC, 1.0) == pytest.approx(0.5, rel=1e-10)
    assert lambda_inverse(DIRAC, 0.5) == pytest.approx(2.0, rel=1e-10)
    for model in (DIRAC, GAUSS, EXPO, NoiseModel("gaussian", 2), NoiseModel("exponential", 2)):
        for y in (0.1, 1.0):
            assert upsilon(model, lambda_inverse(model, y)) == pytest.approx(y, rel=1e-10)
        for lam in (0.1, 1.0, 10.0):
            assert upsilon(model, lam) > upsilon(model, 2 * lam)
    assert upsilon(DIRAC, lambda_inverse(DIRAC, 10.0)) == pytest.approx(10.0, rel=1e-10)
    with pytest.raises(ValueError):
        lambda_inverse(GAUSS, 1e12)


@pytest.mark.parametrize("model", [GAUSS, EXPO, NoiseModel("gaussian", 2, bandwidth=0.5),
                                   NoiseModel("exponential", 2, rate=3.0)])
def test_lattice_covariance_mass_and_spectrum(model):
    grid = LatticeGrid(model.d, 64, 0.125, 0.01)
    c = lattice_covariance(model, grid)
    assert c.sum() * grid.cell_volume == pytest.approx(model.total_mass, rel=1e-8)
    assert np.all(lattice_spectrum(model, grid) >= 0)


def _draws(model, grid, n, dt, purpose):
    rng = seed_stream(7, 0, purpose)
    return NoiseSampler(model, grid).color(rng.standard_normal((n,) + grid.shape), dt)


def test_dirac_increments():
    grid = LatticeGrid(1, 64, 0.125, 0.01)
    dt = 0.01
    x = _draws(DIRAC, grid, 100_000, dt, "test-dirac")
    site = x[:, 5]
    assert abs(site.mean()) <= 4 * site.std() / math.sqrt(len(site))
    assert site.var() == pytest.approx(dt / grid.dx, rel=0.02)
    lag1 = np.mean(x[:, 5] * x[:, 6])
    se = np.std(x[:, 5] * x[:, 6]) / math.sqrt(len(x))
    assert abs(lag1) <= 4 * se
    # whiteness in time: consecutive draws are independent
    corr = np.corrcoef(site[:-1], site[1:])[0, 1]
    assert abs(corr) <= 4 / math.sqrt(len(site))


@pytest.mark.parametrize("model", [GAUSS, EXPO])
def test_coloured_increments_match_lattice_covariance(model):
    grid = LatticeGrid(1, 64, 0.125, 0.01)
    dt = 0.01
    x = _draws(model, grid, 100_000, dt, f"test-{model.kind}")
    target = dt * lattice_covariance(model, grid)
    prods = x * x[:, :1]
    emp = prods.mean(axis=0)
    se = prods.std(axis=0) / math.sqrt(len(x))
    assert np.max(np.abs(emp - target) / se) <= 5
    if model.kind == "gaussian":
        r = 8
        assert emp[r] == pytest.approx(dt * heat_kernel(1.0, r * grid.dx), rel=0.03)


def test_sample_increment():
    grid = LatticeGrid(1, 32, 0.25, 0.01)
    inc = sample_increment(GAUSS, grid, 0.01, seed_stream(1, 0))
    assert inc.values.shape == grid.shape and inc.dt == 0.01
    with pytest.raises(ValueError):
        sample_increment(GAUSS, grid, 0.0, seed_stream(1, 0))
    with pytest.raises(ValueError):
        NoiseSampler(NoiseModel("gaussian", 2), grid)


def test_streams():
    a = seed_stream(5, 0, "noise").standard_normal(1000)
    b = seed_stream(5, 0, "noise").standard_normal(1000)
    assert np.array_equal(a, b)
    n = 1_000_000
    x = seed_stream(5, 0, "noise").standard_normal(n)
    y = seed_stream(5, 1, "noise").standard_normal(n)
    z = seed_stream(5, 0, "calibration").standard_normal(n)
    assert abs(np.mean(x * y)) <= 4 / math.sqrt(n)
    assert abs(np.mean(x * z)) <= 4 / math.sqrt(n)
    with pytest.raises(ValueError):
        seed_stream(-1, 0)
