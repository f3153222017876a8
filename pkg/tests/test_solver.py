import json
import math

import numpy as np
import pytest

from shelab.errors import ConfigError
from shelab.grid import LatticeGrid
from shelab.noise import NoiseModel, NoiseIncrement
from shelab.solver import (DiffusionSpec, Ensemble, gaussian_oracle_covariance, initial_frame,
                           pam_second_moment_oracle, pam_second_moment_picard, replay, scheme_two_point, simulate,
                           step)

DIRAC = NoiseModel("dirac", 1)
GAUSS = NoiseModel("gaussian", 1, bandwidth=1.0)
GRID = LatticeGrid(1, 64, 0.25, 1 / 64)


def test_zero_sigma_keeps_one():
    frame = initial_frame(GRID)
    rng = np.random.default_rng(0)
    incr = NoiseIncrement(rng.standard_normal(GRID.shape), GRID.dt, GRID)
    out = step(frame, incr, DiffusionSpec.constant(0.0))
    assert np.max(np.abs(out.values - 1)) <= 1e-15
    assert out.t == GRID.dt
    traj = simulate(GRID, DIRAC, DiffusionSpec.constant(0.0), 0.5, [0.25, 0.5])
    for f in traj.frames:
        assert np.max(np.abs(f.values - 1)) <= 1e-14


def test_zero_time():
    traj = simulate(GRID, GAUSS, DiffusionSpec.linear(), 0.0, [0.0])
    assert traj.times == [0.0]
    assert np.all(traj.frames[0].values == 1.0)


def test_invalid_inputs_listed():
    with pytest.raises(ConfigError) as exc:
        simulate(GRID, NoiseModel("gaussian", 2), DiffusionSpec.linear(), -1.0, [2.0])
    assert len(exc.value.errors) >= 2


def test_determinism_and_replay():
    a = simulate(GRID, GAUSS, DiffusionSpec.linear(), 0.5, [0.25, 0.5], seed=(3, 1), store_noise=True)
    b = simulate(GRID, GAUSS, DiffusionSpec.linear(), 0.5, [0.25, 0.5], seed=(3, 1))
    c = simulate(GRID, GAUSS, DiffusionSpec.linear(), 0.5, [0.25, 0.5], seed=(3, 2))
    assert a.digest() == b.digest() != c.digest()
    last = None
    for last in replay(GRID, DiffusionSpec.linear(), a.noise):
        pass
    assert np.array_equal(last, a.frame_at(0.5).values)


def test_ensemble_matches_single_replica():
    ens = Ensemble(GRID, GAUSS, DiffusionSpec.linear(), 3, range(4))
    ens.advance_to(0.5)
    single = simulate(GRID, GAUSS, DiffusionSpec.linear(), 0.5, [0.5], seed=(3, 2))
    assert np.allclose(ens.u[2], single.frame_at(0.5).values, rtol=1e-12, atol=0)


def test_trajectory_exports(tmp_path):
    traj = simulate(GRID, DIRAC, DiffusionSpec.linear(), 0.5, [0.5], seed=(1, 0))
    traj.to_csv(tmp_path / "u.csv")
    lines = (tmp_path / "u.csv").read_text().splitlines()
    assert lines[0] == "t,x_index,u" and len(lines) == 1 + 2 * GRID.n_sites
    traj.summary_json(tmp_path / "s.json")
    s = json.loads((tmp_path / "s.json").read_text())
    assert [f["t"] for f in s["frames"]] == [0.0, 0.5]
    assert s["frames"][0]["variance"] == 0.0


def test_gaussian_oracle_values():
    # white noise: Var u(t) = int_0^t p_{2s}(0) ds = sqrt(t / pi)
    assert gaussian_oracle_covariance(DIRAC, 1.0, 1.0, 0.0) == pytest.approx(1 / math.sqrt(math.pi), rel=1e-8)
    # Gaussian noise with bandwidth 1: int_0^t p_{2s + 1}(0) ds = (sqrt(2t + 1) - 1) / sqrt(2 pi)
    for t in (0.5, 2.0):
        exact = (math.sqrt(2 * t + 1) - 1) / math.sqrt(2 * math.pi)
        assert gaussian_oracle_covariance(GAUSS, 1.0, t, 0.0) == pytest.approx(exact, rel=1e-8)
    assert gaussian_oracle_covariance(GAUSS, 2.0, 1.0, 0.0) == pytest.approx(
        4 * gaussian_oracle_covariance(GAUSS, 1.0, 1.0, 0.0), rel=1e-12)
    assert abs(gaussian_oracle_covariance(GAUSS, 1.0, 1.0, 50.0)) < 1e-6
    assert gaussian_oracle_covariance(GAUSS, 1.0, 1.0, 0.0) < gaussian_oracle_covariance(GAUSS, 1.0, 2.0, 0.0)


def test_pam_oracle_against_picard():
    for model in (DIRAC, GAUSS):
        for t, lag in ((0.5, 0.0), (1.0, 0.0), (1.0, 0.5)):
            a = pam_second_moment_oracle(model, t, lag)
            b = pam_second_moment_picard(model, t, lag)
            assert a == pytest.approx(b, rel=1e-2)
    # white noise at lag 0: the chaos series sums to 2 exp(t/4) Phi(sqrt(t/2))
    from scipy.stats import norm
    t = 1.0
    exact = 2 * math.exp(t / 4) * norm.cdf(math.sqrt(t / 2))
    assert pam_second_moment_picard(DIRAC, t) == pytest.approx(exact, rel=1e-10)
    assert pam_second_moment_oracle(DIRAC, t) == pytest.approx(exact, rel=1e-4)


def test_scheme_two_point_converges_to_oracle():
    errs = []
    for dx in (1 / 4, 1 / 8, 1 / 16):
        grid = LatticeGrid(1, int(16 / dx), dx, dx * dx / 2)
        c = scheme_two_point(grid, GAUSS, DiffusionSpec.linear(), 1.0)
        errs.append(abs(c[0] - pam_second_moment_oracle(GAUSS, 1.0)))
    assert errs[2] < errs[1] < errs[0]
    assert errs[2] < 1e-2


def test_monte_carlo_matches_scheme_moment():
    grid = LatticeGrid(1, 64, 0.25, 1 / 32)
    ens = Ensemble(grid, GAUSS, DiffusionSpec.linear(), 11, range(400))
    ens.advance_to(0.5)
    m2 = np.mean(ens.u ** 2, axis=1)
    exact = scheme_two_point(grid, GAUSS, DiffusionSpec.linear(), 0.5)[0]
    se = m2.std() / math.sqrt(len(m2))
    assert abs(m2.mean() - exact) <= 4 * se
    assert abs(ens.u.mean() - 1) <= 4 * ens.u.mean(axis=1).std() / math.sqrt(400)
