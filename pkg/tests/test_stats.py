import math

import numpy as np
import pytest

from shelab.rng import seed_stream
from shelab.stats import (GaussianLimitSpec, MonotoneFunctional, association_check, distance_to_gaussian,
                          fclt_check, gaussian_pair_oracle, holder_moment_check, normality_test, rate_fit,
                          tn_clt_check, tv_normals_bound)


def _rng(tag):
    return seed_stream(17, 0, tag)


def test_normality_accepts_normal_and_rejects_exponential():
    x = _rng("normal").normal(0, 3, 2000)
    assert normality_test(x).passed
    assert normality_test(x, mean=None).passed
    y = _rng("expo").exponential(1.0, 2000) - 1.0
    assert not normality_test(y).passed
    with pytest.raises(ValueError):
        normality_test(x[:100])


def test_normality_size():
    # rejection rate at level 0.05 over independent normal samples
    rej = sum(not normality_test(seed_stream(5, i, "size").normal(size=500), level=0.05,
                                 n_calibration=500).passed for i in range(200))
    assert abs(rej / 200 - 0.05) <= 4 * math.sqrt(0.05 * 0.95 / 200)


def test_pinsker_examples():
    assert tv_normals_bound(2, 1) == pytest.approx(0.5)
    assert tv_normals_bound(1.21, 1) == pytest.approx(0.2291, abs=1e-4)
    with pytest.raises(ValueError):
        tv_normals_bound(1, 2)


def test_distance_to_gaussian():
    x = _rng("dist").normal(0, 1, 5000)
    d = distance_to_gaussian(x, variance=1.0)
    assert abs(d.value) <= 4 * d.se
    y = _rng("dist-u").uniform(-math.sqrt(3), math.sqrt(3), 5000)
    assert distance_to_gaussian(y, variance=1.0).value > 0.05


def test_rate_fit():
    ns = np.array([4, 8, 16, 32, 64])
    fit = rate_fit(ns, 2.0 * ns ** -0.5)
    assert fit.slope == pytest.approx(-0.5, abs=1e-12)
    scaled = rate_fit(ns, 7.0 * ns ** -0.5)
    assert scaled.slope == pytest.approx(fit.slope, abs=1e-12)
    noisy = 2.0 * ns ** -0.5 * np.exp(_rng("fit").normal(0, 0.05, len(ns)))
    nf = rate_fit(ns, noisy)
    assert nf.ci[0] <= nf.slope <= nf.ci[1]
    with pytest.raises(ValueError):
        rate_fit([4, 8, 16], [1, 1, 1])
    with pytest.raises(ValueError):
        rate_fit([4, 5, 6, 7], [1, 1, 1, 1])


def test_fclt_check():
    cov = np.array([[1.0, 0.6], [0.6, 1.0]])
    x = _rng("fclt").multivariate_normal([0, 0], cov, size=3000)
    spec = GaussianLimitSpec((1.0, 2.0), cov, np.full((2, 2), 1e-3))
    assert fclt_check(x, spec).passed
    wrong = GaussianLimitSpec((1.0, 2.0), np.array([[1.0, 0.0], [0.0, 1.0]]), np.full((2, 2), 1e-3))
    assert not fclt_check(x, wrong).passed
    with pytest.raises(ValueError):
        GaussianLimitSpec((1.0, 2.0), np.array([[1.0, 2.0], [2.0, 1.0]]), np.zeros((2, 2)))


def test_holder_moment_check():
    gaps = np.array([0.01, 0.03, 0.1])
    ns = np.array([4.0, 8.0, 16.0])
    # second moments: gap^(2 gamma) with gamma = 1/2 and N^{-1} in d = 1
    ok = holder_moment_check(gaps, gaps, 0.01 * gaps, ns, 3 / ns, 0.03 / ns)
    assert ok.passed
    assert ok.details["time_exponent"] == pytest.approx(1.0)
    assert ok.details["n_exponent"] == pytest.approx(-1.0)
    rough = holder_moment_check(gaps, gaps ** 0.4, 0.01 * gaps ** 0.4, ns, 1 / ns, 0.01 / ns)
    assert not rough.passed
    wrong_n = holder_moment_check(gaps, gaps, 0.01 * gaps, ns, ns ** -0.5, 0.01 * ns ** -0.5)
    assert not wrong_n.passed
    with pytest.raises(ValueError):
        holder_moment_check([0.1, 0.2], [1, 1], [1, 1], ns, ns, ns)


def test_association_and_pair_oracle():
    cov = np.array([[1.0, 0.5], [0.5, 1.0]])
    fields = 1.0 + _rng("assoc").multivariate_normal([0, 0], cov, size=5000)
    h1 = MonotoneFunctional("projection", ((0,),))
    h2 = MonotoneFunctional("projection", ((1,),))
    v = association_check(fields, [(h1, h2)])
    assert v.passed and v.details["pairs"][0]["cov"] == pytest.approx(0.5, abs=0.06)
    c, se = gaussian_pair_oracle(cov, h1, h2)
    assert abs(c - 0.5) <= 4 * se
    neg = 1.0 + _rng("assoc-neg").multivariate_normal([0, 0], [[1, -0.5], [-0.5, 1]], size=5000)
    assert not association_check(neg, [(h1, h2)]).passed
    mn = MonotoneFunctional("min", ((0,), (1,)))
    bump = MonotoneFunctional("bump", ((0,), (1,)))
    assert association_check(fields, [(mn, bump)]).passed
    with pytest.raises(ValueError):
        MonotoneFunctional("projection", ((0,), (1,)))


def test_tn_clt_check():
    class D:
        def __init__(self, value, se):
            self.value, self.se = value, se

    x = [normality_test(_rng(f"tn{i}").normal(size=1000)) for i in range(3)]
    good = tn_clt_check([4, 8, 16], x, [D(0.05, 0.01), D(0.03, 0.01), D(0.02, 0.01)])
    assert good.passed and good.status == "pass"
    bad = tn_clt_check([4, 8, 16], x, [D(0.01, 0.001), D(0.03, 0.001), D(0.05, 0.001)])
    assert bad.status == "fail"
    assert tn_clt_check([4, 8, 16], x, [D(0.01, 0.001)] * 3, exploratory=True).status == "exploratory"
