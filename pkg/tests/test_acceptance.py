"""Acceptance criteria, one test each; every test records a PASS/FAIL line.

The statistical criteria run the default campaigns (the reference
configurations) once per session.  Expect about 20 minutes on one core.
"""

import math
import os

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from shelab.grid import LatticeGrid
from shelab.harness import build_config, execute
from shelab.kernel import (heat_kernel, kernel_double_argument, kernel_product_split, kernel_time_merge,
                           semigroup_convolve)
from shelab.noise import NoiseModel, lambda_inverse, upsilon
from shelab.rng import seed_stream
from shelab.stats import distance_to_gaussian, tv_normals_bound

pytestmark = pytest.mark.acceptance

WORKERS = os.cpu_count() or 1


def record(n, title, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {title}  ({detail})"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


@pytest.fixture(scope="session")
def runs(tmp_path_factory):
    out = tmp_path_factory.mktemp("campaigns")
    cache = {}

    def get(kind, workers=WORKERS, tag=""):
        key = (kind, workers, tag)
        if key not in cache:
            cfg = build_config(kind, overrides=[("harness", "out", str(out / f"w{workers}{tag}"))])
            result, path = execute(cfg, workers=workers)
            cache[key] = (result, path)
        return cache[key]

    return get


def by_name(result, prefix):
    found = [v for v in result.verdicts if v.name.startswith(prefix)]
    assert found, f"no verdict named {prefix!r}"
    return found


def ok_all(verdicts):
    return all(v.status == "pass" for v in verdicts)


def wall(result):
    return f"{result.metrics['wall_seconds']:.0f} s"


def test_01_kernel_identities():
    rng = seed_stream(1, 0, "acceptance-kernel")
    worst = 0.0
    for i in range(1000):
        d = 1 + i % 2
        s, r = rng.uniform(0.1, 10, 2)
        x, y = rng.uniform(-5, 5, d), rng.uniform(-5, 5, d)
        a, b = kernel_product_split(s, x, y, d)
        ref = heat_kernel(s, x, d) * heat_kernel(s, y, d)
        worst = max(worst, abs(2 ** d * a * b - ref) / ref)
        pref, k = kernel_time_merge(s, r, x, d)
        ref = heat_kernel(s, x, d) * heat_kernel(r, x, d)
        worst = max(worst, abs(pref * k - ref) / ref)
        lhs, rhs = kernel_double_argument(s, x, d)
        worst = max(worst, abs(lhs - rhs) / abs(rhs))
    semi = 0.0
    for d in (1, 2):
        grid = LatticeGrid(d, 64, 0.125, 0.01)
        for j in range(10):
            f = rng.random(grid.shape)
            t1, t2 = rng.uniform(0.05, 1.0, 2)
            two = semigroup_convolve(semigroup_convolve(f, t1, grid), t2, grid)
            semi = max(semi, float(np.max(np.abs(two - semigroup_convolve(f, t1 + t2, grid)))))
    record(1, "kernel identities and semigroup", worst <= 1e-12 and semi <= 1e-12,
           f"identities max rel err {worst:.2e}, semigroup max err {semi:.2e}, tol 1e-12")


def test_02_upsilon_lambda():
    m = NoiseModel("dirac", 1)
    e1 = max(abs(upsilon(m, lam) * math.sqrt(2 * lam) - 1) for lam in (0.1, 0.5, 1, 2, 10))
    e2 = max(abs(upsilon(m, lambda_inverse(m, y)) / y - 1) for y in (0.1, 1, 10))
    record(2, "Upsilon/Lambda closed form", e1 <= 1e-10 and e2 <= 1e-10,
           f"Upsilon rel err {e1:.1e}, round trip rel err {e2:.1e}, tol 1e-10")


def test_03_gaussian_oracle(runs):
    res, _ = runs("validate")
    cov = by_name(res, "gaussian covariance")
    ks = by_name(res, "gaussian marginal KS")[0]
    zs = ", ".join(f"{v.name.split()[-1]} z={v.statistic:.2f}" for v in cov)
    record(3, "Gaussian oracle covariance and KS", ok_all(cov) and ks.status == "pass",
           f"{zs} (<= 3); KS p={ks.p_value:.3f} (>= 0.01); {wall(res)}")


def test_04_pam_moments(runs):
    res, _ = runs("validate")
    means = by_name(res, "pam mean")
    moms = by_name(res, "pam second moment")
    record(4, "PAM moment oracles", ok_all(means) and ok_all(moms),
           "mean z " + ", ".join(f"{v.statistic:.2f}" for v in means) + " (<= 4); second moment rel err "
           + ", ".join(f"{v.statistic:.4f}" for v in moms) + " (<= 0.05)")


def test_05_clt(runs):
    res, _ = runs("clt")
    ks = by_name(res, "KS normality")[0]
    var = by_name(res, "variance vs b_limit")[0]
    record(5, "CLT for the spatial average", ks.status == "pass" and var.status == "pass",
           f"KS p={ks.p_value:.3f}; |b_n - b_lim|/b_lim={var.statistic:.3f} (<= 0.10); {wall(res)}")


def test_06_kpz(runs):
    res, _ = runs("kpz")
    ks = by_name(res, "KS normality")[0]
    pos = by_name(res, "variance positive")[0]
    record(6, "KPZ (log) CLT", ks.status == "pass" and pos.status == "pass",
           f"KS p={ks.p_value:.3f}; variance/SE={pos.statistic:.1f} (> 3); {wall(res)}")


def test_07_rate(runs):
    res, _ = runs("rate")
    v = by_name(res, "rate slope")[0]
    ci = v.details.get("ci95", [math.nan, math.nan])
    record(7, "rate of convergence", v.status == "pass" and all(map(math.isfinite, ci)),
           f"slope {v.statistic:.3f} in [-0.7, -0.3], 95% CI [{ci[0]:.3f}, {ci[1]:.3f}]; {wall(res)}")


def test_08_fclt(runs):
    res, _ = runs("fclt")
    v = by_name(res, "fclt")[0]
    proj = v.details.get("projections", {})
    margins = [proj[k]["pass"] for k in ("e0", "e1") if k in proj]
    record(8, "FCLT covariance and marginals", v.status == "pass" and len(margins) == 2 and all(margins),
           f"max covariance z={v.statistic:.2f} (<= 3); marginal KS p="
           + ", ".join(f"{proj[k]['p_value']:.3f}" for k in ("e0", "e1") if k in proj) + f"; {wall(res)}")


def test_09_holder(runs):
    res, _ = runs("fclt")
    v = by_name(res, "holder")[0]
    d = v.details
    record(9, "moment modulus", v.status == "pass",
           f"time exponent {d['time_exponent']:.3f} (>= {d['time_exponent_min']:.2f}); "
           f"N exponent {d['n_exponent']:.3f} (target -1 +/- 0.2)")


def test_10_lower_bound(runs):
    res, _ = runs("lower-bound")
    b = by_name(res, "empirical B >= bound")[0]
    s = by_name(res, "t_N sequence liminf")[0]
    record(10, "variance lower bound", b.status == "pass" and s.status == "pass",
           f"min (B - bound)/SE={b.statistic:.1f} (>= -3); liminf {s.statistic:.4f} (> 0); {wall(res)}")


def test_11_malliavin(runs):
    res, _ = runs("malliavin")
    pos = by_name(res, "derivative positivity")[0]
    co = [v for v in by_name(res, "Clark-Ocone") if v.name == "Clark-Ocone"][0]
    const = by_name(res, "constant-sigma derivative")[0]
    record(11, "Malliavin positivity, Clark-Ocone, constant sigma",
           all(v.status == "pass" for v in (pos, co, const)),
           f"nonpositive fraction {pos.statistic:.2e} (<= 1e-3); Clark-Ocone rel err {co.statistic:.4f} (< 0.05); "
           f"constant-sigma dev {const.statistic:.1e} (<= 1e-8); {wall(res)}")


def test_12_association(runs):
    res, _ = runs("associate")
    vs = by_name(res, "association")
    record(12, "association", ok_all(vs),
           "; ".join(f"{v.name}: {v.statistic:.2f}" for v in vs) + f"; {wall(res)}")


def test_13_pinsker():
    exact = tv_normals_bound(2, 1) == 0.5
    worst = -math.inf
    for c1, c2 in ((2.0, 1.0), (1.21, 1.0), (1.05, 1.0)):
        x = seed_stream(13, int(100 * c1), "acceptance-pinsker").normal(0, math.sqrt(c1), 20000)
        de = distance_to_gaussian(x, variance=c2)
        worst = max(worst, (de.value - tv_normals_bound(c1, c2)) / de.se)
    record(13, "Pinsker bound", exact and worst <= 3,
           f"bound(2,1)={tv_normals_bound(2, 1)}; max (estimate - bound)/SE={worst:.1f} (<= 3)")


def test_14_determinism(runs):
    _, p1 = runs("associate")
    _, p2 = runs("associate", workers=1 if WORKERS > 1 else 2, tag="-rerun")
    same = (p1 / "verdicts.json").read_bytes() == (p2 / "verdicts.json").read_bytes()
    same_rep = (p1 / "replicas.csv").read_bytes() == (p2 / "replicas.csv").read_bytes()
    record(14, "determinism across worker counts", same and same_rep,
           "verdicts.json and replicas.csv bitwise identical" if same and same_rep else "outputs differ")
