"""Named campaigns.

Every campaign simulates replicas in fixed batches (the partition depends
only on the replica count and ``harness.batch``), collects one record per
replica, and then calls a pure aggregation function on those records.  The
same function recomputes the aggregates from ``replicas.csv``, and results do
not depend on the number of worker processes.
"""

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
import math
import time

import numpy as np

from .. import malliavin as mal
from ..kernel import heat_kernel
from ..noise import dalang_integral
from ..observables import (CovarianceReport, LagCovariance, default_max_lag, estimate_b, lag_integral,
                           variance_lower_bound, window_means)
from ..rng import stream_key_hex
from ..solver import DiffusionSpec, Ensemble, gaussian_oracle_covariance, pam_second_moment_oracle, simulate
from ..stats import (GaussianLimitSpec, MonotoneFunctional, TestVerdict, association_check, distance_to_gaussian,
                     fclt_check, gaussian_pair_oracle, holder_moment_check, normality_test, pair_covariance,
                     rate_fit, tn_clt_check)
from . import config as C


@dataclass
class CampaignResult:
    kind: str
    config: dict
    digest: str
    records: list
    aggregates: dict
    verdicts: list
    csvs: dict = field(default_factory=dict)
    reports: dict = field(default_factory=dict)
    metrics: dict = field(default_factory=dict)

    @property
    def passed(self):
        """True when every verdict passes or is exploratory; inconclusive counts against."""
        return all(v.status in ("pass", "exploratory") for v in self.verdicts)


def _batches(n, size):
    return [list(range(i, min(i + size, n))) for i in range(0, n, size)]


def _pmap(fn, tasks, workers):
    """Ordered results of ``fn`` over ``tasks``, yielded as they complete in order."""
    if workers <= 1 or len(tasks) <= 1:
        for t in tasks:
            yield fn(t)
        return
    with ProcessPoolExecutor(max_workers=workers) as ex:
        yield from ex.map(fn, tasks)


# receives each batch of finished records (used for the streaming CSV)
_sink = None


def _emit(records):
    if _sink is not None:
        _sink(records)


def _key(t, n=None, extra=""):
    s = f"t={t:g}"
    if n is not None:
        s += f",N={n:g}"
    return s + extra


# ---------------------------------------------------------------------------
# the window job: run an ensemble and collect window means and lag pieces


@dataclass
class WindowJob:
    cfg: dict
    length: float
    purpose: str
    replicas: list
    times: list
    windows: list = field(default_factory=list)
    lag_pairs: list = field(default_factory=list)
    max_lag: float = 0.0
    full_mean: bool = False
    sigma: dict = None
    sites: list = field(default_factory=list)
    site_times: list = field(default_factory=list)


def _sigma_from(job):
    if job.sigma is None:
        return C.make_sigma(job.cfg)
    return C.make_sigma({"sigma": job.sigma})


def run_window_job(job):
    cfg = job.cfg
    grid = C.make_grid(cfg, job.length)
    model = C.make_noise(cfg)
    sigma = _sigma_from(job)
    g = C.make_observable(cfg)
    ens = Ensemble(grid, model, sigma, cfg["harness"]["seed"], job.replicas, purpose=job.purpose)
    n = len(job.replicas)
    out = {"replica": list(job.replicas), "cols": {}}
    viol = np.zeros(n, dtype=np.int64)
    first_times = {p[0] for p in job.lag_pairs}
    saved = {}
    accs = {p: LagCovariance(grid, job.max_lag) for p in job.lag_pairs}
    axes = tuple(range(1, 1 + grid.d))
    for t in sorted(job.times):
        u = ens.advance_to(t)
        gv, bad = g.evaluate(u)
        viol += bad.sum(axis=axes)
        for nw in job.windows:
            means, _ = window_means(u, grid, g, nw)
            out["cols"][f"mean@{_key(t, nw)}"] = means
        if job.full_mean:
            out["cols"][f"fullmean@{_key(t)}"] = np.nanmean(gv, axis=axes)
        if t in job.site_times:
            for j, site in enumerate(job.sites):
                out["cols"][f"u@{_key(t)},x{j}"] = u[(slice(None),) + tuple(site)].copy()
            out["cols"][f"pooled_u@{_key(t)}"] = u.mean(axis=axes)
            out["cols"][f"pooled_u2@{_key(t)}"] = (u * u).mean(axis=axes)
        gclean = np.where(bad, 0.0, gv)
        if t in first_times:
            saved[t] = gclean.copy()
        for p, acc in accs.items():
            if p[1] == t:
                acc.add(job.replicas, saved[p[0]], gclean)
    for p, acc in accs.items():
        s, tail, m1, m2 = acc.pieces(list(job.replicas))
        tag = f"lag@{_key(p[0])},{_key(p[1])}"
        out["cols"][tag + ":sum"] = s
        out["cols"][tag + ":tail"] = tail
        out["cols"][tag + ":m1"] = m1
        out["cols"][tag + ":m2"] = m2
        lags = np.arange(-acc.m, acc.m + 1) * grid.dx
        out.setdefault("curves", {})[p] = (acc.rows, lags, acc.width, acc.tail_width)
    out["aborted"] = ens.aborted.copy()
    out["violations"] = viol
    out["grid"] = (grid.n_sites, grid.dx, grid.dt)
    return out


def _run_jobs(cfg, length, purpose, n_replicas, workers, set_label, **kw):
    """Run a window job over all replicas in fixed batches; return records and lag rows."""
    batch = cfg["harness"]["batch"]
    jobs = [WindowJob(cfg, length, purpose, reps, **kw) for reps in _batches(n_replicas, batch)]
    results = _pmap(run_window_job, jobs, workers)
    records = []
    curves = {}
    base = cfg["harness"]["seed"]
    for res in results:
        batch_recs = []
        for i, r in enumerate(res["replica"]):
            rec = {"set": set_label, "replica": r, "seed_key": stream_key_hex(base, r, purpose),
                   "aborted": int(res["aborted"][i]), "violations": int(res["violations"][i])}
            for k, v in res["cols"].items():
                rec[k] = float(v[i])
            batch_recs.append(rec)
        _emit(batch_recs)
        records += batch_recs
        for p, (rows, lags, width, tail_width) in res.get("curves", {}).items():
            entry = curves.setdefault(p, {"rows": {}, "lags": lags, "width": width, "tail_width": tail_width})
            entry["rows"].update(rows)
    return records, curves, None


# ---------------------------------------------------------------------------
# shared aggregation helpers


def _valid(records, set_label):
    """Records of a set that were neither aborted nor hit domain violations."""
    rows = [r for r in records if r["set"] == set_label]
    good = [r for r in rows if int(r["aborted"]) < 0 and int(r["violations"]) == 0]
    return good, len(rows) - len(good), len(rows)


def _budget_verdict(cfg, rejected, total, label="failure budget"):
    frac = rejected / total if total else 0.0
    budget = cfg["harness"]["failure_budget"]
    return TestVerdict(label, frac, budget, bool(frac <= budget), total,
                       details={"rejected": rejected, "total": total})


def _centering(cfg, records, t):
    """E g(u(t, 0)): analytic for g = id (E u = 1), otherwise from the centering set."""
    g = C.make_observable(cfg)
    if g.kind == "identity":
        return 1.0, 0.0, "analytic"
    good, _, _ = _valid(records, "centering")
    vals = np.array([r[f"fullmean@{_key(t)}"] for r in good])
    return float(vals.mean()), float(vals.std(ddof=1) / math.sqrt(len(vals))), "monte-carlo"


def _run_centering(cfg, times, workers):
    g = C.make_observable(cfg)
    if g.kind == "identity":
        return []
    length = 16.0
    n = 2 * cfg["harness"]["replicas"]
    records, _, _ = _run_jobs(cfg, length, "centering", n, workers, "centering", times=list(times),
                              full_mean=True)
    return records


def _lag_pieces(good, tag):
    return tuple(np.array([r[f"{tag}:{p}"] for r in good]) for p in ("sum", "tail", "m1", "m2"))


def _lag_tag(t1, t2):
    return f"lag@{_key(t1)},{_key(t2)}"


def _curve_csv(entry, keys, dx, d):
    """Lag curve along the first axis and the integral of |cov| over all lags."""
    rows = entry["rows"]
    keys = [k for k in keys if k in rows]
    if len(keys) < 2:
        return [], float("nan")
    c = np.stack([rows[k][0] for k in keys])
    m1 = np.array([rows[k][1] for k in keys])
    m2 = np.array([rows[k][2] for k in keys])
    contrib = c - m1.mean() * m2.mean()
    abs_int = float(np.abs(contrib.mean(axis=0)).sum() * dx ** d)
    if d == 2:
        contrib = contrib[:, :, contrib.shape[2] // 2]
    cov = contrib.mean(axis=0)
    se = contrib.std(axis=0, ddof=1) / math.sqrt(len(keys))
    return [(float(l), float(v), float(s)) for l, v, s in zip(entry["lags"], cov, se)], abs_int


# ---------------------------------------------------------------------------
# validate


def run_validate(cfg, workers):
    run = cfg["run"]
    grid = C.make_grid(cfg)
    tg = run["gaussian_t"]
    lag_sites = [grid.window_sites(l) if l > 0 else 0 for l in run["lags"]]
    sites = [(s,) * 1 for s in lag_sites] if grid.d == 1 else [(s, 0) for s in lag_sites]
    const = {"kind": "constant", "sigma0": cfg["sigma"]["sigma0"], "a": 0.0, "b": 0.0}
    pam = {"kind": "linear", "sigma0": 1.0, "a": 0.0, "b": 1.0}
    reps = cfg["harness"]["replicas"]
    rec_g, _, _ = _run_jobs(cfg, None, "noise:gaussian", reps, workers, "gaussian", times=[tg],
                            sigma=const, sites=sites, site_times=[tg])
    rec_p, _, _ = _run_jobs(cfg, None, "noise:pam", reps, workers, "pam", times=run["times"],
                            sigma=pam, sites=sites[:1], site_times=run["times"])
    return rec_g + rec_p


def aggregate_validate(cfg, records):
    run = cfg["run"]
    model = C.make_noise(cfg)
    s0 = cfg["sigma"]["sigma0"]
    tg = run["gaussian_t"]
    verdicts, agg, csv_rows = [], {}, []
    good, rej_g, tot_g = _valid(records, "gaussian")
    x0 = np.array([r[f"u@{_key(tg)},x0"] for r in good])
    for j, lag in enumerate(run["lags"]):
        xj = np.array([r[f"u@{_key(tg)},x{j}"] for r in good])
        cov, se = estimate_b(xj, x0)
        oracle = gaussian_oracle_covariance(model, s0, tg, lag)
        z = abs(cov - oracle) / se
        agg[f"gaussian_cov@lag={lag:g}"] = {"cov": cov, "se": se, "oracle": oracle, "z": z}
        csv_rows.append((lag, cov, se))
        verdicts.append(TestVerdict(f"gaussian covariance lag={lag:g}", z, 3.0, bool(z <= 3.0), len(x0),
                                    details={"cov": cov, "se": se, "oracle": oracle}))
    ks = normality_test(x0 - 1.0, level=run["level"], mean=0.0, name="gaussian marginal KS")
    verdicts.append(ks)
    good_p, rej_p, tot_p = _valid(records, "pam")
    for t in run["times"]:
        pooled = np.array([r[f"pooled_u@{_key(t)}"] for r in good_p])
        pooled2 = np.array([r[f"pooled_u2@{_key(t)}"] for r in good_p])
        m, m_se = pooled.mean(), pooled.std(ddof=1) / math.sqrt(len(pooled))
        zt = abs(m - 1.0) / m_se
        verdicts.append(TestVerdict(f"pam mean t={t:g}", zt, 4.0, bool(zt <= 4.0), len(pooled),
                                    details={"mean": m, "se": m_se}))
        m2, m2_se = pooled2.mean(), pooled2.std(ddof=1) / math.sqrt(len(pooled2))
        oracle = pam_second_moment_oracle(model, t)
        rel = abs(m2 - oracle) / oracle
        agg[f"pam_second_moment@t={t:g}"] = {"value": m2, "se": m2_se, "oracle": oracle, "rel_err": rel}
        verdicts.append(TestVerdict(f"pam second moment t={t:g}", rel, run["moment_tol"],
                                    bool(rel <= run["moment_tol"]), len(pooled2),
                                    details={"value": m2, "se": m2_se, "oracle": oracle}))
    verdicts.append(_budget_verdict(cfg, rej_g + rej_p, tot_g + tot_p))
    return agg, verdicts, {"lag_covariance.csv": (("lag", "cov", "se"), csv_rows)}


# ---------------------------------------------------------------------------
# clt and kpz


def run_clt(cfg, workers):
    t, n_w = cfg["run"]["times"][0], cfg["run"]["N"][0]
    model = C.make_noise(cfg)
    max_lag = _max_lag(cfg, model, t)
    cent = _run_centering(cfg, [t], workers)
    recs, curves, _ = _run_jobs(cfg, None, "noise", cfg["harness"]["replicas"], workers, "main",
                                times=[t], windows=[n_w], lag_pairs=[(t, t)], max_lag=max_lag)
    return cent + recs, curves


def _max_lag(cfg, model, t):
    ml = cfg["run"]["max_lag"]
    return default_max_lag(model, t) if ml == "auto" else ml


def _scaled(cfg, good, t, n_w, centering):
    d = cfg["noise"]["d"]
    return n_w ** (d / 2) * (np.array([r[f"mean@{_key(t, n_w)}"] for r in good]) - centering)


def _b_limit(cfg, good, t1, t2, model, t_window=None):
    # t_window must match the time the job sized its lag window for
    grid = C.make_grid(cfg)
    acc = LagCovariance(grid, _max_lag(cfg, model, max(t1, t2) if t_window is None else t_window))
    return lag_integral(*_lag_pieces(good, _lag_tag(t1, t2)), acc.width, acc.tail_width)


def aggregate_clt(cfg, records):
    run = cfg["run"]
    kind = cfg["campaign"]["kind"]
    t, n_w = run["times"][0], run["N"][0]
    model = C.make_noise(cfg)
    g = C.make_observable(cfg)
    centering, cent_se, source = _centering(cfg, records, t)
    good, rej, tot = _valid(records, "main")
    x = _scaled(cfg, good, t, n_w, centering)
    b_n, b_n_se = estimate_b(x)
    b_lim, b_lim_se, tail = _b_limit(cfg, good, t, t, model)
    report = CovarianceReport(t, t, g.label, n_w, b_n, b_n_se, b_lim, b_lim_se, tail,
                              status="ok" if tail <= 0.1 else "window too small")
    verdicts = []
    fixed_mean = 0.0 if source == "analytic" else None
    verdicts.append(normality_test(x, level=run["level"], mean=fixed_mean, name="KS normality"))
    mean = x.mean()
    se_mean = math.sqrt(x.var(ddof=1) / len(x) + n_w ** cfg["noise"]["d"] * cent_se ** 2)
    verdicts.append(TestVerdict("mean zero", abs(mean) / se_mean, 4.0, bool(abs(mean) <= 4 * se_mean), len(x),
                                details={"mean": mean, "se": se_mean, "centering": centering,
                                         "centering_se": cent_se, "centering_source": source}))
    if kind == "clt":
        rel = abs(b_n - b_lim) / abs(b_lim)
        verdicts.append(TestVerdict("variance vs b_limit", rel, 0.10, bool(rel <= 0.10), len(x),
                                    details={"b_n": b_n, "b_n_se": b_n_se, "b_limit": b_lim,
                                             "b_limit_se": b_lim_se}))
    else:
        z = b_n / b_n_se
        verdicts.append(TestVerdict("variance positive", z, 3.0, bool(z > 3.0), len(x),
                                    details={"b_n": b_n, "b_n_se": b_n_se, "b_limit": b_lim,
                                             "b_limit_se": b_lim_se}))
    verdicts.append(TestVerdict("lag window", tail, 0.10, bool(tail <= 0.10), len(good),
                                details={"status": report.status}))
    verdicts.append(_budget_verdict(cfg, rej, tot))
    agg = {"centering": centering, "centering_se": cent_se, "centering_source": source,
           "mean": float(mean), "covariance": report.to_dict()}
    csvs = {"variance.csv": (("t", "variance", "se"), [(t, b_n, b_n_se)])}
    return agg, verdicts, csvs, {"covariance.json": report}


# ---------------------------------------------------------------------------
# fclt with the moment modulus


def run_fclt(cfg, workers):
    run = cfg["run"]
    model = C.make_noise(cfg)
    times = C.campaign_times(cfg)
    ts = run["times"]
    pairs = [(a, b) for i, a in enumerate(ts) for b in ts[i:]]
    windows = sorted(set(run["N"]) | set(run["holder_N"]))
    max_lag = _max_lag(cfg, model, max(ts))
    cent = _run_centering(cfg, times, workers)
    recs, curves, _ = _run_jobs(cfg, None, "noise", cfg["harness"]["replicas"], workers, "main",
                                times=times, windows=windows, lag_pairs=pairs, max_lag=max_lag)
    return cent + recs, curves


def aggregate_fclt(cfg, records):
    run = cfg["run"]
    model = C.make_noise(cfg)
    ts = run["times"]
    n_w = run["N"][0]
    d = cfg["noise"]["d"]
    good, rej, tot = _valid(records, "main")
    cents = {t: _centering(cfg, records, t) for t in C.campaign_times(cfg)}
    x = np.column_stack([_scaled(cfg, good, t, n_w, cents[t][0]) for t in ts])
    m = len(ts)
    cov, cov_se = np.zeros((m, m)), np.zeros((m, m))
    reports = {}
    for i in range(m):
        for j in range(i, m):
            b, bse, tail = _b_limit(cfg, good, ts[i], ts[j], model, max(ts))
            cov[i, j] = cov[j, i] = b
            cov_se[i, j] = cov_se[j, i] = bse
            bn, bnse = estimate_b(x[:, i], x[:, j])
            reports[f"covariance_{i}{j}.json"] = CovarianceReport(ts[i], ts[j], C.make_observable(cfg).label, n_w,
                                                                  bn, bnse, b, bse, tail)
    analytic = all(c[2] == "analytic" for c in cents.values())
    spec = GaussianLimitSpec(tuple(ts), cov, cov_se)
    verdicts = [fclt_check(x, spec, level=run["level"], mean=0.0 if analytic else None)]
    # moment modulus, k-th moments of unscaled increments
    k = run["k"]
    base = ts[0]

    def incr(nw, gap):
        a = np.array([r[f"mean@{_key(base, nw)}"] for r in good]) - cents[base][0]
        b = np.array([r[f"mean@{_key(base + gap, nw)}"] for r in good]) - cents[base + gap][0]
        v = np.abs(b - a) ** k
        return v.mean(), v.std(ddof=1) / math.sqrt(len(v))

    gm = [incr(n_w, gp) for gp in run["gaps"]]
    nm = [incr(nw, run["holder_gap"]) for nw in run["holder_N"]]
    verdicts.append(holder_moment_check(run["gaps"], [a for a, _ in gm], [b for _, b in gm],
                                        run["holder_N"], [a for a, _ in nm], [b for _, b in nm],
                                        k=k, gamma_delta=run["gamma_delta"], d=d))
    verdicts.append(_budget_verdict(cfg, rej, tot))
    var_rows = [(t, float(np.var(x[:, i], ddof=1)), float(estimate_b(x[:, i])[1])) for i, t in enumerate(ts)]
    agg = {"b_limit": cov, "b_limit_se": cov_se, "holder_gap_moments": gm, "holder_n_moments": nm}
    csvs = {"variance.csv": (("t", "variance", "se"), var_rows),
            "holder.csv": (("kind", "x", "moment", "se"),
                           [("gap", g, a, b) for g, (a, b) in zip(run["gaps"], gm)] +
                           [("N", nw, a, b) for nw, (a, b) in zip(run["holder_N"], nm)])}
    return agg, verdicts, csvs, reports


# ---------------------------------------------------------------------------
# rate


def _n_length(cfg, n_w, t):
    return n_w + 12 * math.sqrt(t)


def run_rate(cfg, workers):
    run = cfg["run"]
    t = run["times"][0]
    cent = _run_centering(cfg, [t], workers)
    recs = []
    for n_w in run["N"]:
        r, _, _ = _run_jobs(cfg, _n_length(cfg, n_w, t), f"noise:N{n_w:g}", cfg["harness"]["replicas"],
                            workers, f"N{n_w:g}", times=[t], windows=[n_w])
        recs += r
    return cent + recs


def aggregate_rate(cfg, records):
    run = cfg["run"]
    t = run["times"][0]
    centering, _, source = _centering(cfg, records, t)
    fixed = 0.0 if source == "analytic" else None
    dists, rows, ks, rejected, total = [], [], {}, 0, 0
    for n_w in run["N"]:
        good, rej, tot = _valid(records, f"N{n_w:g}")
        rejected += rej
        total += tot
        x = _scaled(cfg, good, t, n_w, centering)
        de = distance_to_gaussian(x, mean=fixed)
        dists.append(de)
        rows.append((n_w, de.value, de.se))
        v = normality_test(x, level=run["level"], mean=fixed)
        ks[f"N={n_w:g}"] = {"statistic": v.statistic, "p_value": v.p_value}
    fit = rate_fit(run["N"], [d.value for d in dists])
    lo, hi = run["slope_range"]
    ok = lo <= fit.slope <= hi
    verdicts = [TestVerdict("rate slope (TV proxy)", fit.slope, hi, bool(ok), len(run["N"]),
                            details={"slope_range": [lo, hi], "ci95": list(fit.ci), "slope_se": fit.slope_se,
                                     "intercept": fit.intercept, "excluded": fit.excluded, "ks": ks,
                                     "raw": [d.raw for d in dists], "bias": [d.bias for d in dists]}),
                _budget_verdict(cfg, rejected, total)]
    agg = {"fit": fit.to_dict(), "distances": rows}
    return agg, verdicts, {"rate.csv": (("N", "distance", "se"), rows)}


# ---------------------------------------------------------------------------
# lower bound


def run_lower_bound(cfg, workers):
    run = cfg["run"]
    t = run["times"][0]
    recs, _, _ = _run_jobs(cfg, None, "noise", cfg["harness"]["replicas"], workers, "main",
                           times=[t], windows=list(run["N"]))
    return recs


def _bound(cfg, n_w, t):
    run = cfg["run"]
    return variance_lower_bound(C.make_noise(cfg), C.make_sigma(cfg), n_w, t, run["condition"], C=run["C"],
                                delta=run["delta"], R=run["R"])


def aggregate_lower_bound(cfg, records):
    run = cfg["run"]
    t = run["times"][0]
    good, rej, tot = _valid(records, "main")
    verdicts, rows = [], []
    all_ok = True
    for n_w in run["N"]:
        x = _scaled(cfg, good, t, n_w, 1.0)
        b, se = estimate_b(x)
        lb = _bound(cfg, n_w, t)
        rows.append((n_w, b, se, lb.value))
        if n_w >= run["nonvacuous_from"]:
            ok = (not lb.vacuous) and b >= lb.value - 3 * se
            all_ok &= ok
    verdicts.append(TestVerdict("empirical B >= bound", min((r[1] - r[3]) / r[2] for r in rows
                                                             if r[0] >= run["nonvacuous_from"]),
                                -3.0, bool(all_ok), len(good),
                                details={"rows": rows, "nonvacuous_from": run["nonvacuous_from"]}))
    seq = []
    for n_w in run["tn_N"]:
        tn = run["tn_scale"] * n_w ** run["tn_exponent"]
        lb = _bound(cfg, n_w, tn)
        val = lb.value / tn if run["condition"] in (1, 2) else lb.value
        seq.append((n_w, tn, val))
    tail = [v for n_w, _, v in seq if n_w >= np.median(run["tn_N"])]
    liminf = min(tail)
    verdicts.append(TestVerdict("t_N sequence liminf", liminf, 0.0, bool(liminf > 0), len(seq),
                                details={"sequence": seq}))
    verdicts.append(_budget_verdict(cfg, rej, tot))
    csvs = {"lower_bound.csv": (("N", "b_n", "se", "bound"), rows),
            "tn_sequence.csv": (("N", "t_N", "bound"), seq)}
    return {"rows": rows, "tn_sequence": seq}, verdicts, csvs


# ---------------------------------------------------------------------------
# malliavin


@dataclass
class DerivJob:
    cfg: dict
    replicas: list


def run_deriv_job(job):
    cfg = job.cfg
    run = cfg["run"]
    grid = C.make_grid(cfg)
    model = C.make_noise(cfg)
    sigma = C.make_sigma(cfg)
    z = grid.n_sites // 2
    ens = Ensemble(grid, model, sigma, cfg["harness"]["seed"], job.replicas, purpose="noise")
    ens.advance_to(run["s"])
    ens.start_tangent(z)
    out = {"replica": list(job.replicas), "cols": {}}
    x = mal.minimal_image(grid, np.arange(grid.n_sites), z)
    for t in [t for t in C.campaign_times(cfg) if t > run["s"]]:
        ens.advance_to(t)
        tau = t - run["s"]
        env = heat_kernel(tau, x) / heat_kernel(tau, 0.0)
        dfield = ens.tangent
        for floor in (1e-2, 1e-4, 1e-6):
            mask = env >= floor
            out["cols"][f"nonpos@{_key(t)},floor={floor:g}"] = (dfield[:, mask] <= 0).sum(axis=1)
            out["cols"][f"sites@{_key(t)},floor={floor:g}"] = np.full(len(job.replicas), int(mask.sum()))
        ratio_sites = [0, 4, 8, 16]
        p = heat_kernel(tau, x[[(z + o) % grid.n_sites for o in ratio_sites]])
        for j, o in enumerate(ratio_sites):
            out["cols"][f"ratio@{_key(t)},dx={o}"] = dfield[:, (z + o) % grid.n_sites] / p[j]
    out["aborted"] = ens.aborted.copy()
    return out


def run_malliavin(cfg, workers):
    batch = cfg["harness"]["batch"]
    jobs = [DerivJob(cfg, reps) for reps in _batches(cfg["harness"]["replicas"], batch)]
    results = _pmap(run_deriv_job, jobs, workers)
    records = []
    base = cfg["harness"]["seed"]
    for res in results:
        batch_recs = []
        for i, r in enumerate(res["replica"]):
            rec = {"set": "main", "replica": r, "seed_key": stream_key_hex(base, r, "noise"),
                   "aborted": int(res["aborted"][i]), "violations": 0}
            for k, v in res["cols"].items():
                rec[k] = float(v[i])
            batch_recs.append(rec)
        _emit(batch_recs)
        records += batch_recs
    return records


def _malliavin_extras(cfg):
    """Deterministic checks that do not produce per-replica records."""
    run = cfg["run"]
    grid = C.make_grid(cfg)
    model = C.make_noise(cfg)
    seed = cfg["harness"]["seed"]
    s, t = run["s"], run["t"]
    z = grid.n_sites // 2
    # constant sigma: the derivative is the deterministic heat profile
    s0 = cfg["sigma"]["sigma0"]
    const = DiffusionSpec.constant(s0)
    traj = simulate(grid, model, const, t, [s, t], store_noise=True, seed=(seed, 0))
    frames = mal.simulate_derivative(traj, s, z, t, const)
    x = mal.minimal_image(grid, np.arange(grid.n_sites), z)
    dev = float(np.max(np.abs(frames[-1].values - s0 * heat_kernel(t - s, x))))
    # Clark-Ocone from a PAM base path
    sigma = C.make_sigma(cfg)
    base = simulate(grid, model, sigma, s, [s], seed=(seed, 0))
    u_s = np.array(base.frames[-1].values)
    co = mal.clark_ocone_check(u_s, grid, model, sigma, s, z, t, z, run["n_continuations"], seed,
                               tag="near", batch=cfg["harness"]["batch"])
    far = int(round(6 * math.sqrt(t - s) / grid.dx))
    co_far = mal.clark_ocone_check(u_s, grid, model, sigma, s, z, t, (z + far) % grid.n_sites, 100, seed,
                                   tag="far", batch=cfg["harness"]["batch"])
    return {"constant_deviation": dev, "clark_ocone": co.to_dict(), "clark_ocone_far": co_far.to_dict()}


def aggregate_malliavin(cfg, records, extras):
    run = cfg["run"]
    model = C.make_noise(cfg)
    sigma = C.make_sigma(cfg)
    good, rej, tot = _valid(records, "main")
    verdicts = []
    rows = []
    worst = 0.0
    for t in [t for t in C.campaign_times(cfg) if t > run["s"]]:
        for floor in (1e-2, 1e-4, 1e-6):
            nonpos = sum(r[f"nonpos@{_key(t)},floor={floor:g}"] for r in good)
            sites = sum(r[f"sites@{_key(t)},floor={floor:g}"] for r in good)
            frac = nonpos / sites
            rows.append((t, floor, int(nonpos), int(sites), frac))
            if floor == run["envelope_floor"] and t - run["s"] <= 0.5 + 1e-12:
                worst = max(worst, frac)
    verdicts.append(TestVerdict("derivative positivity", worst, run["positivity_max"],
                                bool(worst <= run["positivity_max"]), len(good),
                                details={"envelope_floor": run["envelope_floor"], "rows": rows}))
    # envelope: ||D(t, x)||_4 / p_{t-s}(x - z) against C_{t,4,eps,sigma} at each (x, t)
    ratios, margins = {}, {}
    eps = run["envelope_eps"]
    for t in [t for t in C.campaign_times(cfg) if t > run["s"]]:
        log_c = mal.log_constant_c_tke(t, 4, eps, sigma, model)
        for o in (0, 4, 8, 16):
            v = np.array([r[f"ratio@{_key(t)},dx={o}"] for r in good])
            key = f"{_key(t)},dx={o}"
            ratios[key] = float(np.mean(v ** 4) ** 0.25)
            margins[key] = log_c - math.log(ratios[key])
    worst = min(margins.values())
    verdicts.append(TestVerdict("derivative moment envelope", worst, 0.0, bool(worst >= 0), len(good),
                                details={"ratios": ratios, "log_margin": margins, "eps": eps}))
    dev = extras["constant_deviation"]
    verdicts.append(TestVerdict("constant-sigma derivative", dev, 1e-8, bool(dev <= 1e-8), 1))
    co = extras["clark_ocone"]
    verdicts.append(TestVerdict("Clark-Ocone", co["relative_error"], run["co_tol"],
                                bool(co["relative_error"] < run["co_tol"]), co["n_continuations"], details=co))
    far = extras["clark_ocone_far"]
    far_ok = abs(far["estimate"]) < 1e-6 and abs(far["target"]) < 1e-6
    verdicts.append(TestVerdict("Clark-Ocone far site", max(abs(far["estimate"]), abs(far["target"])), 1e-6,
                                bool(far_ok), far["n_continuations"], details=far))
    verdicts.append(_budget_verdict(cfg, rej, tot))
    agg = {"positivity": rows, "envelope_ratios": ratios, **extras}
    csvs = {"positivity.csv": (("t", "floor", "nonpositive", "sites", "fraction"), rows)}
    return agg, verdicts, csvs


# ---------------------------------------------------------------------------
# association


def _assoc_sites(cfg, grid):
    step = grid.window_sites(cfg["run"]["spacing"])
    c = grid.n_sites // 2
    return [((c + i * step) % grid.n_sites,) if grid.d == 1 else ((c + i * step) % grid.n_sites, c)
            for i in range(4)]


def _assoc_pairs(sites):
    p = [MonotoneFunctional("projection", (s,)) for s in sites]
    mn12 = MonotoneFunctional("min", (sites[1], sites[2]))
    mx13 = MonotoneFunctional("max", (sites[1], sites[3]))
    mn_all = MonotoneFunctional("min", tuple(sites))
    mx_all = MonotoneFunctional("max", tuple(sites))
    bump = MonotoneFunctional("bump", tuple(sites), center=1.0, scale=0.5)
    return [(p[0], p[0]), (p[0], p[1]), (p[0], mn12), (p[0], mx13), (mn12, mx13), (bump, p[3]),
            (mn_all, mx_all)]


def run_associate(cfg, workers):
    t = cfg["run"]["times"][0]
    grid = C.make_grid(cfg)
    sites = [s for s in _assoc_sites(cfg, grid)]
    recs = []
    for label, sg in (("pam", {"kind": "linear", "sigma0": 1.0, "a": 0.0, "b": 1.0}),
                      ("constant", {"kind": "constant", "sigma0": cfg["sigma"]["sigma0"], "a": 0.0, "b": 0.0})):
        r, _, _ = _run_jobs(cfg, None, f"noise:{label}", cfg["harness"]["replicas"], workers, label,
                            times=[t], sigma=sg, sites=sites, site_times=[t])
        recs += r
    return recs


def aggregate_associate(cfg, records):
    run = cfg["run"]
    t = run["times"][0]
    grid = C.make_grid(cfg)
    model = C.make_noise(cfg)
    sites = _assoc_sites(cfg, grid)
    pairs = _assoc_pairs(sites)
    verdicts, agg, rejected, total = [], {}, 0, 0
    for label in ("pam", "constant"):
        good, rej, tot = _valid(records, label)
        rejected += rej
        total += tot
        fields = np.zeros((len(good),) + grid.shape)
        for j, s in enumerate(sites):
            fields[(slice(None),) + tuple(s)] = [r[f"u@{_key(t)},x{j}"] for r in good]
        v = association_check(fields, pairs)
        v.name = f"association ({label})"
        verdicts.append(v)
        agg[label] = v.details["pairs"]
        if label == "constant":
            s0 = cfg["sigma"]["sigma0"]
            rows = []
            ok = True
            for h1, h2 in pairs:
                union = sorted(set(h1.sites) | set(h2.sites))
                cov = np.empty((len(union), len(union)))
                for a, sa in enumerate(union):
                    for b, sb in enumerate(union):
                        lag = (np.array(sa) - np.array(sb)) * grid.dx
                        cov[a, b] = gaussian_oracle_covariance(model, s0, t, lag)
                oracle, ose = gaussian_pair_oracle(cov, h1, h2, n=run["oracle_draws"])
                emp, ese = pair_covariance(fields, h1, h2)
                z = abs(emp - oracle) / math.hypot(ese, ose)
                ok &= z <= 3.0
                rows.append({"h1": h1.label, "h2": h2.label, "cov": emp, "se": ese, "oracle": oracle,
                             "oracle_se": ose, "z": z})
            verdicts.append(TestVerdict("association vs Gaussian oracle", max(r["z"] for r in rows), 3.0, bool(ok),
                                        len(good), details={"pairs": rows}))
            agg["oracle"] = rows
    verdicts.append(_budget_verdict(cfg, rejected, total))
    csv_rows = [(lab, r["h1"], r["h2"], r["cov"], r["se"]) for lab in ("pam", "constant") for r in agg[lab]]
    return agg, verdicts, {"association.csv": (("sigma", "h1", "h2", "cov", "se"), csv_rows)}


# ---------------------------------------------------------------------------
# time-dependent CLT


def run_tn_clt(cfg, workers):
    recs = []
    for n_w in cfg["run"]["N"]:
        tn = C.tn_time(cfg, n_w)
        r, _, _ = _run_jobs(cfg, _n_length(cfg, n_w, tn), f"noise:N{n_w:g}", cfg["harness"]["replicas"],
                            workers, f"N{n_w:g}", times=[tn], windows=[n_w])
        recs += r
    return recs


def aggregate_tn_clt(cfg, records):
    run = cfg["run"]
    verdicts, dists, ns, rows, rejected, total = [], [], [], [], 0, 0
    for n_w in run["N"]:
        tn = C.tn_time(cfg, n_w)
        good, rej, tot = _valid(records, f"N{n_w:g}")
        rejected += rej
        total += tot
        x = _scaled(cfg, good, tn, n_w, 1.0)
        v = normality_test(x, level=run["level"], mean=0.0, name=f"KS N={n_w:g} t_N={tn:g}")
        de = distance_to_gaussian(x, mean=0.0)
        verdicts.append(v)
        dists.append(de)
        ns.append(n_w)
        rows.append((n_w, de.value, de.se))
    exploratory = bool(run["exploratory"]) or run["tn_log"] == "linear"
    per_n = list(verdicts)
    for v in per_n:
        v.status = "exploratory" if exploratory or v is not per_n[-1] else v.status
    verdicts.append(tn_clt_check(ns, per_n, dists, exploratory=exploratory))
    verdicts.append(_budget_verdict(cfg, rejected, total))
    return {"distances": rows}, verdicts, {"tn_clt.csv": (("N", "distance", "se"), rows)}


# ---------------------------------------------------------------------------
# dalang and constants (no simulation)


def run_dalang(cfg):
    model = C.make_noise(cfg)
    rows, verdicts = [], []
    consistent = True
    for a in cfg["run"]["alphas"]:
        res = dalang_integral(model, a)
        rows.append((a, res.value, res.status, res.abserr))
        if res.status == "undetermined":
            consistent = False
        if model.kind == "dirac":
            expect_finite = 2 * (1 - a) > model.d
            consistent &= res.finite == expect_finite
    verdicts.append(TestVerdict("dalang integral", float(len(rows)), 0.0, bool(consistent), len(rows),
                                details={"rows": rows}))
    return {"rows": rows}, verdicts, {"dalang.csv": (("alpha", "value", "status", "abserr"), rows)}


def run_constants(cfg, workers):
    run = cfg["run"]
    model = C.make_noise(cfg)
    sigma = C.make_sigma(cfg)
    rows, verdicts = [], []
    for t in run["times"]:
        for k in run["k"]:
            for e in run["eps"]:
                rep = mal.constants_report(t, k, e, sigma, model)
                rows.append(rep.to_dict())
    ok = all(not isinstance(r["log_c_star"], str) and r["c_star"] != 0 for r in rows)
    verdicts.append(TestVerdict("constants finite and positive", float(len(rows)), 0.0, bool(ok), len(rows)))
    mono = True
    for k in run["k"]:
        for e in run["eps"]:
            seq = [mal.log_constant_c_tke(t, k, e, sigma, model) for t in sorted(run["times"])]
            mono &= all(b > a for a, b in zip(seq, seq[1:])) if math.isfinite(seq[0]) else True
    verdicts.append(TestVerdict("C increasing in t", float(mono), 1.0, bool(mono), len(rows)))
    if model.kind == "dirac" and model.d == 1:
        # closed form Lambda(y) = 1 / (2 y^2) for white noise
        worst = 0.0
        for t in run["times"]:
            for k in run["k"]:
                for e in run["eps"]:
                    y = (1 - e) ** 2 / (2 ** 3.5 * k)
                    hand = math.log(16) - 2 * math.log(e) + 3 * t / (2 * y * y)
                    got = mal.log_constant_c_star(t, k, e, model)
                    worst = max(worst, abs(got - hand) / abs(hand))
                    m = max(abs(sigma.sigma_at_zero), sigma.lip)
                    if m > 0:
                        ya = (1 - e) ** 2 / (2 ** 3.5 * m * m * k)
                        hand = math.log(8 * m) + 2 * t / (2 * ya * ya) - 1.5 * math.log(e)
                        got = mal.log_constant_c_tke(t, k, e, sigma, model)
                        worst = max(worst, abs(got - hand) / abs(hand))
        verdicts.append(TestVerdict("closed-form Lambda agreement", worst, 1e-10, bool(worst <= 1e-10), len(rows)))
    bound_rows = [(n_w, mal.rate_bound_eval(run["times"][0], n_w, 1.0, run["L"], run["lam"], d=model.d))
                  for n_w in (32, 64, 128, 256, 512)]
    return {"rows": rows, "rate_bound": bound_rows}, verdicts, {
        "constants.csv": (tuple(rows[0].keys()), [tuple(r.values()) for r in rows]),
        "rate_bound.csv": (("N", "rate_bound"), bound_rows)}


# ---------------------------------------------------------------------------


def aggregate(cfg, records, extras=None):
    """Aggregates and verdicts from per-replica records (pure).

    A campaign too small for its statistics yields one ``inconclusive``
    verdict carrying the reason, plus the failure-budget verdict.
    """
    try:
        return _aggregate(cfg, records, extras)
    except ValueError as exc:
        n = sum(1 for r in records if int(r["aborted"]) < 0 and int(r["violations"]) == 0)
        rejected = len(records) - n
        v = TestVerdict(cfg["campaign"]["kind"], float("nan"), float("nan"), False, n, status="inconclusive",
                        details={"reason": str(exc)})
        return {"reason": str(exc)}, [v, _budget_verdict(cfg, rejected, len(records))], {}, {}


def _aggregate(cfg, records, extras=None):
    kind = cfg["campaign"]["kind"]
    reports = {}
    if kind == "validate":
        agg, verdicts, csvs = aggregate_validate(cfg, records)
    elif kind in ("clt", "kpz"):
        agg, verdicts, csvs, reports = aggregate_clt(cfg, records)
    elif kind == "fclt":
        agg, verdicts, csvs, reports = aggregate_fclt(cfg, records)
    elif kind == "rate":
        agg, verdicts, csvs = aggregate_rate(cfg, records)
    elif kind == "lower-bound":
        agg, verdicts, csvs = aggregate_lower_bound(cfg, records)
    elif kind == "malliavin":
        agg, verdicts, csvs = aggregate_malliavin(cfg, records, extras)
    elif kind == "associate":
        agg, verdicts, csvs = aggregate_associate(cfg, records)
    elif kind == "tn-clt":
        agg, verdicts, csvs = aggregate_tn_clt(cfg, records)
    else:
        raise ValueError(f"campaign {kind} has no per-replica aggregation")
    return agg, verdicts, csvs, reports


def run_campaign(cfg, workers=None, sink=None):
    """Validate ``cfg`` and run its campaign.

    Parameters
    ----------
    cfg : dict
        Full configuration (see :func:`shelab.harness.config.build_config`).
    workers : int, optional
        Process count; defaults to ``harness.workers``.  Never changes results.
    sink : callable, optional
        Called with each finished batch of per-replica records.

    Returns
    -------
    CampaignResult
    """
    global _sink
    C.check(cfg)
    _sink = sink
    try:
        return _run_campaign(cfg, workers)
    finally:
        _sink = None


def _run_campaign(cfg, workers):
    kind = cfg["campaign"]["kind"]
    workers = cfg["harness"]["workers"] if workers is None else workers
    t0 = time.perf_counter()
    extras = None
    curves = {}
    records = []
    reports = {}
    if kind == "dalang":
        agg, verdicts, csvs = run_dalang(cfg)
    elif kind == "constants":
        agg, verdicts, csvs = run_constants(cfg, workers)
    else:
        if kind == "validate":
            records = run_validate(cfg, workers)
        elif kind in ("clt", "kpz"):
            records, curves = run_clt(cfg, workers)
        elif kind == "fclt":
            records, curves = run_fclt(cfg, workers)
        elif kind == "rate":
            records = run_rate(cfg, workers)
        elif kind == "lower-bound":
            records = run_lower_bound(cfg, workers)
        elif kind == "malliavin":
            records = run_malliavin(cfg, workers)
            extras = _malliavin_extras(cfg)
        elif kind == "associate":
            records = run_associate(cfg, workers)
        elif kind == "tn-clt":
            records = run_tn_clt(cfg, workers)
        agg, verdicts, csvs, reports = aggregate(cfg, records, extras)
    for (t1, t2), entry in curves.items():
        keys = [r["replica"] for r in records if r["set"] == "main"
                and int(r["aborted"]) < 0 and int(r["violations"]) == 0]
        rows, abs_int = _curve_csv(entry, keys, cfg["grid"]["dx"], cfg["noise"]["d"])
        name = "lag_covariance.csv" if t1 == t2 and len(curves) == 1 else f"lag_covariance_{t1:g}_{t2:g}.csv"
        csvs[name] = (("lag", "cov", "se"), rows)
        agg.setdefault("lag_curves", {})[f"{t1:g},{t2:g}"] = {"abs_integral": abs_int}
    if extras is not None:
        agg["extras"] = extras
    wall = time.perf_counter() - t0
    metrics = {"wall_seconds": wall, "replicas": len(records),
               "replicas_per_second": len(records) / wall if wall > 0 else float("nan"), "workers": workers}
    return CampaignResult(kind, cfg, C.digest(cfg), records, agg, verdicts, csvs, reports, metrics)
