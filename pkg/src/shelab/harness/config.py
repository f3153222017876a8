"""Experiment configuration: TOML files, defaults per campaign, validation and digest."""

import copy
import hashlib
import json
import math
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from ..errors import ConfigError
from ..grid import fit_time_step, grid_for
from ..noise import KINDS as NOISE_KINDS
from ..noise import NoiseModel
from ..observables import ObservableSpec
from ..solver import DiffusionSpec

CAMPAIGNS = ("validate", "clt", "kpz", "fclt", "rate", "lower-bound", "malliavin",
             "associate", "tn-clt", "dalang", "constants")

# keys that never change results; left out of the digest
_NON_RESULT_KEYS = {("harness", "workers"), ("harness", "out")}

BASE = {
    "campaign": {"kind": "clt"},
    "noise": {"kind": "dirac", "d": 1, "bandwidth": 1.0, "rate": 1.0},
    "sigma": {"kind": "linear", "sigma0": 1.0, "a": 0.0, "b": 1.0},
    "observable": {"kind": "identity", "alpha": 2.0},
    "grid": {"dx": 0.125, "dt": "auto", "length": "auto"},
    "run": {"times": [0.5], "N": [512], "level": 0.01, "max_lag": "auto"},
    "harness": {"seed": 20261016, "replicas": 2000, "workers": 1, "out": "runs",
                "batch": 250, "failure_budget": 0.001, "store_noise": False},
}

# campaign defaults mirror the reference experiments
DEFAULTS = {
    "validate": {"grid": {"dx": 1 / 32, "length": 16.0},
                 "run": {"times": [0.25, 0.5, 1.0], "gaussian_t": 0.5, "lags": [0.0, 0.25, 0.5, 1.0],
                         "N": [], "moment_tol": 0.05},
                 "harness": {"replicas": 5000}},
    "clt": {},
    "kpz": {"observable": {"kind": "log"}},
    "fclt": {"run": {"times": [0.3, 0.6], "N": [256], "holder_N": [32, 64, 128, 256],
                     "gaps": [0.0125, 0.025, 0.05, 0.1, 0.2], "holder_gap": 0.1,
                     "gamma_delta": 0.45, "k": 2}},
    "rate": {"run": {"times": [4.0], "N": [32, 64, 128, 256, 512],
                     "slope_range": [-0.7, -0.3]}},
    "lower-bound": {"run": {"times": [0.5], "N": [16, 32, 64, 128, 256, 512], "delta": 0.1, "R": 1.0,
                            "condition": 3, "C": None, "nonvacuous_from": 64,
                            "tn_exponent": 1.0, "tn_scale": 1.0,
                            "tn_N": [16, 32, 64, 128, 256, 512]}},
    "malliavin": {"grid": {"dx": 1 / 32, "length": 16.0},
                  "run": {"times": [0.2, 0.35, 0.6], "s": 0.1, "t": 0.5, "n_continuations": 2000,
                          "co_tol": 0.05, "positivity_max": 1e-3, "envelope_floor": 1e-4,
                          "envelope_eps": 0.5, "N": []},
                  "harness": {"replicas": 500, "store_noise": True}},
    "associate": {"grid": {"dx": 1 / 32, "length": 16.0},
                  "run": {"times": [0.5], "N": [], "spacing": 0.25, "oracle_draws": 400000}},
    "tn-clt": {"run": {"N": [64, 128, 256, 512], "tn_c": 0.2, "tn_log": "log2", "times": [],
                       "exploratory": False}},
    "dalang": {"noise": {"kind": "dirac"},
               "run": {"alphas": [0.0, 0.25, 0.45, 0.5, 0.75, 1.0], "times": [], "N": []},
               "harness": {"replicas": 0}},
    "constants": {"run": {"times": [0.5, 1.0, 2.0], "k": [4, 8], "eps": [0.25, 0.5, 0.75], "N": [],
                          "L": 1.0, "lam": 0.0},
                  "harness": {"replicas": 0}},
}


def _merge(dst, src):
    for k, v in src.items():
        if isinstance(v, dict) and isinstance(dst.get(k), dict):
            _merge(dst[k], v)
        else:
            dst[k] = copy.deepcopy(v)
    return dst


def default_config(kind):
    if kind not in CAMPAIGNS:
        raise ConfigError([f"unknown campaign {kind!r}; expected one of {', '.join(CAMPAIGNS)}"])
    cfg = copy.deepcopy(BASE)
    _merge(cfg, DEFAULTS[kind])
    cfg["campaign"]["kind"] = kind
    return cfg


def load_toml(path):
    with open(path, "rb") as fh:
        return tomllib.load(fh)


def parse_override(text):
    """``section.key=value`` with the value read as TOML (bare words as strings)."""
    if "=" not in text or "." not in text.split("=", 1)[0]:
        raise ConfigError([f"override {text!r} must look like section.key=value"])
    key, raw = text.split("=", 1)
    section, name = key.strip().split(".", 1)
    try:
        value = tomllib.loads(f"v = {raw.strip()}")["v"]
    except tomllib.TOMLDecodeError:
        value = raw.strip()
    return section, name, value


def build_config(kind, file_cfg=None, overrides=()):
    cfg = default_config(kind)
    if file_cfg:
        file_kind = file_cfg.get("campaign", {}).get("kind", kind)
        if file_kind != kind:
            raise ConfigError([f"config file is for campaign {file_kind!r}, not {kind!r}"])
        _merge(cfg, file_cfg)
    for section, name, value in overrides:
        cfg.setdefault(section, {})[name] = value
    return cfg


def _num(errors, where, value, positive=False, allow_none=False):
    if value is None and allow_none:
        return
    if isinstance(value, bool) or not isinstance(value, (int, float)) or not math.isfinite(value):
        errors.append(f"{where} must be a number, got {value!r}")
    elif positive and not value > 0:
        errors.append(f"{where} must be positive, got {value!r}")


def validate_config(cfg):
    """Return the list of every problem in ``cfg`` (empty when valid)."""
    errors = []
    kind = cfg.get("campaign", {}).get("kind")
    if kind not in CAMPAIGNS:
        errors.append(f"campaign.kind must be one of {CAMPAIGNS}, got {kind!r}")
    for section in BASE:
        if not isinstance(cfg.get(section), dict):
            errors.append(f"missing section [{section}]")
    if errors:
        return errors
    known = {s: set(BASE[s]) for s in BASE}
    for k in DEFAULTS.values():
        for s, body in k.items():
            known.setdefault(s, set()).update(body)
    for s, body in cfg.items():
        if s not in known:
            errors.append(f"unknown section [{s}]")
            continue
        for key in body:
            if key not in known[s]:
                errors.append(f"unknown key {s}.{key}")

    nz = cfg["noise"]
    if nz.get("kind") not in NOISE_KINDS:
        errors.append(f"noise.kind must be one of {NOISE_KINDS}, got {nz.get('kind')!r}")
    if nz.get("d") not in (1, 2):
        errors.append(f"noise.d must be 1 or 2, got {nz.get('d')!r}")
    elif nz.get("kind") == "dirac" and nz.get("d") != 1:
        errors.append("noise.kind = 'dirac' requires noise.d = 1")
    _num(errors, "noise.bandwidth", nz.get("bandwidth"), positive=True)
    _num(errors, "noise.rate", nz.get("rate"), positive=True)

    sg = cfg["sigma"]
    if sg.get("kind") not in ("constant", "linear", "affine"):
        errors.append(f"sigma.kind must be constant, linear or affine, got {sg.get('kind')!r}")
    for key in ("sigma0", "a", "b"):
        _num(errors, f"sigma.{key}", sg.get(key))
    if not errors:
        sigma = make_sigma(cfg)
        if kind not in ("dalang",) and sigma.sigma_at_one == 0:
            errors.append("sigma(1) must be nonzero")

    ob = cfg["observable"]
    if ob.get("kind") not in ("identity", "log", "power"):
        errors.append(f"observable.kind must be identity, log or power, got {ob.get('kind')!r}")
    if ob.get("kind") == "power":
        _num(errors, "observable.alpha", ob.get("alpha"))
        if ob.get("alpha") == 0:
            errors.append("observable.alpha must be nonzero")

    gr = cfg["grid"]
    _num(errors, "grid.dx", gr.get("dx"), positive=True)
    if gr.get("dt") != "auto":
        _num(errors, "grid.dt", gr.get("dt"), positive=True)
    if gr.get("length") != "auto":
        _num(errors, "grid.length", gr.get("length"), positive=True)

    run = cfg["run"]
    times = run.get("times", [])
    if not isinstance(times, list) or any(isinstance(t, bool) or not isinstance(t, (int, float)) or t < 0
                                          for t in times):
        errors.append(f"run.times must be a list of nonnegative numbers, got {times!r}")
    ns = run.get("N", [])
    if not isinstance(ns, list) or any(isinstance(n, bool) or not isinstance(n, (int, float)) or n <= 0
                                       for n in ns):
        errors.append(f"run.N must be a list of positive numbers, got {ns!r}")
    _num(errors, "run.level", run.get("level"), positive=True)
    if isinstance(run.get("level"), (int, float)) and not run.get("level") < 1:
        errors.append("run.level must be below 1")
    if run.get("max_lag") != "auto":
        _num(errors, "run.max_lag", run.get("max_lag"), positive=True)

    hz = cfg["harness"]
    seed = hz.get("seed")
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2 ** 64:
        errors.append(f"harness.seed must be an integer in [0, 2^64), got {seed!r}")
    for key in ("replicas", "workers", "batch"):
        v = hz.get(key)
        if isinstance(v, bool) or not isinstance(v, int) or v < (0 if key == "replicas" else 1):
            errors.append(f"harness.{key} must be a {'nonnegative' if key == 'replicas' else 'positive'} integer, got {v!r}")
    _num(errors, "harness.failure_budget", hz.get("failure_budget"))
    if not isinstance(hz.get("store_noise"), bool):
        errors.append("harness.store_noise must be true or false")
    if kind == "malliavin" and hz.get("store_noise") is False:
        errors.append("the malliavin campaign needs harness.store_noise = true")

    errors += _campaign_checks(kind, cfg)
    if not errors and kind not in ("dalang", "constants"):
        errors += _grid_checks(cfg)
    return errors


def _campaign_checks(kind, cfg):
    errors = []
    run, hz = cfg["run"], cfg["harness"]
    reps = hz.get("replicas", 0)
    need_times = {"validate": 1, "clt": 1, "kpz": 1, "fclt": 2, "rate": 1, "lower-bound": 1,
                  "malliavin": 1, "associate": 1}
    if kind in need_times and len(run.get("times", [])) < need_times[kind]:
        errors.append(f"campaign {kind} needs at least {need_times[kind]} value(s) in run.times")
    if kind in ("clt", "kpz", "fclt", "rate", "lower-bound", "tn-clt") and not run.get("N"):
        errors.append(f"campaign {kind} needs run.N")
    if kind not in ("dalang", "constants") and isinstance(reps, int) and reps < 1:
        errors.append(f"campaign {kind} needs at least one replica")
    if kind == "kpz" and cfg["observable"].get("kind") == "identity":
        errors.append("the kpz campaign studies log u; set observable.kind = 'log'")
    if kind in ("kpz", "malliavin") and cfg["sigma"].get("kind") != "linear":
        errors.append(f"campaign {kind} is defined for sigma.kind = 'linear'")
    if kind in ("lower-bound", "tn-clt") and cfg["observable"].get("kind") != "identity":
        errors.append(f"campaign {kind} applies to observable.kind = 'identity'")
    if kind == "fclt":
        if len(run.get("times", [])) > 5:
            errors.append("fclt supports at most 5 times")
        gaps = run.get("gaps", [])
        if gaps and max(gaps) / min(gaps) < 10 - 1e-9:
            errors.append("run.gaps must span a decade")
    if kind == "rate":
        ns = run.get("N", [])
        if len(set(ns)) < 4 or (ns and max(ns) / min(ns) < 10):
            errors.append("rate needs >= 4 distinct N spanning a decade")
    if kind == "lower-bound":
        cond = run.get("condition")
        if cond not in (1, 2, 3):
            errors.append(f"run.condition must be 1, 2 or 3, got {cond!r}")
        elif cond == 3:
            _num(errors, "run.delta", run.get("delta"), positive=True)
            _num(errors, "run.R", run.get("R"), positive=True)
            ts = run.get("times", [])
            if ts and isinstance(run.get("delta"), (int, float)) and run["delta"] > min(ts):
                errors.append("run.delta must not exceed the smallest time")
        else:
            _num(errors, "run.C", run.get("C"), positive=True)
    if kind == "malliavin":
        s, t = run.get("s"), run.get("t")
        _num(errors, "run.s", s, positive=True)
        _num(errors, "run.t", t, positive=True)
        if isinstance(s, (int, float)) and isinstance(t, (int, float)) and not s < t:
            errors.append("run.s must be smaller than run.t")
        nc = run.get("n_continuations")
        if not isinstance(nc, int) or nc < 100:
            errors.append("run.n_continuations must be an integer >= 100")
        if cfg["noise"].get("d") != 1:
            errors.append("the malliavin campaign is implemented for d = 1")
    if kind == "associate" and cfg["sigma"].get("kind") not in ("linear", "constant"):
        errors.append("association is checked for sigma.kind = 'linear' or 'constant'")
    if kind == "tn-clt":
        _num(errors, "run.tn_c", run.get("tn_c"), positive=True)
        if run.get("tn_log") not in ("log", "log2", "constant", "linear"):
            errors.append("run.tn_log must be log, log2, constant or linear")
    if kind == "constants":
        if any(k < 2 for k in run.get("k", [])):
            errors.append("run.k values must be >= 2")
        if any(not 0 < e < 1 for e in run.get("eps", [])):
            errors.append("run.eps values must lie in (0, 1)")
    return errors


def campaign_times(cfg):
    kind = cfg["campaign"]["kind"]
    run = cfg["run"]
    times = list(run.get("times", []))
    if kind == "validate":
        times = sorted(set(times) | {run["gaussian_t"]})
    if kind == "fclt":
        base = times[0]
        times = sorted(set(times) | {base + g for g in run.get("gaps", [])})
    if kind == "malliavin":
        times = sorted(set(times) | {run["s"], run["t"]})
    if kind == "tn-clt":
        times = sorted({tn_time(cfg, n) for n in run["N"]})
    return times


def tn_time(cfg, n):
    run = cfg["run"]
    c, mode = run["tn_c"], run["tn_log"]
    if mode == "log2":
        raw = c * math.log2(n)
    elif mode == "log":
        raw = c * math.log(n)
    elif mode == "linear":
        raw = c * n
    else:
        raw = c
    # round to a multiple of 1/64 so every schedule time is reachable exactly
    return max(1 / 64, round(raw * 64) / 64)


def make_noise(cfg):
    nz = cfg["noise"]
    return NoiseModel(nz["kind"], nz["d"], float(nz["bandwidth"]), float(nz["rate"]))


def make_sigma(cfg):
    sg = cfg["sigma"]
    if sg["kind"] == "constant":
        return DiffusionSpec.constant(sg["sigma0"])
    if sg["kind"] == "linear":
        return DiffusionSpec.linear()
    return DiffusionSpec.affine(sg["a"], sg["b"])


def make_observable(cfg):
    ob = cfg["observable"]
    if ob["kind"] == "identity":
        return ObservableSpec.identity()
    if ob["kind"] == "log":
        return ObservableSpec.log()
    return ObservableSpec.power(ob["alpha"])


def required_length(cfg):
    """Smallest domain length meeting the margin rule (and any lag needs)."""
    run = cfg["run"]
    times = campaign_times(cfg)
    t_max = max(times) if times else 0.0
    n_max = max(run.get("N", []) or [0])
    need = n_max + 12 * math.sqrt(t_max)
    kind = cfg["campaign"]["kind"]
    if kind == "validate":
        need = max(need, 2 * max(run["lags"]) + 12 * math.sqrt(t_max))
    return need


def dt_default(cfg):
    dx = cfg["grid"]["dx"]
    return dx * dx / 2 if cfg["noise"]["kind"] == "dirac" else 0.01


def make_grid(cfg, length=None):
    gr = cfg["grid"]
    dt_max = dt_default(cfg) if gr["dt"] == "auto" else gr["dt"]
    dt = fit_time_step(dt_max, campaign_times(cfg))
    if length is None:
        length = required_length(cfg) if gr["length"] == "auto" else max(gr["length"], required_length(cfg))
    return grid_for(cfg["noise"]["d"], gr["dx"], length, dt=dt)


def _grid_checks(cfg):
    errors = []
    try:
        grid = make_grid(cfg)
    except ValueError as exc:
        return [f"grid: {exc}"]
    gr = cfg["grid"]
    if gr["length"] != "auto" and gr["length"] < required_length(cfg) - 1e-12:
        errors.append(f"grid.length {gr['length']} violates the margin rule "
                      f"(needs >= {required_length(cfg):.4g} = max N + 12 sqrt(t_max))")
    for n in cfg["run"].get("N", []):
        try:
            grid.window_sites(n)
        except ValueError as exc:
            errors.append(f"run.N: {exc}")
    sites = grid.n_sites ** grid.d
    if sites > 1 << 22:
        errors.append(f"grid has {sites} sites; refusing more than {1 << 22}")
    return errors


def check(cfg):
    errors = validate_config(cfg)
    if errors:
        raise ConfigError(errors)
    return cfg


def canonical(cfg):
    """Canonical JSON of the result-relevant configuration."""
    clean = {s: {k: v for k, v in body.items() if (s, k) not in _NON_RESULT_KEYS}
             for s, body in cfg.items()}
    return json.dumps(clean, sort_keys=True, separators=(",", ":"))


def digest(cfg):
    return hashlib.sha256(canonical(cfg).encode()).hexdigest()
