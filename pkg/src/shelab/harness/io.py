"""Persistence of campaign results.

A run directory holds:

- ``config.json``: canonical configuration and its digest
- ``replicas.partial.csv``: long-format ``set,replica,column,value`` rows, streamed per batch
- ``replicas.csv``: final wide table sorted by (set, replica); the partial file is then removed
- ``aggregates.json`` and ``verdicts.json``: deterministic, no timings
- ``metrics.json``: wall clock and throughput
- ``summary.txt``: the verdict table
- plot-ready CSVs and covariance reports named by the campaign
"""

import csv
import json
import math
from pathlib import Path

import numpy as np

from . import config as C
from .campaigns import aggregate, run_campaign
from ..stats import _jsonable

_INT_COLS = ("replica", "aborted", "violations")
_STR_COLS = ("set", "seed_key")


class RunExists(RuntimeError):
    """The output directory already holds a run and ``force`` was not given."""


def run_dir(cfg):
    """``<harness.out>/<kind>-<digest prefix>``."""
    return Path(cfg["harness"]["out"]) / f"{cfg['campaign']['kind']}-{C.digest(cfg)[:12]}"


def _dump(obj):
    return json.dumps(_jsonable(obj), sort_keys=True, indent=1, allow_nan=True) + "\n"


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _write_csv(path, header, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([_fmt(v) for v in row])


def _prepare(path, cfg, force):
    digest = C.digest(cfg)
    cfg_file = path / "config.json"
    if cfg_file.exists() and not force:
        old = json.loads(cfg_file.read_text()).get("digest")
        what = "this configuration" if old == digest else f"a different configuration ({old[:12]})"
        raise RunExists(f"{path} already holds a run of {what}; pass --force to overwrite")
    path.mkdir(parents=True, exist_ok=True)
    for f in path.iterdir():
        if f.is_file():
            f.unlink()
    cfg_file.write_text(_dump({"config": json.loads(C.canonical(cfg)), "digest": digest}))


class _PartialWriter:
    def __init__(self, path):
        self.fh = open(path, "w", newline="")
        self.w = csv.writer(self.fh)
        self.w.writerow(("set", "replica", "column", "value"))

    def __call__(self, records):
        for rec in records:
            for k, v in rec.items():
                if k not in ("set", "replica"):
                    self.w.writerow((rec["set"], rec["replica"], k, _fmt(v)))
        self.fh.flush()

    def close(self):
        self.fh.close()


def write_replicas(path, records):
    """Wide per-replica table sorted by (set, replica); missing cells stay empty."""
    cols = []
    seen = set()
    for rec in records:
        for k in rec:
            if k not in seen:
                seen.add(k)
                cols.append(k)
    rows = sorted(records, key=lambda r: (r["set"], r["replica"]))
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(cols)
        for rec in rows:
            w.writerow([_fmt(rec[k]) if k in rec else "" for k in cols])


def read_replicas(path):
    """Records from ``replicas.csv`` with their original types."""
    out = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rec = {}
            for k, v in row.items():
                if v == "":
                    continue
                if k in _STR_COLS:
                    rec[k] = v
                elif k in _INT_COLS:
                    rec[k] = int(v)
                else:
                    rec[k] = float(v)
            out.append(rec)
    return out


def summary_table(result):
    lines = [f"campaign {result.kind}  digest {result.digest[:12]}  replicas {len(result.records)}", ""]
    width = max([len(v.name) for v in result.verdicts] + [7])
    lines.append(f"{'verdict':<{width}}  {'status':<12}  {'statistic':>12}  {'threshold':>12}  {'p':>8}  n")
    for v in result.verdicts:
        p = "" if v.p_value is None else f"{v.p_value:.4f}"
        lines.append(f"{v.name:<{width}}  {v.status:<12}  {_num(v.statistic):>12}  {_num(v.threshold):>12}  "
                     f"{p:>8}  {v.n}")
    m = result.metrics
    lines += ["", f"wall {m.get('wall_seconds', float('nan')):.1f} s, "
                  f"{m.get('replicas_per_second', float('nan')):.2f} replicas/s, workers {m.get('workers')}"]
    return "\n".join(lines) + "\n"


def _num(x):
    try:
        x = float(x)
    except (TypeError, ValueError):
        return str(x)
    if math.isnan(x):
        return "nan"
    return f"{x:.5g}"


def execute(cfg, force=False, workers=None):
    """Run a campaign and persist it; returns ``(result, directory)``.

    Raises
    ------
    RunExists
        If the run directory is occupied and ``force`` is false.
    """
    C.check(cfg)
    path = run_dir(cfg)
    _prepare(path, cfg, force)
    partial = _PartialWriter(path / "replicas.partial.csv")
    try:
        result = run_campaign(cfg, workers=workers, sink=partial)
    finally:
        partial.close()
    save_result(result, path)
    (path / "replicas.partial.csv").unlink()
    return result, path


def save_result(result, path):
    path = Path(path)
    write_replicas(path / "replicas.csv", result.records)
    (path / "aggregates.json").write_text(_dump(result.aggregates))
    (path / "verdicts.json").write_text(_dump([v.to_dict() for v in result.verdicts]))
    (path / "metrics.json").write_text(_dump(result.metrics))
    for name, (header, rows) in result.csvs.items():
        _write_csv(path / name, header, rows)
    for name, rep in result.reports.items():
        (path / name).write_text(rep.to_json() + "\n")
    (path / "summary.txt").write_text(summary_table(result))


def recompute(path):
    """Aggregates and verdicts recomputed from a run directory's ``replicas.csv``.

    Returns ``(aggregates, verdicts)``.  Everything except ``lag_curves``
    (whole lag profiles are not stored per replica) and ``extras`` is
    recomputed; the Malliavin extras are read back from ``aggregates.json``.
    """
    path = Path(path)
    cfg = json.loads((path / "config.json").read_text())["config"]
    cfg["harness"].setdefault("workers", 1)
    cfg["harness"].setdefault("out", str(path.parent))
    records = read_replicas(path / "replicas.csv")
    extras = None
    if cfg["campaign"]["kind"] == "malliavin":
        extras = json.loads((path / "aggregates.json").read_text())["extras"]
    agg, verdicts, _, _ = aggregate(cfg, records, extras)
    return agg, verdicts
