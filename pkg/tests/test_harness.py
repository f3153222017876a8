import json
import math

import numpy as np
import pytest

from shelab.errors import ConfigError
from shelab.harness import (CAMPAIGNS, build_config, default_config, digest, execute, read_replicas, recompute,
                            run_campaign, validate_config)
from shelab.harness import config as C
from shelab.harness.cli import main

SMALL = [("grid", "dx", 0.25), ("run", "times", [0.25]), ("run", "N", [16]), ("harness", "replicas", 60),
         ("harness", "batch", 25)]


def small(kind="clt", out=None, extra=()):
    ov = list(SMALL) + list(extra)
    if out is not None:
        ov.append(("harness", "out", str(out)))
    return C.check(build_config(kind, overrides=ov))


def test_defaults_are_valid():
    for kind in CAMPAIGNS:
        assert validate_config(default_config(kind)) == [], kind


def test_validation_lists_every_problem():
    cfg = build_config("clt", overrides=[("noise", "kind", "riesz"), ("harness", "replicas", 0),
                                         ("run", "times", [-1.0]), ("grid", "dx", -0.5)])
    errors = validate_config(cfg)
    assert len(errors) >= 4
    with pytest.raises(ConfigError):
        C.check(cfg)
    with pytest.raises(ConfigError):
        default_config("nope")
    assert validate_config(build_config("kpz", overrides=[("sigma", "kind", "constant")]))
    assert validate_config(build_config("malliavin", overrides=[("noise", "d", 2)]))


def test_digest_and_overrides():
    a = default_config("clt")
    b = build_config("clt", overrides=[C.parse_override("harness.workers=4"),
                                       C.parse_override("harness.out=elsewhere")])
    assert digest(a) == digest(b)
    c = build_config("clt", overrides=[C.parse_override("harness.seed=7")])
    assert digest(a) != digest(c) and c["harness"]["seed"] == 7
    assert C.parse_override("noise.kind=gaussian") == ("noise", "kind", "gaussian")
    assert C.parse_override("run.N=[64, 128]") == ("run", "N", [64, 128])
    with pytest.raises(ConfigError):
        C.parse_override("nodot=3")


def test_toml_file(tmp_path):
    p = tmp_path / "c.toml"
    p.write_text('[campaign]\nkind = "clt"\n[noise]\nkind = "gaussian"\nbandwidth = 0.5\n')
    cfg = build_config("clt", C.load_toml(p))
    assert cfg["noise"]["kind"] == "gaussian" and cfg["noise"]["bandwidth"] == 0.5
    with pytest.raises(ConfigError):
        build_config("kpz", C.load_toml(p))


def test_determinism_across_workers():
    cfg = small()
    r1 = run_campaign(cfg, workers=1)
    r2 = run_campaign(cfg, workers=2)
    k1 = [(r["set"], r["replica"], r["mean@t=0.25,N=16"]) for r in r1.records]
    k2 = [(r["set"], r["replica"], r["mean@t=0.25,N=16"]) for r in r2.records]
    assert k1 == k2
    assert [v.to_dict() for v in r1.verdicts] == [v.to_dict() for v in r2.verdicts]


def test_round_trip_and_refusal(tmp_path):
    cfg = small(out=tmp_path)
    result, path = execute(cfg)
    for name in ("config.json", "replicas.csv", "verdicts.json", "summary.txt", "aggregates.json"):
        assert (path / name).exists()
    assert not (path / "replicas.partial.csv").exists()
    assert json.loads((path / "config.json").read_text())["digest"] == digest(cfg)
    recs = read_replicas(path / "replicas.csv")
    assert len(recs) == len(result.records)
    agg, verdicts = recompute(path)
    for old, new in zip(result.verdicts, verdicts):
        assert old.name == new.name and old.status == new.status
        if math.isfinite(old.statistic):
            assert new.statistic == pytest.approx(old.statistic, rel=1e-12, abs=1e-12)
    b_old, b_new = result.aggregates.get("b_n"), agg.get("b_n")
    if b_old is not None:
        assert b_new == pytest.approx(b_old, rel=1e-12)
    with pytest.raises(Exception, match="force"):
        execute(cfg)
    execute(cfg, force=True)


def test_small_samples_are_inconclusive():
    res = run_campaign(small())
    assert any(v.status == "inconclusive" for v in res.verdicts)
    assert not any(v.status == "fail" for v in res.verdicts)
    assert not res.passed


def test_cli_exit_codes(tmp_path, capsys):
    assert main(["dalang", "--out", str(tmp_path)]) == 0
    assert main(["dalang", "--out", str(tmp_path)]) == 2
    assert "force" in capsys.readouterr().err
    assert main(["dalang", "--out", str(tmp_path), "--force"]) == 0
    assert main(["clt", "--out", str(tmp_path), "--set", "noise.kind=riesz"]) == 2
    args = ["clt", "--out", str(tmp_path), "--replicas", "60", "--set", "grid.dx=0.25",
            "--set", "run.times=[0.25]", "--set", "run.N=[16]"]
    assert main(args) == 1
    assert main(["constants", "--out", str(tmp_path), "--seed", "3"]) == 0
    with pytest.raises(SystemExit):
        main(["nonsense"])


def test_trivial_time_zero():
    res = run_campaign(small(extra=[("run", "times", [0.0]), ("harness", "replicas", 1)]))
    assert res.records[-1]["mean@t=0,N=16"] == 1.0
    assert any(v.status == "inconclusive" for v in res.verdicts)
