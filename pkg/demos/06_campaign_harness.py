"""Running a campaign from Python, persisting it and recomputing it from disk.

The same campaigns are available on the command line, e.g.

    shelab clt --replicas 2000 --out runs
    shelab constants --set noise.kind=gaussian

Run: python3 demos/06_campaign_harness.py
"""

import tempfile

from shelab.harness import build_config, execute, recompute
from shelab.harness.io import summary_table

out = tempfile.mkdtemp()
cfg = build_config("clt", overrides=[("grid", "dx", 0.25), ("run", "times", [0.25]), ("run", "N", [32]),
                                     ("harness", "replicas", 600), ("harness", "out", out)])
result, path = execute(cfg)
print(summary_table(result))
print("files:", sorted(p.name for p in path.iterdir()))

# Every aggregate and verdict can be rebuilt from replicas.csv alone.
_, verdicts = recompute(path)
print("recomputed:", [(v.name, v.status) for v in verdicts])

# Analytic campaigns need no replicas.
consts, _ = execute(build_config("constants", overrides=[("harness", "out", out)]))
print(summary_table(consts))
