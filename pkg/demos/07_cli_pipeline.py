"""The batch front-end: one YAML file, JSON and CSV out, a manifest.

Runs `transience`, `classify` and `report` on a small lattice config into a
temporary directory and prints the manifest summary.
"""
import json
import tempfile
from pathlib import Path

import yaml

from bosegraph.cli import main

cfg = {"graph": {"family": "lattice", "degree": 3}, "beta": 1.0, "D": 1.0, "radii": [4, 5, 6]}
with tempfile.TemporaryDirectory() as tmp:
    path = Path(tmp) / "run.yaml"
    path.write_text(yaml.safe_dump(cfg))
    out = Path(tmp) / "out"
    for cmd in ("transience", "classify", "report"):
        code = main([cmd, "--config", str(path), "--out", str(out)])
        print(f"{cmd}: exit {code}")
    manifest = json.loads((out / "manifest.json").read_text())
    for name, run in manifest["runs"].items():
        print(f"  {name:<11} hash {run['config_hash'][:12]} files {run['files']}")
    print(json.loads((out / "report.json").read_text())["runs"]["classify"]["verdicts"])
