"""Command-line front end.

Every subcommand reads one YAML config, writes ``<name>.json`` (plus CSV
series where useful) into the output directory, and records the config
hash, library version and tolerances in ``manifest.json``.  Outputs are
deterministic: the same config hash gives byte-identical files.

Exit codes: 0 success, 2 invalid config (or ``report`` with nothing to
report), 3 numerical refusal, 4 invariant violation.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path

import yaml

SUBCOMMANDS = ("transience", "spectrum", "classify", "bec", "equiv", "decompose",
               "witness", "kms", "report")

DEFAULTS = {
    "graph": {"family": "lattice", "degree": 3},
    "beta": 1.0,
    "D": 1.0,
    "radii": [6, 8, 10, 12],
    "norm_estimate": None,
    "transience": {"radii": [8, 12, 16, 20, 24], "offsets": [1e-2, 3e-3, 1e-3, 3e-4, 1e-4, 3e-5],
                   "tol": 1e-10, "finite_fraction": 0.05},
    "tolerances": {"tol_eig": 1e-8, "window": 3, "overlap_threshold": 0.99,
                   "localization_threshold": 0.99, "isolation_threshold": 0.25},
    "spectrum": {"radius": 6},
    "equiv": {"radii": [6, 10, 14], "pairs": None, "random_pairs": 3, "growth_factor": 2.0},
    "decompose": {"radius": 8, "tol": 1e-2, "quad_order": 40, "probes": 50},
    "witness": {"radius": 8, "n_max": 60, "method": "taylor"},
    "kms": {"radii": [6, 10, 14], "t_grid": {"start": 0.0, "stop": 3.0, "num": 16}},
}

EXIT_OK, EXIT_CONFIG, EXIT_REFUSAL, EXIT_INVARIANT = 0, 2, 3, 4


class ConfigError(ValueError):
    """The run configuration does not validate."""


def _merge(base, over):
    if not isinstance(over, dict):
        return over
    out = dict(base)
    for k, v in over.items():
        out[k] = _merge(base[k], v) if isinstance(base.get(k), dict) and isinstance(v, dict) else v
    return out


def _increasing(xs, name):
    if not isinstance(xs, list) or not xs or any(int(x) != x or x < 1 for x in xs):
        raise ConfigError(f"{name} must be a list of positive integers")
    if any(b <= a for a, b in zip(xs, xs[1:])):
        raise ConfigError(f"{name} must be strictly increasing")


@dataclass
class RunConfig:
    """Validated configuration with defaults filled in."""

    data: dict
    source: str = ""
    extra: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            raw = yaml.safe_load(Path(path).read_text()) if path else {}
        except (OSError, yaml.YAMLError) as exc:
            raise ConfigError(f"cannot read config: {exc}") from exc
        return cls.from_mapping(raw or {}, str(path or ""))

    @classmethod
    def from_mapping(cls, raw: dict, source: str = "") -> "RunConfig":
        if not isinstance(raw, dict):
            raise ConfigError("config must be a mapping")
        unknown = set(raw) - set(DEFAULTS) - {"output"}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        data = _merge(DEFAULTS, {k: v for k, v in raw.items() if k != "output"})
        cfg = cls(data, source, {"output": raw.get("output")})
        cfg.validate()
        return cfg

    def validate(self):
        d = self.data
        if not isinstance(d["beta"], (int, float)) or d["beta"] <= 0:
            raise ConfigError("beta must be positive")
        if not isinstance(d["D"], (int, float)) or d["D"] < 0:
            raise ConfigError("D must be nonnegative")
        _increasing(d["radii"], "radii")
        _increasing(d["transience"]["radii"], "transience.radii")
        _increasing(d["equiv"]["radii"], "equiv.radii")
        _increasing(d["kms"]["radii"], "kms.radii")
        for k, v in d["tolerances"].items():
            if not isinstance(v, (int, float)) or v <= 0:
                raise ConfigError(f"tolerance {k} must be positive")
        for path, v in (("transience.tol", d["transience"]["tol"]),
                        ("transience.finite_fraction", d["transience"]["finite_fraction"]),
                        ("decompose.tol", d["decompose"]["tol"])):
            if not isinstance(v, (int, float)) or v <= 0:
                raise ConfigError(f"{path} must be positive")
        if d["norm_estimate"] is not None and d["norm_estimate"] <= 0:
            raise ConfigError("norm_estimate must be positive")
        if d["witness"]["method"] not in ("taylor", "minimax"):
            raise ConfigError("witness.method must be taylor or minimax")
        self.graph_spec()

    def graph_spec(self):
        from .graphs import GraphError, GraphSpec, edge_list, read_edge_file

        g = self.data["graph"]
        try:
            fam = g.get("family")
            if fam == "edge_list":
                if "file" in g:
                    base = Path(self.source).parent if self.source else Path(".")
                    return read_edge_file(base / g["file"], root=g.get("root"),
                                          max_degree=g.get("max_degree"))
                return edge_list([tuple(e) for e in g.get("edges", [])], root=g.get("root"),
                                 max_degree=g.get("max_degree"))
            return GraphSpec(fam, int(g.get("degree", 1)))
        except (GraphError, TypeError, OSError) as exc:
            raise ConfigError(f"invalid graph: {exc}") from exc

    def canonical(self) -> str:
        return json.dumps(self.data, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


# ---------------------------------------------------------------------------
# subcommands


def _norm(cfg, spec, out):
    """Transience report plus the norm estimate used downstream."""
    from .spectral import transience_test

    t = cfg.data["transience"]
    rep = transience_test(spec, radii=t["radii"], offsets=t["offsets"], tol=t["tol"],
                          finite_fraction=t["finite_fraction"])
    N = cfg.data["norm_estimate"]
    return rep, float(rep.norm_extrapolated if N is None else N)


def _require_transient(rep):
    from .structure import RefusalError

    if rep.verdict != "transient":
        raise RefusalError(f"graph is {rep.verdict}: " + ("; ".join(rep.diagnostics) or
                                                         "transience not established"))


def run_transience(cfg, spec, rng, out):
    rep, _ = _norm(cfg, spec, out)
    files = {"transience.json": rep.to_dict(), "transience_green.csv": rep.green_csv()}
    return files, rep.tolerances


def run_spectrum(cfg, spec, rng, out):
    import numpy as np

    from .ccr import s_spectrum
    from .structure import graph_state

    rep, N = _norm(cfg, spec, out)
    _require_transient(rep)
    r = int(cfg.data["spectrum"]["radius"])
    st = graph_state(spec, r, cfg.data["beta"], cfg.data["D"], N)
    ev = s_spectrum(st.space)
    body = {"radius": r, "n": st.n, "beta": cfg.data["beta"], "D": cfg.data["D"],
            "norm_estimate": N, "eigenvalues": ev,
            "gap_to_half": float(np.min(np.abs(ev - 0.5))),
            "pairing_residual": float(np.max(np.abs(np.sort(ev) - np.sort(1 - ev))))}
    csv = "index,eigenvalue\n" + "".join(f"{i},{x!r}\n" for i, x in enumerate(ev.tolist()))
    return {"spectrum.json": body, "spectrum.csv": csv}, {"norm_estimate": N}


def _filtration(cfg, spec, N, D=None, radii=None):
    from .structure import graph_state

    d = cfg.data
    D = d["D"] if D is None else D
    return [graph_state(spec, r, d["beta"], D, N) for r in (radii or d["radii"])]


def run_classify(cfg, spec, rng, out):
    from .structure import classify

    rep, N = _norm(cfg, spec, out)
    _require_transient(rep)
    tol = cfg.data["tolerances"]
    res = classify(_filtration(cfg, spec, N), **tol)
    body = res.to_dict()
    body["radii"] = cfg.data["radii"]
    return {"classify.json": body}, dict(tol, norm_estimate=N)


def run_bec(cfg, spec, rng, out):
    from .structure import bec_detect

    d = cfg.data
    rep, N = _norm(cfg, spec, out)
    tol = d["tolerances"]
    res = bec_detect(spec, d["beta"], d["D"], radii=d["radii"], transience=rep, **tol)
    files = {"bec.json": res.to_dict()}
    if res.bec and res.bec.get("bec") == "yes":
        files["decomposition.json"] = _certificate(cfg, spec, N, rng, d["radii"][-1])
    return files, dict(tol, norm_estimate=N)


def _certificate(cfg, spec, N, rng, radius):
    import numpy as np

    from .decomposition import central_eigenspace, graph_change_of_variables, graph_mixture_check
    from .structure import graph_state

    d, dc = cfg.data, cfg.data["decompose"]
    st = graph_state(spec, radius, d["beta"], d["D"], N)
    cert = central_eigenspace(st, tol=dc["tol"])
    probes = [(rng.normal(size=st.n) + 1j * rng.normal(size=st.n)) / np.sqrt(2 * st.n)
              for _ in range(int(dc["probes"]))]
    mix = graph_mixture_check(st, probes, quad_order=int(dc["quad_order"]))
    cov = graph_change_of_variables(cert)
    cert.quadrature = {"scheme": "tensor Gauss-Hermite", "order": int(dc["quad_order"]),
                       "dimensions": 2, "normalization": "unit Gaussian in (s1, s2)"}
    cert.max_mixture_error = mix["max_error"]
    cert.mixture_converged = mix["converged"]
    body = cert.to_dict()
    body.pop("central_basis")  # vectors are large; the JSON keeps the certificate data
    body.update({"radius": radius, "graph_mixture": mix, "change_of_variables": cov})
    return body


def run_decompose(cfg, spec, rng, out):
    from .decomposition import DecompositionError

    rep, N = _norm(cfg, spec, out)
    _require_transient(rep)
    if cfg.data["D"] <= 0:
        raise DecompositionError("D = 0: the state is factor, nothing to decompose")
    body = _certificate(cfg, spec, N, rng, int(cfg.data["decompose"]["radius"]))
    return {"decomposition.json": body}, dict(cfg.data["decompose"], norm_estimate=N)


def _pairs(cfg, rng):
    e = cfg.data["equiv"]
    if e["pairs"] is not None:
        return [(tuple(map(float, a)), tuple(map(float, b))) for a, b in e["pairs"]]
    out = [((0.0, 0.0), (0.0, 0.0))]
    for _ in range(int(e["random_pairs"])):
        out.append((tuple(rng.normal(size=2).round(6)), tuple(rng.normal(size=2).round(6))))
    return out


def run_equiv(cfg, spec, rng, out):
    from .decomposition import component_family_graph
    from .equivalence import coherent_quasi_equiv

    d, e = cfg.data, cfg.data["equiv"]
    rep, N = _norm(cfg, spec, out)
    _require_transient(rep)
    fam = component_family_graph(spec, d["beta"], d["D"], e["radii"], norm_estimate=N)
    verdicts = []
    for s, t in _pairs(cfg, rng):
        v = coherent_quasi_equiv(fam.component(s), fam.component(t),
                                 growth_factor=e["growth_factor"])
        body = v.to_dict()
        body["s"], body["t"] = list(s), list(t)
        verdicts.append(body)
    return ({"equiv.json": {"family": fam.to_dict(), "verdicts": verdicts}},
            {"growth_factor": e["growth_factor"], "window": 3, "norm_estimate": N})


def run_witness(cfg, spec, rng, out):
    from .decomposition import discontinuity_witness

    w = cfg.data["witness"]
    rep, N = _norm(cfg, spec, out)
    _require_transient(rep)
    res = discontinuity_witness(spec, beta=cfg.data["beta"], n_max=int(w["n_max"]),
                                radius=int(w["radius"]), norm_estimate=N, method=w["method"])
    return {"witness.json": res.to_dict(), "witness.csv": res.csv()}, res.tolerances


def run_kms(cfg, spec, rng, out):
    import numpy as np

    from .decomposition import kms_residual

    k = cfg.data["kms"]
    rep, N = _norm(cfg, spec, out)
    _require_transient(rep)
    tg = k["t_grid"]
    grid = np.linspace(tg["start"], tg["stop"], int(tg["num"]))
    res = kms_residual(spec, cfg.data["beta"], t_grid=grid, radii=k["radii"], norm_estimate=N,
                       seed=int(rng.integers(2**31)))
    return {"kms.json": res.to_dict()}, res.tolerances


def run_report(cfg, out):
    manifest = out / "manifest.json"
    if not manifest.exists():
        raise ConfigError(f"no runs recorded in {out}")
    runs = json.loads(manifest.read_text()).get("runs", {})
    runs = {k: v for k, v in runs.items() if k != "report"}
    if not runs:
        raise ConfigError(f"no runs recorded in {out}")
    summary = {}
    for name, entry in sorted(runs.items()):
        item = {"config_hash": entry["config_hash"], "files": entry["files"]}
        main = out / f"{name}.json"
        if main.exists():
            body = json.loads(main.read_text())
            for key in ("verdict", "verdicts", "bec", "invariance_decreasing"):
                if key in body:
                    item[key] = body[key]
        summary[name] = item
    return {"report.json": {"runs": summary}}, {}


RUNNERS = {"transience": run_transience, "spectrum": run_spectrum, "classify": run_classify,
           "bec": run_bec, "equiv": run_equiv, "decompose": run_decompose,
           "witness": run_witness, "kms": run_kms}


def _write(out: Path, files: dict):
    from ._io import SCHEMA_VERSION, dumps

    out.mkdir(parents=True, exist_ok=True)
    for name, body in files.items():
        if name.endswith(".json"):
            if isinstance(body, dict):
                body = dict(body, schema_version=SCHEMA_VERSION)
            text = dumps(body)
        else:
            text = body
        (out / name).write_text(text)


def _update_manifest(out: Path, command: str, cfg: RunConfig, files, tolerances, seed):
    from . import __version__
    from ._io import SCHEMA_VERSION, dumps

    path = out / "manifest.json"
    manifest = json.loads(path.read_text()) if path.exists() else {}
    runs = manifest.get("runs", {})
    runs[command] = {"config_hash": cfg.hash(), "files": sorted(files), "seed": seed,
                     "tolerances": tolerances, "config": cfg.data}
    manifest = {"schema_version": SCHEMA_VERSION, "library": "bosegraph",
                "version": __version__, "runs": runs}
    path.write_text(dumps(manifest))


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="bosegraph", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=SUBCOMMANDS)
    p.add_argument("--config", help="YAML run configuration")
    p.add_argument("--out", help="output directory (env BOSEGRAPH_OUT, default ./out)")
    p.add_argument("--threads", type=int, help="BLAS thread count (env BOSEGRAPH_THREADS)")
    p.add_argument("--seed", type=int, default=0, help="seed for random probe vectors")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    threads = args.threads or os.environ.get("BOSEGRAPH_THREADS")
    if threads:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(threads)
    out = Path(args.out or os.environ.get("BOSEGRAPH_OUT") or "out")

    import numpy as np

    from .ccr import InvariantViolation
    from .spectral import SingularOccupationError
    from .structure import RefusalError

    try:
        cfg = RunConfig.load(args.config)
        if args.out is None and cfg.extra.get("output") and not os.environ.get("BOSEGRAPH_OUT"):
            out = Path(cfg.extra["output"])
        if args.seed < 0 or args.seed >= 2**64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        if args.command == "report":
            files, tolerances = run_report(cfg, out)
        else:
            rng = np.random.default_rng(args.seed)
            files, tolerances = RUNNERS[args.command](cfg, cfg.graph_spec(), rng, out)
        _write(out, files)
        _update_manifest(out, args.command, cfg, files, tolerances, args.seed)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RefusalError, SingularOccupationError) as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_REFUSAL
    except InvariantViolation as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT
    except ValueError as exc:  # domain errors from the library (bad parameters)
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    print(f"{args.command}: wrote {', '.join(sorted(files))} to {out}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
