"""Batch front end: ``magdbar <task> --config run.json --out DIR [--seed N]``.

Exit status: 0 on success (an inconclusive probe verdict is a success),
2 for an invalid configuration (nothing is written), 3 when a solver or
eigensolver fails to converge.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import platform
import sys
import time
from importlib import resources
from pathlib import Path

import jsonschema
from jsonschema.exceptions import best_match
import numpy as np
import scipy

from . import __version__
from .diagnostics import (
    doubling_check,
    field_and_potentials,
    iwatsuka_integral,
    write_integrals_csv,
    write_potentials_csv,
)
from .errors import ConfigError, ConvergenceError, GridError, MagDbarError
from .fock_oracle import landau_levels, tensor_sum_spectrum, write_oracle_csv
from .grid import build_grid, read_field_csv, write_field_csv
from .operators import assemble_S_composition, assemble_S_stencil, assemble_Sk
from .solver import datum_preset, solve_canonical
from .spectral import compactness_probe, lowest_eigenpairs, singular_values_T
from .weights import DecoupledWeight, RadialPowerWeight, weight_from_config

TASKS = ("spectrum", "singvals", "solve", "probe", "diagnose", "oracle", "multivar")
EXIT_OK, EXIT_CONFIG, EXIT_CONVERGENCE = 0, 2, 3


def load_schema() -> dict:
    text = resources.files("magdbar").joinpath("schema/run_config.schema.json").read_text()
    return json.loads(text)


def config_hash(config: dict, task: str, seed: int) -> str:
    blob = json.dumps({"config": config, "task": task, "seed": seed}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def progress(fraction: float) -> None:
    print(f"progress {fraction:.3f}", file=sys.stderr, flush=True)


def _check_weight(cfg, schema: dict, path: str = "weight") -> None:
    # oneOf failures give opaque messages; validate against the branch named by "kind"
    if not isinstance(cfg, dict):
        return
    kind = cfg.get("kind")
    if kind == "decoupled":
        for i, f in enumerate(cfg.get("factors", []) if isinstance(cfg.get("factors"), list) else []):
            _check_weight(f, schema, f"{path}/factors/{i}")
        return
    branches = {b["properties"]["kind"]["const"]: b for b in schema["$defs"]["scalar_weight"]["oneOf"]}
    if kind not in branches:
        raise ConfigError(f"unknown weight kind {kind!r} at {path}; expected one of {', '.join([*branches, 'decoupled'])}")
    err = best_match(jsonschema.Draft202012Validator(branches[kind]).iter_errors(cfg))
    if err is not None:
        raise ConfigError(f"config invalid at {path}: {err.message}")


class Run:
    """A validated configuration plus its derived objects."""

    def __init__(self, task: str, config: dict, seed: int, base_dir: Path):
        schema = load_schema()
        _check_weight(config.get("weight"), schema)
        err = best_match(jsonschema.Draft202012Validator(schema).iter_errors(config))
        if err is not None:
            raise ConfigError(f"config invalid at {'/'.join(map(str, err.absolute_path)) or '<root>'}: {err.message}")
        if config.get("task", task) != task:
            raise ConfigError(f"config task {config['task']!r} does not match command {task!r}")
        self.task = task
        self.config = config
        self.seed = seed
        self.params = config.get("params", {})
        self.grid_cfg = config.get("grid", {})
        self.weight = weight_from_config(config["weight"], base_dir)
        self.base_dir = base_dir
        self.hash = config_hash(config, task, seed)
        self._check()

    @property
    def n(self) -> int:
        return self.weight.dimension if isinstance(self.weight, DecoupledWeight) else 1

    def grid(self, R: float | None = None):
        R = self.grid_cfg.get("R") if R is None else R
        kw = {}
        if "node_budget" in self.grid_cfg:
            kw["node_budget"] = self.grid_cfg["node_budget"]
        return build_grid(R, self.grid_cfg["h"], self.n, **kw)

    def _need(self, *keys: str, where: dict | None = None, label: str = "grid") -> None:
        where = self.grid_cfg if where is None else where
        missing = [k for k in keys if k not in where]
        if missing:
            raise ConfigError(f"task {self.task!r} needs {label} field(s) {missing}")

    def _check(self) -> None:
        t = self.task
        if t in ("spectrum", "singvals", "solve", "multivar"):
            self._need("R", "h")
            self.grid()  # surfaces non-integral R/h and node budget now
        if t in ("spectrum", "singvals", "solve", "probe", "diagnose") and self.n != 1 and t != "diagnose":
            raise ConfigError(f"task {t!r} needs a one-variable weight")
        if t == "multivar" and self.n < 2:
            raise ConfigError("task 'multivar' needs a decoupled weight with n >= 2")
        if t == "probe":
            self._need("radii", "h")
            self._need("Lambda", where=self.params, label="params")
            for R in self.grid_cfg["radii"]:
                self.grid(R)
        if t == "solve" and "datum" not in self.params:
            raise ConfigError("task 'solve' needs params.datum (preset 'monomial:n' or a CSV path)")
        if t == "diagnose" and self.n >= 2 and "points" not in self.params:
            raise ConfigError("multivariable diagnose needs params.points")


def _write_spectrum(path: Path, rows, header: str) -> None:
    with open(path, "w") as fh:
        fh.write(f"# {header}\n")
        fh.write("R,lambda_index,lambda,residual\n")
        for R, i, lam, res in rows:
            fh.write(f"{float(R)!r},{i},{float(lam)!r},{float(res)!r}\n")


def _assemble(run: Run, grid):
    route = run.params.get("route", "stencil")
    return (assemble_S_stencil if route == "stencil" else assemble_S_composition)(run.weight, grid)


def task_spectrum(run: Run, out: Path, header: str) -> dict:
    grid = run.grid()
    op = _assemble(run, grid)
    progress(0.2)
    res = lowest_eigenpairs(op, run.params.get("k", 6), run.params.get("tol", 1e-8),
                            seed=run.seed, method=run.params.get("method", "auto"))
    rows = [(grid.R, i + 1, float(l), float(r)) for i, (l, r) in enumerate(zip(res.eigenvalues, res.residual_norms))]
    _write_spectrum(out / "eigenvalues.csv", rows, header)
    return {"eigenvalues": res.eigenvalues.tolist(), "route": op.provenance, "iterations": res.iterations}


def task_singvals(run: Run, out: Path, header: str) -> dict:
    grid = run.grid()
    op = _assemble(run, grid)
    k = run.params.get("k", 6)
    tol = run.params.get("tol", 1e-8)
    res = lowest_eigenpairs(op, k, tol, seed=run.seed, method=run.params.get("method", "auto"))
    sig = singular_values_T(op, k, tol, seed=run.seed, method=run.params.get("method", "auto"))
    with open(out / "singular_values.csv", "w") as fh:
        fh.write(f"# {header}\n")
        fh.write("index,lambda,sigma\n")
        for i, (lam, s) in enumerate(zip(res.eigenvalues, sig)):
            fh.write(f"{i + 1},{float(lam)!r},{float(s)!r}\n")
    return {"singular_values": sig.tolist()}


def task_solve(run: Run, out: Path, header: str) -> dict:
    grid = run.grid()
    datum = run.params["datum"]
    if datum.startswith("monomial:"):
        g = datum_preset(datum, run.weight, grid)
    else:
        path = Path(datum)
        g = read_field_csv(path if path.is_absolute() else run.base_dir / path, grid)
    res = solve_canonical(run.weight, grid, g, run.params.get("tol", 1e-10), K=run.params.get("K", 8))
    write_field_csv(res.v, out / "solution.csv", {"config_hash": run.hash})
    cert = res.certificate()
    cert["ratio_norm_sq"] = (res.norm_v / g.norm()) ** 2 if g.norm() else None
    cert["config_hash"] = run.hash
    (out / "solution_certificate.json").write_text(json.dumps(cert, indent=2, sort_keys=True))
    return cert


def task_probe(run: Run, out: Path, header: str) -> dict:
    p = run.params
    band = tuple(p["band"]) if "band" in p else None
    rep = compactness_probe(run.weight, run.grid_cfg["h"], run.grid_cfg["radii"], p["Lambda"], band,
                            p.get("k_max", 400), tol=p.get("tol", 1e-8), route=p.get("route", "stencil"),
                            seed=run.seed, progress=progress)
    d = rep.to_dict()
    d["config_hash"] = run.hash
    (out / "probe_report.json").write_text(json.dumps(d, indent=2, sort_keys=True))
    rows = []
    for R in rep.radii:
        if R in rep.spectra:
            s = rep.spectra[R]
            rows += [(R, i + 1, float(l), float(r)) for i, (l, r) in enumerate(zip(s.eigenvalues, s.residual_norms))]
    _write_spectrum(out / "eigenvalues.csv", rows, header)
    return {"verdict": rep.verdict, "counts": rep.counts, "band_counts": rep.band_counts}


def task_diagnose(run: Run, out: Path, header: str) -> dict:
    p = run.params
    if run.n >= 2:
        pts = [np.asarray(q[0::2]) + 1j * np.asarray(q[1::2]) for q in p["points"]]
        samples = field_and_potentials(run.weight, p.get("delta", 0.0), pts)
        write_potentials_csv(out / "diagnostics.csv", pts, samples, header)
        return {"Bmag": [row[0][0].magnitude for row in samples],
                "Veff": [[v.V_eff for _, v in row] for row in samples]}
    w = run.weight.factors[0] if isinstance(run.weight, DecoupledWeight) else run.weight
    centers = p.get("centers", [[0.0, 0.0]])
    qh = p.get("quad_h", 0.01)
    vals = iwatsuka_integral(w, centers, qh)
    write_integrals_csv(out / "diagnostics.csv", centers, vals, header)
    summary = {"iwatsuka": vals}
    try:
        summary["doubling"] = doubling_check(w, centers, p.get("radii", [0.5, 1.0, 2.0]), qh).to_dict()
    except MagDbarError as exc:
        summary["doubling"] = {"error": str(exc)}
    return summary


def task_oracle(run: Run, out: Path, header: str) -> dict:
    nmax = run.params.get("nmax", 30)
    write_oracle_csv(out / "oracle.csv", nmax, header)
    return {"nmax": nmax}


def task_multivar(run: Run, out: Path, header: str) -> dict:
    grid = run.grid()
    kk = run.params.get("k_index", 1)
    op = assemble_Sk(run.weight, grid, kk)
    progress(0.2)
    res = lowest_eigenpairs(op, run.params.get("k", 4), run.params.get("tol", 1e-8),
                            seed=run.seed, method=run.params.get("method", "auto"))
    rows = [(grid.R, i + 1, float(l), float(r)) for i, (l, r) in enumerate(zip(res.eigenvalues, res.residual_norms))]
    _write_spectrum(out / "eigenvalues.csv", rows, header)
    summary = {"eigenvalues": res.eigenvalues.tolist(), "k_index": kk}
    fac = run.weight.factors
    if all(isinstance(f, RadialPowerWeight) and f.m == 2 for f in fac):
        lv = landau_levels(4.0, 4)
        summary["tensor_oracle"] = tensor_sum_spectrum([lv] * len(fac), [lv - 2.0] * len(fac), kk, 4).tolist()
    return summary


HANDLERS = {
    "spectrum": task_spectrum,
    "singvals": task_singvals,
    "solve": task_solve,
    "probe": task_probe,
    "diagnose": task_diagnose,
    "oracle": task_oracle,
    "multivar": task_multivar,
}


def run(task: str, config: dict, out: Path, seed: int = 0, base_dir: Path | None = None) -> int:
    try:
        r = Run(task, config, seed, base_dir or Path.cwd())
    except (ConfigError, GridError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    out.mkdir(parents=True, exist_ok=True)
    header = f"config_hash={r.hash}"
    t0 = time.perf_counter()
    status, code, summary = "ok", EXIT_OK, {}
    try:
        summary = HANDLERS[task](r, out, header)
    except ConvergenceError as exc:
        status, code, summary = "non-convergence", EXIT_CONVERGENCE, {"error": str(exc)}
    progress(1.0)
    manifest = {
        "task": task,
        "status": status,
        "config": config,
        "config_hash": r.hash,
        "seed": seed,
        "versions": {
            "magdbar": __version__,
            "python": platform.python_version(),
            "numpy": np.__version__,
            "scipy": scipy.__version__,
        },
        "wall_time_s": time.perf_counter() - t0,
        "summary": summary,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True, default=float))
    return code


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="magdbar", description=__doc__.splitlines()[0])
    ap.add_argument("task", choices=TASKS)
    ap.add_argument("--config", required=True, type=Path)
    ap.add_argument("--out", required=True, type=Path)
    ap.add_argument("--seed", type=int, default=None)
    args = ap.parse_args(argv)
    try:
        config = json.loads(args.config.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if not isinstance(config, dict):
        print("error: config must be a JSON object", file=sys.stderr)
        return EXIT_CONFIG
    seed = args.seed if args.seed is not None else int(config.get("seed", 0))
    return run(args.task, config, args.out, seed, args.config.resolve().parent)


if __name__ == "__main__":
    sys.exit(main())
