"""Command line front end: ``sbbridge {solve,simulate,limits,verify}``.

Exit status: 0 on success, 1 on usage or input errors (nothing written),
2 when a solver stops before converging or a verify check fails (the
partial artifacts are still written).
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass, field, fields
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from .dynamics import PathEnsemble, simulate_sb
from .limits import LimitReport, limit_sweep, value_sweep
from .measures import DiscreteMeasure, GridMeasure, read_atoms_csv
from .solvers import SBSolution, SolverOptions, sb_solve

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1"
COMMANDS = ("solve", "simulate", "limits", "verify")
EXIT_OK, EXIT_INPUT, EXIT_NOT_CONVERGED = 0, 1, 2


class InputError(Exception):
    """Bad configuration or unreadable input; maps to exit status 1."""


@dataclass
class RunConfig:
    command: str
    mu_path: Optional[str] = None
    nu_path: Optional[str] = None
    beta: Optional[float] = None
    beta_grid: Optional[list] = None
    solver: dict = field(default_factory=dict)
    simulation: dict = field(default_factory=dict)
    out: str = "sbbridge_out"
    seed: Optional[int] = None
    include_timings: bool = False

    def validate(self):
        if self.command not in COMMANDS:
            raise InputError(f"unknown command {self.command!r}")
        if self.command == "verify":
            return
        for name in ("mu_path", "nu_path"):
            p = getattr(self, name)
            if p is None:
                raise InputError(f"{name} is required for {self.command}")
            if not Path(p).is_file():
                raise InputError(f"{name}: file not found: {p}")
        if self.command == "limits":
            if not self.beta_grid:
                raise InputError("limits needs beta_grid")
            if any(float(b) <= 0 for b in self.beta_grid):
                raise InputError("beta_grid entries must be positive")
        else:
            if self.beta is None:
                raise InputError(f"{self.command} needs beta")
            if float(self.beta) <= 0:
                raise InputError("beta must be positive")
        if self.command == "simulate" and self.seed is None:
            raise InputError("simulate needs an explicit seed")
        known = {f.name for f in fields(SolverOptions)}
        bad = set(self.solver) - known
        if bad:
            raise InputError(f"unknown solver options {sorted(bad)}")

    @classmethod
    def from_json(cls, obj: dict, base: Path = Path(".")) -> "RunConfig":
        obj = dict(obj)
        ver = str(obj.pop("schema_version", SCHEMA_VERSION))
        if ver != SCHEMA_VERSION:
            raise InputError(f"unsupported schema_version {ver}")
        known = {f.name for f in fields(cls)}
        bad = set(obj) - known
        if bad:
            raise InputError(f"unknown config keys {sorted(bad)}")
        if "command" not in obj:
            raise InputError("config needs a command")
        for name in ("mu_path", "nu_path"):
            if obj.get(name) is not None:
                p = Path(obj[name])
                obj[name] = str(p if p.is_absolute() else base / p)
        return cls(**obj)


# ---------------------------------------------------------------- input


def read_measure(path) -> DiscreteMeasure | GridMeasure:
    """CSV atoms (``x1..xd,weight``) or a JSON grid ``{origin, spacing, shape, weights}``."""
    path = Path(path)
    try:
        if path.suffix.lower() == ".json":
            return GridMeasure.from_json(json.loads(path.read_text()))
        return read_atoms_csv(path)
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise InputError(str(exc)) from exc


def bundled_path(name: str) -> str:
    return str(resources.files("sbbridge").joinpath("data", name))


def default_config(command: str) -> RunConfig:
    """The bundled delta_0 -> delta_1 example."""
    cfg = RunConfig(command, bundled_path("delta0.csv"), bundled_path("delta1.csv"))
    if command == "limits":
        cfg.beta_grid = [0.1, 1.0, 10.0]
    else:
        cfg.beta = 1.0
    if command == "simulate":
        cfg.seed = 0
        cfg.simulation = {"n_paths": 10_000, "n_steps": 1000}
    return cfg


# ---------------------------------------------------------------- export


def _dump_json(obj, path: Path):
    text = json.dumps(obj, sort_keys=True, indent=2, allow_nan=True) + "\n"
    path.write_text(text)


def _measure_json(m) -> dict:
    m = m.to_discrete()
    return {"atoms": m.atoms.tolist(), "weights": m.weights.tolist()}


def _write_csv(path: Path, header, rows):
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(v) if isinstance(v, float) else v for v in r])


def solution_json(sol: SBSolution, include_timings: bool = False) -> dict:
    out = {
        "schema_version": SCHEMA_VERSION,
        "beta": sol.beta,
        "value": sol.value,
        "dual_trace": [float(v) for v in sol.dual_trace],
        "f_star": sol.f_star.to_json(),
        "nu": _measure_json(sol.nu),
        "mu": _measure_json(sol.mu),
        "alpha_star": _measure_json(sol.alpha_star),
        "coupling": sol.coupling.mass.tolist(),
        "converged": bool(sol.converged),
        "iterations": int(sol.iterations),
    }
    if include_timings:
        out["timings"] = dict(sol.timings)
    return out


def export_report(obj, out_dir, include_timings: bool = False, max_paths: int = 1000) -> list:
    """Write the JSON/CSV artifacts for a solution, limit report or ensemble.

    Output is byte-identical for identical inputs; wall-clock timings are
    left out unless ``include_timings`` is set.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []
    if isinstance(obj, SBSolution):
        p = out / "solution.json"
        _dump_json(solution_json(obj, include_timings), p)
        q = out / "trace.csv"
        shifts = [""] + [float(s) for s in obj.alpha_shift_trace]
        _write_csv(q, ["iteration", "dual_value", "alpha_shift"],
                   [(k, float(v), shifts[k]) for k, v in enumerate(obj.dual_trace)])
        written += [p, q]
    elif isinstance(obj, LimitReport):
        p = out / "limit_report.json"
        _dump_json({"schema_version": SCHEMA_VERSION, **obj.to_json()}, p)
        q = out / "limit_report.csv"
        _write_csv(q, ["beta", "value", "target", "target_value", "deviation"], obj.csv_rows())
        written += [p, q]
    elif isinstance(obj, PathEnsemble):
        p = out / "ensemble.json"
        _dump_json({"schema_version": SCHEMA_VERSION, **obj.summary(),
                    "times": obj.times.tolist(), "paths_in_csv": min(obj.n_paths, max_paths)}, p)
        q = out / "paths.csv"
        d = obj.x_paths.shape[2]
        header = ["path_id", "t"] + [f"x{k + 1}" for k in range(d)] + [f"y{k + 1}" for k in range(d)]
        rows = []
        for i in range(min(obj.n_paths, max_paths)):
            for k, t in enumerate(obj.times):
                rows.append([i, float(t)] + [float(v) for v in obj.x_paths[i, k]] +
                            [float(v) for v in obj.y_paths[i, k]])
        _write_csv(q, header, rows)
        written += [p, q]
    else:
        raise TypeError(f"cannot export {type(obj).__name__}")
    return written


# ---------------------------------------------------------------- commands


def _options(cfg: RunConfig, **defaults) -> SolverOptions:
    kw = dict(defaults)
    kw.update(cfg.solver)
    if cfg.seed is not None:
        kw.setdefault("seed", int(cfg.seed))
    try:
        return SolverOptions(**kw)
    except (TypeError, ValueError) as exc:
        raise InputError(str(exc)) from exc


def run(cfg: RunConfig) -> int:
    """Execute one command; returns the exit status."""
    cfg.validate()
    out = Path(cfg.out)
    if cfg.command == "verify":
        from .verify import run_checks
        report = run_checks()
        out.mkdir(parents=True, exist_ok=True)
        _dump_json({"schema_version": SCHEMA_VERSION, **report}, out / "verify.json")
        for c in report["checks"]:
            print(f"{'PASS' if c['passed'] else 'FAIL'} {c['name']}: error {c['error']:.3e} (tol {c['tol']:.1e})")
        return EXIT_OK if report["all_passed"] else EXIT_NOT_CONVERGED
    mu, nu = read_measure(cfg.mu_path), read_measure(cfg.nu_path)
    if mu.dim != nu.dim:
        raise InputError(f"mu has dimension {mu.dim}, nu has dimension {nu.dim}")
    if cfg.command == "limits":
        opts = _options(cfg, max_outer_iters=3000)
        mu_d = mu.to_discrete()
        if mu_d.size == 1:
            rep = limit_sweep(mu_d.atoms[0], nu, cfg.beta_grid, opts)
        else:
            rep = value_sweep(mu, nu, cfg.beta_grid, opts)
        export_report(rep, out)
        print(f"limits: {len(rep.values)} values, flags {rep.monotone_flags}")
        return EXIT_OK
    sol = sb_solve(mu, nu, float(cfg.beta), _options(cfg))
    export_report(sol, out, cfg.include_timings)
    print(f"solve: value {sol.value:.10g}, iterations {sol.iterations}, converged {sol.converged}")
    if not sol.converged:
        return EXIT_NOT_CONVERGED
    if cfg.command == "simulate":
        sim = dict(cfg.simulation)
        max_paths = int(sim.pop("paths_csv_limit", 1000))
        try:
            ens = simulate_sb(sol, seed=int(cfg.seed), **sim)
        except TypeError as exc:
            raise InputError(f"bad simulation options: {exc}") from exc
        export_report(ens, out, max_paths=max_paths)
        s = ens.summary()
        print(f"simulate: cost {s['cost_mean']:.6g} +- {s['cost_std_error']:.2g} over {s['n_paths']} paths")
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="sbbridge", description="Schrödinger–Bass bridges between discrete measures.")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    helps = {
        "solve": "dual ascent; writes solution.json and trace.csv",
        "simulate": "solve, then simulate paths; adds paths.csv and ensemble.json",
        "limits": "beta sweep; writes limit_report.json and limit_report.csv",
        "verify": "oracle agreement suite; writes verify.json",
    }
    for name in COMMANDS:
        s = sub.add_parser(name, help=helps[name], description=helps[name])
        s.add_argument("--config", help="JSON run configuration (default: bundled delta_0 -> delta_1 example)")
        s.add_argument("--beta", type=float, help="override beta (solve, simulate)")
        s.add_argument("--seed", type=int, help="override the seed (mandatory for simulate)")
        s.add_argument("--out", help="output directory (default: sbbridge_out)")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.config:
            path = Path(args.config)
            if not path.is_file():
                raise InputError(f"config not found: {path}")
            try:
                obj = json.loads(path.read_text())
            except json.JSONDecodeError as exc:
                raise InputError(f"{path}: {exc}") from exc
            cfg = RunConfig.from_json(obj, path.parent)
            if cfg.command != args.command:
                raise InputError(f"config is for {cfg.command!r}, command line asked for {args.command!r}")
        else:
            cfg = default_config(args.command)
        if args.beta is not None:
            cfg.beta = args.beta
        if args.seed is not None:
            cfg.seed = args.seed
        if args.out is not None:
            cfg.out = args.out
        return run(cfg)
    except InputError as exc:
        print(f"sbbridge: error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
