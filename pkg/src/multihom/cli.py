"""Command-line entry point.

Every pipeline is driven by a JSON config (strictly validated) and leaves CSV
artifacts plus a plain-text manifest in its output directory; ``--plot``
additionally renders figures next to the delimited output. Exit codes: 0 all
solves converged and audits clean, 1 numerical failure, 2 usage/config error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .cell_solver import IntegrandSlice, SolverOptions, solve_cell
from .config import COMMANDS, ConfigError, RunConfig, load_config
from .eps import (DomainSpec, assemble_eps_energy, counterexample_run,
                  gamma_convergence_run, solve_eps)
from .fixtures import make_fixture
from .grid import field_to_csv
from .hom import hom_iterate, hom_joint, save_table
from .integrand import (NonAdmissibleError, SamplingSpec, check_convexity,
                        check_growth, check_lipschitz)
from .measures import center_of_mass, empirical_young, histogram_to_csv


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="multihom",
        description="cell-problem homogenization engine and convergence lab")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)
    for name in COMMANDS + ("run",):
        p = sub.add_parser(name, help=f"run the '{name}' pipeline" if name != "run"
                           else "run the command named inside the config")
        p.add_argument("config", help="path to the JSON run configuration")
        p.add_argument("--out", help="output directory (overrides config)")
        p.add_argument("--workers", type=int, help="worker pool size bound")
        p.add_argument("--fixture", help="use a built-in integrand fixture")
        p.add_argument("--plot", action="store_true", help="render figures next to the CSVs")
    p = sub.add_parser("plot", help="render figures for an existing run directory")
    p.add_argument("run_dir")
    args = parser.parse_args(argv)

    if args.subcommand == "plot":
        from .plots import render_run
        made = render_run(args.run_dir)
        for f in made:
            print(f)
        return 0

    overrides = {}
    if args.out:
        overrides["output_dir"] = args.out
    if args.workers:
        overrides["workers"] = args.workers
    if args.fixture:
        overrides["integrand"] = {"fixture": args.fixture}
    try:
        cfg = load_config(args.config,
                          command=None if args.subcommand == "run" else args.subcommand,
                          overrides=overrides)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 2

    out = cfg.output_dir
    out.mkdir(parents=True, exist_ok=True)
    t0 = time.time()
    status = 0
    flags: dict = {}
    try:
        status, flags = _RUNNERS[cfg.command](cfg, out)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        status = 2
        flags = {"error": str(err)}
    except NonAdmissibleError as err:
        print(f"config error: {err}", file=sys.stderr)
        status = 2
        flags = {"error": str(err)}
    except Exception as err:  # numerical failure paths still leave a manifest
        print(f"run failed: {err}", file=sys.stderr)
        status = 1
        flags = {"error": str(err)}
    finally:
        _write_manifest(cfg, out, time.time() - t0, status, flags)
    if status == 0 and args.plot:
        from .plots import render_run
        for f in render_run(out):
            print(f)
    return status


def _write_manifest(cfg: RunConfig, out: Path, wall: float, status: int, flags: dict):
    lines = [
        f"command: {cfg.command}",
        f"multihom_version: {__version__}",
        f"numpy_version: {np.__version__}",
        f"seed: {cfg.seed}",
        f"workers: {cfg.workers}",
        f"wall_time_s: {wall:.3f}",
        f"exit_status: {status}",
    ]
    for k, v in flags.items():
        lines.append(f"{k}: {v}")
    lines.append("config: " + json.dumps(cfg.raw, sort_keys=True, separators=(",", ":")))
    (out / "manifest.txt").write_text("\n".join(lines) + "\n", encoding="utf-8")


def _write_csv(path: Path, header: list[str], rows: list[list]):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for row in rows:
            wr.writerow([repr(float(v)) if isinstance(v, float) else v for v in row])


def _need_integrand(cfg: RunConfig):
    if cfg.integrand is None:
        raise ConfigError(f"command '{cfg.command}' needs an 'integrand'")
    return cfg.integrand


def _run_cell(cfg: RunConfig, out: Path):
    f = _need_integrand(cfg)
    f.require_admissible("the cell pipeline")
    grid = cfg.cell_grid(f.d, default_n=256)
    x = cfg.point("x", f.d, default=[0.5] * f.d)
    z = cfg.point("z", f.d)
    if f.n != 1:
        raise ConfigError("'cell' solves a single-scale problem; use 'iterate' for n > 1")
    opts = cfg.solver
    if cfg.get("trace"):
        opts = SolverOptions(**{**opts.__dict__, "trace_path": str(out / "trace.csv")})
    sol = solve_cell(IntegrandSlice(f, x, [], grid, opts.eta), z, grid, opts)
    _write_csv(out / "cell.csv",
               [f"z{i}" for i in range(f.d)] + ["value", "grad_norm", "iterations", "converged"],
               [[*z, sol.value, sol.grad_norm, sol.iterations, sol.converged]])
    field_to_csv(sol.corrector, grid, out / "corrector.csv")
    return (0 if sol.converged else 1), {"converged": sol.converged, "value": sol.value}


def _run_iterate(cfg: RunConfig, out: Path):
    f = _need_integrand(cfg)
    grid = cfg.cell_grid(f.d, default_n=64)
    x = cfg.point("x", f.d, default=[0.5] * f.d)
    zgrid = cfg.zgrid(f.d)
    result = hom_iterate(f, x, zgrid, grid, cfg.solver,
                         kappa=float(cfg.get("kappa", 3.0)),
                         inner_spacing=cfg.get("inner_spacing"),
                         workers=cfg.workers,
                         keep_intermediate=bool(cfg.get("keep_intermediate", False)))
    if isinstance(result, tuple):
        table, inters = result
        for t in inters:
            save_table(t, out / f"fhom_level{t.level}.csv")
    else:
        table = result
    save_table(table, out / "fhom.csv")
    return (0 if table.converged else 1), {"converged": table.converged,
                                           "solves": table.solves}


def _run_joint(cfg: RunConfig, out: Path):
    f = _need_integrand(cfg)
    grid = cfg.cell_grid(f.d, default_n=32)
    x = cfg.point("x", f.d, default=[0.5] * f.d)
    z = cfg.point("z", f.d)
    res = hom_joint(f, x, z, grid, cfg.solver)
    _write_csv(out / "joint.csv",
               [f"z{i}" for i in range(f.d)] + ["value", "grad_norm", "iterations", "converged"],
               [[*z, res.value, res.grad_norm, res.iterations, res.converged]])
    for k, fld in enumerate(res.stack.fields, start=1):
        _write_csv(out / f"joint_corrector_{k}.csv", ["index", "value"],
                   [[i, float(v)] for i, v in enumerate(fld.ravel())])
    return (0 if res.converged else 1), {"converged": res.converged, "value": res.value}


def _run_eps(cfg: RunConfig, out: Path):
    f = _need_integrand(cfg)
    scales = cfg.scales()
    eps = float(cfg.require("eps"))
    dom = DomainSpec(d=f.d, M=cfg.domain_m(), z=tuple(cfg.point("z", f.d)))
    sol = solve_eps(f, scales, eps, dom, cfg.solver)
    affine = assemble_eps_energy(f, scales, eps, dom, dom.affine_field())
    _write_csv(out / "eps.csv",
               ["eps", "energy", "affine_energy", "iterations", "converged"],
               [[eps, sol.energy, affine, sol.iterations, sol.converged]])
    _write_csv(out / "u.csv", ["index", "value"],
               [[i, float(v)] for i, v in enumerate(sol.u)])
    return (0 if sol.converged else 1), {"converged": sol.converged, "energy": sol.energy}


def _run_gamma(cfg: RunConfig, out: Path):
    f = _need_integrand(cfg)
    scales = cfg.scales()
    eps_list = [float(e) for e in cfg.require("eps_list")]
    dom = DomainSpec(d=f.d, M=cfg.domain_m(), z=tuple(cfg.point("z", f.d)))
    ref = cfg.get("reference")
    rep = gamma_convergence_run(f, scales, eps_list, dom, z=dom.z, opts=cfg.solver,
                                reference=None if ref is None else float(ref),
                                cell_grid=cfg.cell_grid(f.d, default_n=128),
                                x_points=int(cfg.get("x_points", 8)))
    _write_csv(out / "gamma.csv",
               ["eps", "energy", "reference", "gap", "iterations", "converged"],
               [[r["eps"], r["energy"], r["reference"], r["gap"], r["iterations"],
                 r["converged"]] for r in rep.rows])
    flags = {"converged": rep.converged, "monotone_after_first": rep.monotone_after_first,
             "flagged_eps": rep.flagged_eps, "reference": rep.reference}
    return (0 if rep.converged else 1), flags


def _run_counterexample(cfg: RunConfig, out: Path):
    variant = str(cfg.require("variant"))
    h_list = [int(h) for h in cfg.require("h_list")]
    p = float(cfg.get("p", 2.0))
    m = cfg.get("samples")
    try:
        rep = counterexample_run(variant, h_list, p, M=None if m is None else int(m))
    except ValueError as err:
        raise ConfigError(str(err)) from None
    if variant == "diag_all":
        _write_csv(out / "counterexample.csv",
                   ["h", "trajectory_integral", "product_integral"],
                   [[r["h"], str(r["trajectory_integral"]), str(r["product_integral"])]
                    for r in rep.rows])
    else:
        _write_csv(out / "counterexample.csv",
                   ["h", "energy", "reference", "ratio"],
                   [[r["h"], str(r["energy"]), str(r["reference"]), str(r["ratio"])]
                    for r in rep.rows])
    return 0, {"variant": variant, "samples": rep.M, "index_cap": rep.index_cap}


def _run_young(cfg: RunConfig, out: Path):
    f = _need_integrand(cfg)
    scales = cfg.scales()
    eps = float(cfg.require("eps"))
    dom = DomainSpec(d=f.d, M=cfg.domain_m(), z=tuple(cfg.point("z", f.d)))
    sol = solve_eps(f, scales, eps, dom, cfg.solver)
    zr = cfg.get("z_range", [-4.0, 4.0])
    m = empirical_young(sol.u, dom, scales, eps,
                        y_bins=int(cfg.get("y_bins", 8)), z_bins=int(cfg.get("z_bins", 64)),
                        z_range=(float(zr[0]), float(zr[1])))
    histogram_to_csv(m, out / "young.csv")
    means, occupied = center_of_mass(m)
    rows = []
    for idx in np.ndindex(*occupied.shape):
        if occupied[idx]:
            rows.append([*idx] + [float(v) for v in np.atleast_1d(means[idx])])
    _write_csv(out / "centers.csv",
               [f"y{k}" for k in range(scales.n * f.d)] +
               [f"mean_z{a}" for a in range(f.d)], rows)
    return (0 if sol.converged else 1), {"converged": sol.converged,
                                         "overflow": m.overflow, "mass": m.mass()}


def _run_audit(cfg: RunConfig, out: Path):
    f = _need_integrand(cfg)
    spec = SamplingSpec(points=int(cfg.get("samples", 4096)),
                        z_max=float(cfg.get("z_max", 8.0)))
    reports = [check_convexity(f, spec)]
    audits_ok = True
    if getattr(f, "admissible", False):
        reports.append(check_growth(f, spec))
        reports.append(check_lipschitz(f, spec))
    rows = []
    for rep in reports:
        rows.append([rep.kind, rep.checked, rep.violations, rep.worst_margin])
        audits_ok &= rep.passed
        print(rep.summary())
    _write_csv(out / "audit.csv", ["check", "samples", "violations", "worst_margin"], rows)
    return (0 if audits_ok else 1), {"clean": audits_ok}


_RUNNERS = {
    "cell": _run_cell,
    "iterate": _run_iterate,
    "joint": _run_joint,
    "eps": _run_eps,
    "gamma": _run_gamma,
    "counterexample": _run_counterexample,
    "young": _run_young,
    "audit": _run_audit,
}


if __name__ == "__main__":
    sys.exit(main())
