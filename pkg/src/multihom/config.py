"""Strict run-configuration parsing.

Configs are UTF-8 JSON; unknown keys are rejected with their path so typos
cannot silently corrupt a study. Syntax errors surface with line/column from
the JSON parser. A ``ConfigError`` maps to CLI exit code 2.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

from .cell_solver import SolverOptions
from .eps import ScaleFamily
from .fixtures import make_fixture
from .grid import PeriodicGrid
from .hom import ZGrid
from .integrand import Integrand, integrand_from_json

__all__ = ["ConfigError", "RunConfig", "load_config", "COMMANDS"]

COMMANDS = ("cell", "iterate", "joint", "eps", "gamma", "counterexample", "young", "audit")

# desk-scale caps: beyond these the dense solvers stop being interactive
MAX_CELL_N = 1024
MAX_DOMAIN_M = 8192

_COMMON_KEYS = {"command", "integrand", "output_dir", "seed", "workers", "solver"}
_KEYS = {
    "cell": {"x", "z", "cell_grid", "trace"},
    "iterate": {"x", "zgrid", "cell_grid", "kappa", "inner_spacing", "keep_intermediate"},
    "joint": {"x", "z", "cell_grid"},
    "eps": {"scales", "eps", "domain", "z"},
    "gamma": {"scales", "eps_list", "domain", "z", "reference", "cell_grid",
              "kappa", "inner_spacing", "x_points"},
    "counterexample": {"variant", "h_list", "p", "samples"},
    "young": {"scales", "eps", "domain", "z", "y_bins", "z_bins", "z_range"},
    "audit": {"samples", "z_max"},
}
_SOLVER_KEYS = {"tol_grad", "tol_energy", "max_iter", "eta", "step_rule", "stall_window"}


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    command: str
    raw: dict
    integrand: Integrand | None = None
    fixture_name: str | None = None
    output_dir: Path = Path("runs/latest")
    seed: int = 0
    workers: int = 1
    solver: SolverOptions = field(default_factory=SolverOptions)

    def get(self, key, default=None):
        return self.raw.get(key, default)

    def require(self, key):
        if key not in self.raw:
            raise ConfigError(f"command '{self.command}' requires config key '{key}'")
        return self.raw[key]

    # -- typed accessors -----------------------------------------------------

    def point(self, key, d, default=None):
        v = self.raw.get(key, default)
        if v is None:
            raise ConfigError(f"command '{self.command}' requires config key '{key}'")
        v = [float(c) for c in (v if isinstance(v, list) else [v])]
        if len(v) != d:
            raise ConfigError(f"'{key}' must have {d} component(s), got {len(v)}")
        return v

    def cell_grid(self, d, default_n=128) -> PeriodicGrid:
        spec = self.raw.get("cell_grid", {})
        if not isinstance(spec, dict):
            raise ConfigError("'cell_grid' must be an object like {\"N\": 128}")
        unknown = set(spec) - {"N", "d"}
        if unknown:
            raise ConfigError(f"unknown cell_grid key(s): {sorted(unknown)}")
        if "d" in spec and int(spec["d"]) != d:
            raise ConfigError(f"cell_grid dimension {spec['d']} conflicts with the integrand ({d})")
        n = int(spec.get("N", default_n))
        if n > MAX_CELL_N:
            raise ConfigError(f"cell grid N={n} exceeds the documented cap {MAX_CELL_N}")
        return PeriodicGrid(d=d, N=n)

    def zgrid(self, d) -> ZGrid:
        spec = self.require("zgrid")
        unknown = set(spec) - {"zmax", "m"}
        if unknown:
            raise ConfigError(f"unknown zgrid key(s): {sorted(unknown)}")
        return ZGrid(zmax=float(spec["zmax"]), m=int(spec["m"]), d=d)

    def scales(self) -> ScaleFamily:
        spec = self.require("scales")
        exps = []
        for e in spec:
            exps.append(Fraction(int(e[0]), int(e[1])) if isinstance(e, list) else Fraction(e))
        try:
            return ScaleFamily(tuple(exps))
        except ValueError as err:
            raise ConfigError(str(err)) from None

    def domain_m(self) -> int:
        spec = self.require("domain")
        unknown = set(spec) - {"M"}
        if unknown:
            raise ConfigError(f"unknown domain key(s): {sorted(unknown)}")
        m = int(spec["M"])
        if m > MAX_DOMAIN_M:
            raise ConfigError(f"domain grid M={m} exceeds the documented cap {MAX_DOMAIN_M}")
        return m


def _parse_solver(spec: dict) -> SolverOptions:
    unknown = set(spec) - _SOLVER_KEYS
    if unknown:
        raise ConfigError(f"unknown solver key(s): {sorted(unknown)}")
    kwargs = {}
    for k in _SOLVER_KEYS & set(spec):
        v = spec[k]
        if k == "max_iter" or k == "stall_window":
            kwargs[k] = int(v)
        elif k == "step_rule":
            kwargs[k] = str(v)
        elif k == "eta":
            kwargs[k] = None if v is None else float(v)
        else:
            kwargs[k] = float(v)
    try:
        return SolverOptions(**kwargs)
    except ValueError as err:
        raise ConfigError(f"bad solver options: {err}") from None


def _parse_integrand(spec, base: Path):
    if spec is None:
        return None, None
    if isinstance(spec, str):
        path = (base / spec).resolve() if not Path(spec).is_absolute() else Path(spec)
        if not path.exists():
            raise ConfigError(f"integrand file not found: {path}")
        with open(path, "r", encoding="utf-8") as fh:
            try:
                doc = json.load(fh)
            except json.JSONDecodeError as err:
                raise ConfigError(f"{path}: invalid JSON at line {err.lineno} column {err.colno}") from None
        try:
            return integrand_from_json(doc), None
        except (KeyError, ValueError) as err:
            raise ConfigError(f"{path}: {err}") from None
    if isinstance(spec, dict):
        if set(spec) == {"fixture"}:
            try:
                return make_fixture(spec["fixture"]), spec["fixture"]
            except ValueError as err:
                raise ConfigError(str(err)) from None
        try:
            return integrand_from_json(spec), None
        except (KeyError, ValueError) as err:
            raise ConfigError(f"inline integrand: {err}") from None
    raise ConfigError("'integrand' must be a file path, an inline object, or {\"fixture\": name}")


def load_config(path, command: str | None = None, overrides: dict | None = None) -> RunConfig:
    """Parse and validate a config file; ``overrides`` come from CLI flags."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    with open(path, "r", encoding="utf-8") as fh:
        try:
            raw = json.load(fh)
        except json.JSONDecodeError as err:
            raise ConfigError(f"{path}: invalid JSON at line {err.lineno} column {err.colno}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    raw.update(overrides or {})
    cmd = raw.get("command", command)
    if cmd is None:
        raise ConfigError("no command: pass a subcommand or set 'command' in the config")
    if command is not None and cmd != command:
        raise ConfigError(f"config names command '{cmd}' but the CLI asked for '{command}'")
    if cmd not in COMMANDS:
        raise ConfigError(f"unknown command '{cmd}'; choose from {COMMANDS}")
    allowed = _COMMON_KEYS | _KEYS[cmd]
    unknown = set(raw) - allowed
    if unknown:
        raise ConfigError(f"unknown config key(s) for '{cmd}': {sorted(unknown)} "
                          f"(allowed: {sorted(allowed)})")
    integrand, fixture = _parse_integrand(raw.get("integrand"), path.parent)
    solver = _parse_solver(raw.get("solver", {}))
    import os
    workers = int(raw.get("workers", 0)) or (os.cpu_count() or 1)
    return RunConfig(command=cmd, raw=raw, integrand=integrand, fixture_name=fixture,
                     output_dir=Path(raw.get("output_dir", f"runs/{cmd}")),
                     seed=int(raw.get("seed", 0)), workers=workers, solver=solver)
