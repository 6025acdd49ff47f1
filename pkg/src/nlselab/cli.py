"""Command line interface: run configuration, dispatch, manifests and output files.

A run is described by a flat sectioned TOML document::

    [domain]   kind, dim, center, half_widths, radius
    [grid]     nodes, dxi
    [model]    W, p, W_table, V, v2, v_center, V_table, alpha, sigma, h, h_list
    [solver]   ground-state optimizer options
    [evolve]   time stepping options
    [experiment] K, eps, deltas, ... (experiment parameters and seeds)
    [output]   dir

Every key has a default; the resolved configuration (defaults included) is
echoed into ``manifest.json`` together with the tool version, seeds,
wall-clock and a SHA-256 inventory of every output file.

Exit status: 0 when every gate of the subcommand passes, 1 when a gate
fails (the first failed gate is named on stderr and in ``verdict.json``),
2 for usage and configuration errors.
"""

from __future__ import annotations

import argparse
import datetime as _dt
import hashlib
import json
import os
import re
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import __version__, kernels
from .evolution import EvolutionError, EvolveOpts, evolve
from .experiments import (
    LocalizationOptions, PerturbationSpec, PhaseSpec, SweepResult, _clean, h1_localization_sweep,
    l2_localization_sweep, model_dict, newton_refinement_study, orbital_stability_run,
)
from .functionals import ActionScaling, DiagnosticsSample
from .grid import DomainSpec, build_grid, field_to_binary, field_to_csv, format_real
from .ground_state import GroundStateOptions, minimize_on_sphere
from .model import ModelError, ModelSpec, Nonlinearity, Potential, validate_conditions

SUBCOMMANDS = ("validate", "ground-state", "evolve", "stability", "sweep-l2", "sweep-h1", "newton")
LOCALIZATION_COMMANDS = ("sweep-l2", "sweep-h1")
CHARGE_GATE = 1e-8
ENERGY_GATE = 1e-6


# configuration schema ---------------------------------------------------------
@dataclass(frozen=True)
class Key:
    """One configuration key: value kind, default and optional choices."""

    kind: str
    default: object
    choices: tuple = ()


SCHEMA = {
    "domain": {
        "kind": Key("str", "box", ("box", "ball")),
        "dim": Key("int", 1),
        "center": Key("float_list", None),
        "half_widths": Key("float_list", None),
        "radius": Key("float", 1.0),
    },
    "grid": {
        "nodes": Key("int", 401),
        "dxi": Key("float", 0.05),
    },
    "model": {
        "W": Key("str", "sin_power", ("sin_power", "table", "zero")),
        "p": Key("float", 3.0),
        "W_table": Key("str", ""),
        "V": Key("str", "zero", ("zero", "quadratic", "table")),
        "v2": Key("float", 0.0),
        "v_center": Key("float_list", None),
        "V_table": Key("str", ""),
        "alpha": Key("float", 1.0),
        "sigma": Key("float", 1.0),
        "h": Key("float", 1.0),
        "h_list": Key("float_list", [0.4, 0.3, 0.2]),
    },
    "solver": {
        "method": Key("str", "cg", ("cg", "flow")),
        "tol_res": Key("float", 1e-8),
        "max_iter": Key("int", 2000),
        "n_starts": Key("int", 2),
        "dt_flow": Key("float", 1.0),
        "precondition": Key("bool", True),
        "seed": Key("int", 0),
    },
    "evolve": {
        "scheme": Key("str", "crank_nicolson", ("crank_nicolson", "strang_splitting")),
        "dt": Key("float", 1e-3),
        "T": Key("float", 1.0),
        "fp_tol": Key("float", 1e-12),
        "fp_max": Key("int", 200),
        "sample_every": Key("int", 10),
        "snapshot_times": Key("float_list", []),
        "kick": Key("float_list", []),
        "dtau": Key("float", 0.005),
        "n_samples": Key("int", 100),
    },
    "experiment": {
        "seed": Key("int", 0),
        "K": Key("float", 1.0),
        "eps": Key("float", 0.05),
        "setting": Key("str", "bounded", ("bounded", "large_box")),
        "fit_fraction": Key("float", 0.5),
        "w_fraction": Key("float", 0.0),
        "w_bumps": Key("int", 3),
        "w_width": Key("float", 1.0),
        "phase_fraction": Key("float", 0.0),
        "phase_direction": Key("float_list", None),
        "phase_profile": Key("str", "linear", ("linear", "boundary_flat")),
        "large_half_width": Key("float", 24.0),
        "boundary_mass_gate": Key("float", 1e-6),
        "deltas": Key("float_list", [0.1, 0.03, 0.01]),
        "ensemble": Key("int", 4),
        "n_phase_grid": Key("int", 256),
        "distance_fraction": Key("float", 0.9),
        "levels": Key("levels", [[201, 2e-3], [401, 1e-3], [801, 5e-4], [1601, 2.5e-4]]),
        "newton_T": Key("float", 1.6),
        "newton_kick": Key("float", 1.0),
        "check_times": Key("float_list", [round(0.1 * i, 10) for i in range(1, 16)]),
    },
    "output": {
        "dir": Key("str", "out"),
    },
}

_POSITIVE = {
    ("domain", "radius"), ("grid", "dxi"), ("model", "alpha"), ("model", "sigma"), ("model", "h"),
    ("solver", "tol_res"), ("solver", "dt_flow"), ("evolve", "dt"), ("evolve", "T"),
    ("evolve", "fp_tol"), ("evolve", "dtau"), ("experiment", "K"), ("experiment", "eps"),
    ("experiment", "w_width"), ("experiment", "large_half_width"),
    ("experiment", "boundary_mass_gate"), ("experiment", "fit_fraction"),
    ("experiment", "distance_fraction"), ("experiment", "newton_T"), ("solver", "max_iter"),
    ("solver", "n_starts"), ("evolve", "fp_max"), ("evolve", "sample_every"),
    ("evolve", "n_samples"), ("experiment", "ensemble"), ("experiment", "n_phase_grid"),
    ("experiment", "w_bumps"),
}


class ConfigError(ValueError):
    """Configuration errors, each ``(line, message)``; ``line`` may be ``None``."""

    def __init__(self, errors: list):
        self.errors = sorted(errors, key=lambda e: (e[0] is None, e[0] or 0, e[1]))
        super().__init__("\n".join(self.lines()))

    def lines(self) -> list[str]:
        return [f"line {ln}: {msg}" if ln is not None else msg for ln, msg in self.errors]


@dataclass
class RunConfig:
    """Resolved configuration: every key of :data:`SCHEMA` with its value."""

    values: dict
    lines: dict = field(default_factory=dict)
    defaulted: list = field(default_factory=list)
    overrides: dict = field(default_factory=dict)
    base_dir: str = "."

    def __getitem__(self, dotted: str):
        section, key = dotted.split(".")
        return self.values[section][key]

    def as_dict(self) -> dict:
        return json.loads(json.dumps(self.values))


# parsing ------------------------------------------------------------------------
_HEADER = re.compile(r"^\s*\[\s*([^\]]*?)\s*\]\s*(#.*)?$")
_KEYLINE = re.compile(r"^\s*(\"[^\"]*\"|'[^']*'|[A-Za-z0-9_\-.]+)\s*=")


def _scan_lines(text: str) -> tuple[dict, list]:
    """Map ``(section, key)`` to the line defining it and report duplicates.

    A light line scanner in front of the TOML parser, so that duplicate keys
    and sections are reported with both line numbers.
    """
    where, errors = {}, []
    sections = {}
    section = ""
    depth = 0
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0] if '"' not in raw and "'" not in raw else raw
        if depth == 0:
            m = _HEADER.match(line)
            if m and not line.lstrip().startswith("[["):
                section = m.group(1)
                if section in sections:
                    errors.append((ln, f"duplicate section [{section}] (first defined at line "
                                       f"{sections[section]}, again at line {ln})"))
                else:
                    sections[section] = ln
                    where[("", section)] = ln
                continue
            m = _KEYLINE.match(line)
            if m:
                key = m.group(1).strip("\"'")
                if (section, key) in where:
                    first = where[(section, key)]
                    name = f"{section}.{key}" if section else key
                    errors.append((ln, f"duplicate key '{name}' (first defined at line {first}, "
                                       f"again at line {ln})"))
                else:
                    where[(section, key)] = ln
                line = line[m.end():]
        depth += line.count("[") - line.count("]")
        depth = max(depth, 0)
    return where, errors


def _type_error(kind: str, value) -> str | None:
    def is_float(v):
        return isinstance(v, (int, float)) and not isinstance(v, bool)

    if kind == "float":
        return None if is_float(value) else "expected a number"
    if kind == "int":
        return None if isinstance(value, int) and not isinstance(value, bool) else "expected an integer"
    if kind == "bool":
        return None if isinstance(value, bool) else "expected true or false"
    if kind == "str":
        return None if isinstance(value, str) else "expected a string"
    if kind == "float_list":
        if not isinstance(value, list) or not all(is_float(v) for v in value):
            return "expected an array of numbers"
        return None
    if kind == "levels":
        ok = isinstance(value, list) and value and all(
            isinstance(v, list) and len(v) == 2 and isinstance(v[0], int)
            and not isinstance(v[0], bool) and is_float(v[1]) for v in value)
        return None if ok else "expected an array of [nodes, dt] pairs"
    raise AssertionError(kind)


def _coerce(kind: str, value):
    if kind == "float":
        return float(value)
    if kind == "float_list":
        return [float(v) for v in value]
    if kind == "levels":
        return [[int(n), float(d)] for n, d in value]
    return value


def parse_config(text: str, subcommand: str | None = None, overrides: dict | None = None,
                 base_dir: str = ".") -> RunConfig:
    """Parse and validate a configuration document.

    Parameters
    ----------
    text : str
        TOML document with the sections of :data:`SCHEMA`.
    subcommand : str, optional
        Enables command-specific constraints (the exponent range of the
        localization sweeps).
    overrides : dict, optional
        ``{"section.key": value}`` applied on top of the document (command
        line flags); validated like file values.
    base_dir : str
        Directory against which table paths are resolved.

    Returns
    -------
    RunConfig

    Raises
    ------
    ConfigError
        With every problem found, anchored to its line where possible.
    """
    where, errors = _scan_lines(text)
    if errors:
        raise ConfigError(errors)
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        m = re.search(r"line (\d+)", str(exc))
        raise ConfigError([(int(m.group(1)) if m else None, f"syntax error: {exc}")]) from None

    lines = {}
    values = {}
    defaulted = []
    for section, body in doc.items():
        ln = where.get(("", section))
        if section not in SCHEMA:
            errors.append((ln, f"unknown section [{section}]"))
            continue
        if not isinstance(body, dict):
            errors.append((ln, f"'{section}' must be a section"))
            continue
        for key, value in body.items():
            kln = where.get((section, key))
            if key not in SCHEMA[section]:
                errors.append((kln, f"unknown key '{section}.{key}'"))
            elif isinstance(value, dict):
                errors.append((kln, f"'{section}.{key}': nested tables are not allowed"))
            else:
                lines[(section, key)] = kln
    overrides = dict(overrides or {})
    for dotted in overrides:
        section, key = dotted.split(".")
        if key not in SCHEMA.get(section, {}):
            errors.append((None, f"unknown override '{dotted}'"))

    for section, keys in SCHEMA.items():
        values[section] = {}
        given = doc.get(section) if isinstance(doc.get(section), dict) else {}
        for key, spec in keys.items():
            dotted = f"{section}.{key}"
            if dotted in overrides:
                raw, origin = overrides[dotted], None
            elif key in given:
                raw, origin = given[key], lines.get((section, key))
            else:
                values[section][key] = spec.default
                defaulted.append(dotted)
                continue
            label = f"--{_FLAG_OF.get(dotted, dotted)}" if dotted in overrides else dotted
            msg = _type_error(spec.kind, raw)
            if msg:
                errors.append((origin, f"'{label}': {msg}, got {raw!r}"))
                continue
            if spec.choices and raw not in spec.choices:
                errors.append((origin, f"'{label}': must be one of {list(spec.choices)}, got {raw!r}"))
                continue
            values[section][key] = _coerce(spec.kind, raw)
            lines[(section, key)] = origin
    if errors:
        raise ConfigError(errors)

    cfg = RunConfig(values, lines, defaulted, overrides, base_dir)
    _resolve_derived(cfg)
    _check_constraints(cfg, subcommand, errors)
    if errors:
        raise ConfigError(errors)
    return cfg


_FLAG_OF = {"evolve.dt": "dt", "grid.nodes": "grid", "output.dir": "out",
            "solver.seed": "seed", "experiment.seed": "seed"}


def _resolve_derived(cfg: RunConfig) -> None:
    v = cfg.values
    dim = v["domain"]["dim"]
    if dim < 1:
        return
    for section, key, fill in (("domain", "center", 0.0), ("domain", "half_widths", 1.0),
                               ("model", "v_center", 0.0)):
        if v[section][key] is None:
            v[section][key] = [fill] * dim
    if v["experiment"]["phase_direction"] is None:
        v["experiment"]["phase_direction"] = [1.0] + [0.0] * (dim - 1)


def _check_constraints(cfg: RunConfig, subcommand: str | None, errors: list) -> None:
    v = cfg.values

    def err(dotted, msg):
        section, key = dotted.split(".")
        errors.append((cfg.lines.get((section, key)), f"'{dotted}': {msg}"))

    for section, key in sorted(_POSITIVE):
        if not v[section][key] > 0:
            err(f"{section}.{key}", f"must be positive, got {v[section][key]!r}")
    dim = v["domain"]["dim"]
    if not 1 <= dim <= 3:
        err("domain.dim", f"must be 1, 2 or 3, got {dim}")
        return
    for dotted in ("domain.center", "domain.half_widths", "model.v_center",
                   "experiment.phase_direction"):
        if len(cfg[dotted]) != dim:
            err(dotted, f"needs {dim} entries, got {len(cfg[dotted])}")
    if any(w <= 0 for w in v["domain"]["half_widths"]):
        err("domain.half_widths", "entries must be positive")
    if not any(v["experiment"]["phase_direction"]):
        err("experiment.phase_direction", "must be a nonzero vector")
    if v["evolve"]["kick"] and len(v["evolve"]["kick"]) != dim:
        err("evolve.kick", f"needs {dim} entries or none, got {len(v['evolve']['kick'])}")
    if v["grid"]["nodes"] < 8:
        err("grid.nodes", f"must be at least 8, got {v['grid']['nodes']}")
    m = v["model"]
    if m["W"] == "table" and not m["W_table"]:
        err("model.W_table", "required when model.W = 'table'")
    if m["V"] == "table" and not m["V_table"]:
        err("model.V_table", "required when model.V = 'table'")
    if m["v2"] < 0:
        err("model.v2", f"must be nonnegative, got {m['v2']}")
    if not m["p"] > 0:
        err("model.p", f"must be positive, got {m['p']}")
    hl = m["h_list"]
    if not hl or any(h <= 0 for h in hl) or any(b >= a for a, b in zip(hl, hl[1:])):
        err("model.h_list", f"must be positive and strictly decreasing, got {hl}")
    e = v["experiment"]
    if not 0 < e["eps"] < 1:
        err("experiment.eps", f"must lie in (0, 1), got {e['eps']}")
    if any(d <= 0 for d in e["deltas"]) or not e["deltas"]:
        err("experiment.deltas", "must be a nonempty list of positive numbers")
    if any(n < 8 or d <= 0 for n, d in e["levels"]):
        err("experiment.levels", "needs nodes >= 8 and dt > 0 in every level")
    if e["w_fraction"] < 0 or e["phase_fraction"] < 0:
        err("experiment.w_fraction" if e["w_fraction"] < 0 else "experiment.phase_fraction",
            "must be nonnegative")
    if any(t < 0 for t in v["evolve"]["snapshot_times"]):
        err("evolve.snapshot_times", "must be nonnegative")
    if subcommand in LOCALIZATION_COMMANDS:
        upper = 2.0 + 4.0 / dim
        p = m["p"]
        if not 2.0 < p < upper:
            err("model.p", f"{subcommand} needs 2 < p < 2 + 4/N = {upper:.6g} for N = {dim}, "
                           f"got p = {p:g}")
    if subcommand == "newton" and v["domain"]["kind"] != "box":
        err("domain.kind", "newton needs a box domain")


# builders -----------------------------------------------------------------------
def _resolve_path(cfg: RunConfig, path: str) -> str:
    return path if os.path.isabs(path) else os.path.join(cfg.base_dir, path)


def build_domain(cfg: RunConfig) -> DomainSpec:
    if cfg["domain.kind"] == "box":
        c = np.asarray(cfg["domain.center"])
        hw = np.asarray(cfg["domain.half_widths"])
        return DomainSpec.box(list(c - hw), list(c + hw))
    return DomainSpec.ball(cfg["domain.center"], cfg["domain.radius"])


def build_model(cfg: RunConfig) -> ModelSpec:
    dim = cfg["domain.dim"]
    if cfg["model.W"] == "table":
        W = Nonlinearity.from_table_csv(_resolve_path(cfg, cfg["model.W_table"]), cfg["model.p"])
    else:
        W = Nonlinearity(cfg["model.W"], cfg["model.p"])
    if cfg["model.V"] == "table":
        V = Potential.from_table_csv(_resolve_path(cfg, cfg["model.V_table"]), dim)
    elif cfg["model.V"] == "quadratic":
        V = Potential("quadratic", cfg["model.v2"], tuple(cfg["model.v_center"]))
    else:
        V = Potential()
    return ModelSpec(W=W, V=V, alpha=cfg["model.alpha"], sigma=cfg["model.sigma"], h=cfg["model.h"])


def build_gs_opts(cfg: RunConfig) -> GroundStateOptions:
    s = cfg.values["solver"]
    return GroundStateOptions(dt_flow=s["dt_flow"], tol_res=s["tol_res"], max_iter=s["max_iter"],
                              seed=s["seed"], n_starts=s["n_starts"], method=s["method"],
                              precondition=s["precondition"])


def build_localization_opts(cfg: RunConfig) -> LocalizationOptions:
    e = cfg.values["experiment"]
    return LocalizationOptions(
        domain=build_domain(cfg), dxi=cfg["grid.dxi"], dtau=cfg["evolve.dtau"],
        n_samples=cfg["evolve.n_samples"], fit_fraction=e["fit_fraction"],
        perturbation=PerturbationSpec(e["w_fraction"], e["w_bumps"], e["w_width"], e["seed"]),
        phase=PhaseSpec(e["phase_fraction"], tuple(e["phase_direction"]), e["phase_profile"]),
        large_half_width=e["large_half_width"], boundary_mass_gate=e["boundary_mass_gate"],
        gs_opts=build_gs_opts(cfg), fp_tol=cfg["evolve.fp_tol"])


def _scaling(model: ModelSpec, dim: int) -> ActionScaling:
    return ActionScaling.semiclassical(model.h, model.alpha, dim) if model.h != 1.0 else ActionScaling()


# output -------------------------------------------------------------------------
def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            h.update(chunk)
    return h.hexdigest()


def dumps_json(obj) -> str:
    return json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n"


class OutputDir:
    """Output directory that remembers every file written through it."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self.files = []

    def _target(self, name: str) -> Path:
        target = self.path / name
        target.parent.mkdir(parents=True, exist_ok=True)
        if name not in self.files:
            self.files.append(name)
        return target

    def write_text(self, name: str, text: str) -> None:
        with open(self._target(name), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)

    def write_json(self, name: str, obj) -> None:
        self.write_text(name, dumps_json(obj))

    def write_csv(self, name: str, header, rows) -> None:
        lines = [",".join(header)]
        lines += [",".join(format_real(x) for x in row) for row in rows]
        self.write_text(name, "\n".join(lines) + "\n")

    def write_with(self, name: str, writer, obj) -> None:
        writer(obj, self._target(name))

    def write_sweep(self, result: SweepResult) -> None:
        self.write_text("result.json", result.to_json())
        for label in sorted(result.traces):
            header, rows = result.traces[label]
            self.write_csv(f"traces/{label}.csv", header, rows)


def verify_manifest(out_dir) -> list[str]:
    """Recompute the digest of every file listed in ``manifest.json``.

    Returns a list of problems (empty when every file is present and matches).
    """
    out_dir = Path(out_dir)
    manifest = json.loads((out_dir / "manifest.json").read_text(encoding="utf-8"))
    problems = []
    for name, digest in manifest["files"].items():
        path = out_dir / name
        if not path.is_file():
            problems.append(f"{name}: missing")
        elif sha256_file(path) != digest:
            problems.append(f"{name}: digest mismatch")
    listed = set(manifest["files"]) | {"manifest.json"}
    for path in sorted(out_dir.rglob("*")):
        rel = path.relative_to(out_dir).as_posix()
        if path.is_file() and rel not in listed:
            problems.append(f"{rel}: not listed")
    return problems


# subcommands --------------------------------------------------------------------
def _gates_verdict(gates: dict, **extra) -> dict:
    gates = {k: bool(v) for k, v in gates.items()}
    first = next((k for k, ok in gates.items() if not ok), None)
    return {"passed": first is None, "gates": gates, "first_failed": first, **extra}


def run_validate(cfg: RunConfig, out: OutputDir, jobs: int) -> dict:
    model = build_model(cfg)
    grid = build_grid(build_domain(cfg), cfg["grid.nodes"])
    report = validate_conditions(model, dim=grid.dim, grid=grid)
    purposes = ("ground_state", "evolution", "localization_l2", "localization_h1")
    body = report.as_dict()
    body["purposes"] = {p: {"passed": report.passed(p), "failures": [f.name for f in report.failures(p)]}
                        for p in purposes}
    out.write_json("conditions.json", body)
    gates = {"conditions_ground_state": report.passed("ground_state"),
             "conditions_evolution": report.passed("evolution")}
    return _gates_verdict(gates, localization_l2=report.passed("localization_l2"),
                          localization_h1=report.passed("localization_h1"))


def _ground_state(cfg: RunConfig):
    model = build_model(cfg)
    grid = build_grid(build_domain(cfg), cfg["grid.nodes"])
    gs = minimize_on_sphere(model, grid, model.sigma, build_gs_opts(cfg), scaling=_scaling(model, grid.dim))
    return model, grid, gs


def run_ground_state(cfg: RunConfig, out: OutputDir, jobs: int) -> dict:
    model, grid, gs = _ground_state(cfg)
    out.write_with("ground_state.csv", field_to_csv, gs.u)
    summary = gs.summary()
    summary.update(h=model.h, nodes=list(grid.shape), spacing=list(grid.spacing))
    out.write_json("ground_state.json", summary)
    return _gates_verdict({"converged": gs.converged}, residual=gs.residual, **{"lambda": gs.lam},
                          m_value=gs.m_value)


def run_evolve(cfg: RunConfig, out: OutputDir, jobs: int) -> dict:
    model, grid, gs = _ground_state(cfg)
    kick = cfg["evolve.kick"] or [0.0] * grid.dim
    center = cfg["domain.center"]
    phase = sum(k * (X - c) for k, X, c in zip(kick, grid.coords, center))
    psi0 = grid.field(gs.u.values * np.exp(1j * phase / model.h))
    e = cfg.values["evolve"]
    opts = EvolveOpts(dt=e["dt"], T=e["T"], scheme=e["scheme"], fp_tol=e["fp_tol"], fp_max=e["fp_max"],
                      sample_every=e["sample_every"], snapshot_times=tuple(e["snapshot_times"]))
    try:
        rec = evolve(psi0, model, model.h, opts)
    except EvolutionError as exc:
        return _gates_verdict({"run_completed": False}, error=str(exc))
    out.write_csv("trajectory.csv", DiagnosticsSample.header(grid.dim), rec.rows())
    snaps = {}
    for t in sorted(rec.snapshots):
        name = f"snapshots/t_{format_real(t)}.bin"
        out.write_with(name, field_to_binary, rec.snapshots[t])
        snaps[name] = t
    summary = {"charge_drift": rec.max_charge_drift, "energy_drift": rec.max_energy_drift,
               "halvings": rec.halvings, "n_steps": rec.n_steps, "snapshots": snaps,
               "ground_state": gs.summary(), "kick": kick}
    out.write_json("evolve.json", summary)
    gates = {"run_completed": True, "charge": rec.max_charge_drift <= CHARGE_GATE,
             "energy": rec.max_energy_drift <= ENERGY_GATE}
    return _gates_verdict(gates, charge_drift=rec.max_charge_drift, energy_drift=rec.max_energy_drift)


def _sweep_verdict(result: SweepResult, out: OutputDir) -> dict:
    out.write_sweep(result)
    return {k: v for k, v in result.as_dict()["verdict"].items()}


def run_stability(cfg: RunConfig, out: OutputDir, jobs: int) -> dict:
    model = build_model(cfg)
    e = cfg.values["experiment"]
    result = orbital_stability_run(
        model, model.sigma, e["deltas"], cfg["evolve.T"], e["n_phase_grid"], e["ensemble"],
        domain=build_domain(cfg), nodes=cfg["grid.nodes"], dt=cfg["evolve.dt"], h=model.h,
        seed=e["seed"], gs_opts=build_gs_opts(cfg), distance_fraction=e["distance_fraction"],
        sample_every=cfg["evolve.sample_every"], jobs=jobs)
    return _sweep_verdict(result, out)


def _localization_conditions(cfg: RunConfig, purpose: str):
    model = build_model(cfg)
    grid = build_grid(build_domain(cfg), min(cfg["grid.nodes"], 101))
    report = validate_conditions(model, dim=grid.dim, grid=grid)
    return model, report, report.passed(purpose)


def run_sweep_l2(cfg: RunConfig, out: OutputDir, jobs: int) -> dict:
    model, report, ok = _localization_conditions(cfg, "localization_l2")
    if not ok:
        return _gates_verdict({"conditions": False},
                              failed_conditions=[f.name for f in report.failures("localization_l2")])
    result = l2_localization_sweep(model, cfg["experiment.K"], cfg["model.h_list"], cfg["evolve.T"],
                                   cfg["experiment.eps"], build_localization_opts(cfg), jobs)
    return _sweep_verdict(result, out)


def run_sweep_h1(cfg: RunConfig, out: OutputDir, jobs: int) -> dict:
    model, report, ok = _localization_conditions(cfg, "localization_h1")
    if not ok:
        return _gates_verdict({"conditions": False},
                              failed_conditions=[f.name for f in report.failures("localization_h1")])
    result = h1_localization_sweep(model, cfg["experiment.K"], cfg["model.h_list"], cfg["evolve.T"],
                                   cfg["experiment.eps"], cfg["experiment.setting"],
                                   build_localization_opts(cfg), jobs)
    return _sweep_verdict(result, out)


def run_newton(cfg: RunConfig, out: OutputDir, jobs: int) -> dict:
    model = build_model(cfg)
    e = cfg.values["experiment"]
    result = newton_refinement_study(
        model, domain=build_domain(cfg), levels=[tuple(lv) for lv in e["levels"]], T=e["newton_T"],
        check_times=e["check_times"], kick=e["newton_kick"], sigma=model.sigma,
        gs_opts=build_gs_opts(cfg), jobs=jobs)
    return _sweep_verdict(result, out)


RUNNERS = {
    "validate": run_validate, "ground-state": run_ground_state, "evolve": run_evolve,
    "stability": run_stability, "sweep-l2": run_sweep_l2, "sweep-h1": run_sweep_h1,
    "newton": run_newton,
}


def _seeds(cfg: RunConfig) -> dict:
    return {"solver": cfg["solver.seed"], "experiment": cfg["experiment.seed"]}


def dispatch(subcommand: str, cfg: RunConfig, jobs: int = 1, inputs: dict | None = None) -> int:
    """Run ``subcommand`` and write its outputs, ``verdict.json`` and ``manifest.json``.

    Returns
    -------
    int
        0 if every gate passed, 1 otherwise.
    """
    if subcommand not in RUNNERS:
        raise ValueError(f"unknown subcommand {subcommand!r}")
    out = OutputDir(cfg["output.dir"])
    started = _dt.datetime.now(_dt.timezone.utc)
    t0 = time.perf_counter()
    try:
        verdict = RUNNERS[subcommand](cfg, out, jobs)
    except (ModelError, ValueError, EvolutionError) as exc:
        verdict = _gates_verdict({"run_completed": False}, error=f"{type(exc).__name__}: {exc}")
    verdict = {"subcommand": subcommand, **verdict}
    out.write_json("verdict.json", verdict)
    elapsed = time.perf_counter() - t0
    manifest = {
        "tool": "nlselab",
        "version": __version__,
        "subcommand": subcommand,
        "config": cfg.as_dict(),
        "defaulted": sorted(cfg.defaulted),
        "overrides": dict(sorted(cfg.overrides.items())),
        "seeds": _seeds(cfg),
        "jobs": jobs,
        "kernel_backend": kernels.BACKEND,
        "model": model_dict(build_model(cfg)) if verdict.get("error") is None else None,
        "inputs": inputs or {},
        "files": {name: sha256_file(out.path / name) for name in sorted(out.files)},
        "passed": verdict["passed"],
        "first_failed": verdict["first_failed"],
        "wall_clock": {"started_utc": started.isoformat(), "elapsed_s": elapsed},
    }
    (out.path / "manifest.json").write_text(dumps_json(manifest), encoding="utf-8", newline="\n")
    return 0 if verdict["passed"] else 1


# command line -------------------------------------------------------------------
def _build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="TOML run configuration (defaults if omitted)")
    common.add_argument("--out", metavar="DIR", help="output directory (overrides output.dir)")
    common.add_argument("--seed", type=int, metavar="N", help="seed for the solver and the experiment")
    common.add_argument("--jobs", type=int, default=1, metavar="N", help="worker processes")
    common.add_argument("--dt", type=float, metavar="X", help="time step (overrides evolve.dt)")
    common.add_argument("--grid", type=int, metavar="N", help="nodes per axis (overrides grid.nodes)")
    parser = argparse.ArgumentParser(prog="nlselab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"nlselab {__version__}")
    sub = parser.add_subparsers(dest="subcommand", metavar="SUBCOMMAND", required=True)
    helps = {
        "validate": "check the model conditions",
        "ground-state": "compute a constrained minimizer",
        "evolve": "integrate from the (kicked) ground state",
        "stability": "orbital stability ensemble",
        "sweep-l2": "L2 localization sweep in h",
        "sweep-h1": "H1 localization sweep in h",
        "newton": "momentum and Newton laws under refinement",
    }
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def _overrides(args) -> dict:
    ov = {}
    if args.out is not None:
        ov["output.dir"] = args.out
    if args.seed is not None:
        ov["solver.seed"] = args.seed
        ov["experiment.seed"] = args.seed
    if args.dt is not None:
        ov["evolve.dt"] = args.dt
    if args.grid is not None:
        ov["grid.nodes"] = args.grid
    return ov


def _usage_failure(args, subcommand: str | None, messages: list[str]) -> int:
    for line in messages:
        print(f"nlselab: error: {line}", file=sys.stderr)
    if args is not None and args.out:
        out = OutputDir(args.out)
        out.write_json("verdict.json", {"subcommand": subcommand, "passed": False, "gates": {},
                                        "first_failed": "usage", "errors": messages})
    return 2


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    if args.jobs < 1:
        return _usage_failure(args, args.subcommand, ["--jobs must be at least 1"])
    inputs = {}
    if args.config:
        try:
            text = Path(args.config).read_text(encoding="utf-8")
        except (OSError, UnicodeDecodeError) as exc:
            return _usage_failure(args, args.subcommand, [f"cannot read config: {exc}"])
        inputs[os.path.basename(args.config)] = hashlib.sha256(text.encode("utf-8")).hexdigest()
        base_dir = os.path.dirname(os.path.abspath(args.config))
    else:
        text, base_dir = "", os.getcwd()
    try:
        cfg = parse_config(text, args.subcommand, _overrides(args), base_dir)
        for key in ("model.W_table", "model.V_table"):
            if cfg[key]:
                path = _resolve_path(cfg, cfg[key])
                inputs[os.path.basename(path)] = sha256_file(path)
        build_model(cfg)
    except ConfigError as exc:
        return _usage_failure(args, args.subcommand, exc.lines())
    except (OSError, ModelError, ValueError) as exc:
        return _usage_failure(args, args.subcommand, [str(exc)])
    status = dispatch(args.subcommand, cfg, args.jobs, inputs)
    verdict = json.loads((Path(cfg["output.dir"]) / "verdict.json").read_text(encoding="utf-8"))
    if status == 0:
        print(f"PASS {args.subcommand}")
    else:
        print(f"FAIL {args.subcommand}: first failed gate '{verdict['first_failed']}'", file=sys.stderr)
        if verdict.get("error"):
            print(f"  {verdict['error']}", file=sys.stderr)
    return status


if __name__ == "__main__":
    sys.exit(main())
