"""Experiment configuration: JSON schema, loading, overrides and object construction."""
from __future__ import annotations

import copy
import json
import os
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from ._validation import project_mean_zero
from .exceptions import InputError
from .grid import GridConfig, parse_mode
from .measure import (DiscreteMeasure, point_mass_mixture, power_law, random_measure, read_measure_csv,
                      uniform)
from .operators import (KernelSpec, ModulusOfContinuity, Operator, assemble_operator, random_operator,
                        read_kernel_csv)
from .weak import power_weight, read_weight_csv

ENV_PREFIX = "DYREP_"
BUNDLED_PREFIX = "bundled:"

# independent random streams, so adding a draw in one place never shifts another
STREAM_MEASURE, STREAM_OPERATOR, STREAM_FUNCTIONS = 0, 1, 2

_NUM = {"type": "number"}
_INTS = {"type": "array", "items": {"type": "integer"}}

SCHEMA = {
    "type": "object",
    "required": ["grid"],
    "additionalProperties": False,
    "properties": {
        "name": {"type": "string"},
        "grid": {
            "type": "object", "required": ["d", "N"], "additionalProperties": False,
            "properties": {"d": {"type": "integer", "minimum": 1, "maximum": 3},
                           "N": {"type": "integer", "minimum": 1, "maximum": 10}},
        },
        "measure": {
            "type": "object", "required": ["kind"],
            "properties": {
                "kind": {"enum": ["uniform", "power_law", "point_mass_mixture", "random", "csv"]},
                "a": _NUM, "center": {"type": "array", "items": _NUM},
                "cells": {"type": "array", "items": _INTS}, "weights": {"type": "array", "items": _NUM},
                "background": _NUM, "max_ratio": _NUM, "zero_fraction": _NUM, "path": {"type": "string"},
                "growth_constant": _NUM,
            },
        },
        "operator": {
            "type": "object", "required": ["kind"],
            "properties": {"kind": {"enum": ["kernel", "random", "kernel_csv", "zero"]},
                           "name": {"enum": ["hilbert", "riesz"]}, "path": {"type": "string"}},
        },
        "omega": {"type": "object"},
        "r": {"type": "integer", "minimum": 2},
        "k_max": {"type": "integer"},
        "k_values": _INTS,
        "mode": {"type": "string", "pattern": "^(exhaustive|mc:[0-9]+)$"},
        "seed": {"type": "integer", "minimum": 0},
        "normalization": {"enum": ["measured", "idealized"]},
        "tolerance": _NUM,
        "doubling_threshold": _NUM,
        "goodness_k": _INTS,
        "weights": {
            "type": "array",
            "items": {"type": "object", "required": ["id", "kind"],
                      "properties": {"id": {"type": "string"}, "kind": {"enum": ["one", "power", "csv"]},
                                     "alpha": _NUM, "x0": {"type": "array", "items": _NUM},
                                     "path": {"type": "string"}}},
        },
        "cz": {
            "type": "object",
            "properties": {"lambda": {"type": "number", "exclusiveMinimum": 0},
                           "function": {"type": "object", "required": ["kind"],
                                        "properties": {"kind": {"enum": ["atom", "random"]},
                                                       "cell": _INTS, "amplitude": _NUM}}},
        },
        "output": {
            "type": "object",
            "properties": {"dir": {"type": "string"}, "format": {"enum": ["json", "csv"]}},
        },
    },
}

DEFAULTS = {"r": 2, "mode": "exhaustive", "seed": 0, "normalization": "measured", "tolerance": 1e-10,
            "doubling_threshold": 1e3, "omega": {"power": 1.0}, "measure": {"kind": "uniform"},
            "operator": {"kind": "random"}, "output": {"dir": "dyrep-out", "format": "json"}}


def bundled_names() -> list[str]:
    root = resources.files("dyrep") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_config(source) -> tuple[dict, Path]:
    """Read and schema-check a config; returns it with the directory used for relative paths."""
    source = str(source)
    if source.startswith(BUNDLED_PREFIX):
        name = source[len(BUNDLED_PREFIX):]
        res = resources.files("dyrep") / "configs" / f"{name}.json"
        if not res.is_file():
            raise InputError(f"no bundled config {name!r}; available: {', '.join(bundled_names())}")
        text, base = res.read_text(encoding="utf-8"), Path.cwd()
        origin = source
    else:
        path = Path(source)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise InputError(f"{path}: cannot read config ({exc.strerror})") from None
        base, origin = path.resolve().parent, str(path)
    try:
        cfg = json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{origin}:{exc.lineno}: invalid JSON ({exc.msg})") from None
    validate_config(cfg, origin)
    return cfg, base


def validate_config(cfg: dict, origin: str = "config") -> None:
    try:
        jsonschema.validate(cfg, SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise InputError(f"{origin}: {where}: {exc.message}") from None


def resolve(cfg: dict, overrides: dict | None = None, environ=None) -> dict:
    """Defaults < config < DYREP_* environment < command-line flags."""
    environ = os.environ if environ is None else environ
    out = copy.deepcopy(DEFAULTS)
    for key, val in cfg.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict) and key != "omega":
            out[key] = {**out[key], **val} if key == "output" else copy.deepcopy(val)
        else:
            out[key] = copy.deepcopy(val)
    env = {key: environ[f"{ENV_PREFIX}{key.upper()}"] for key in ("mode", "normalization", "out", "format")
           if f"{ENV_PREFIX}{key.upper()}" in environ}
    if f"{ENV_PREFIX}SEED" in environ:
        try:
            env["seed"] = int(environ[f"{ENV_PREFIX}SEED"])
        except ValueError:
            raise InputError(f"{ENV_PREFIX}SEED must be an integer") from None
    for layer in (env, overrides or {}):
        for key, val in layer.items():
            if val is None:
                continue
            if key in ("out", "format"):
                out["output"]["dir" if key == "out" else "format"] = val
            else:
                out[key] = val
    parse_mode(out["mode"])
    if out["seed"] < 0 or out["seed"] >= 2**64:
        raise InputError("seed must be an unsigned 64-bit integer")
    validate_config(out, "resolved config")
    return out


def rng_for(cfg: dict, stream: int) -> np.random.Generator:
    return np.random.default_rng([cfg["seed"], stream])


def grid_of(cfg: dict) -> GridConfig:
    return GridConfig(cfg["grid"]["d"], cfg["grid"]["N"])


def build_measure(cfg: dict, base: Path) -> DiscreteMeasure:
    grid, spec = grid_of(cfg), cfg["measure"]
    kind = spec["kind"]
    if kind == "uniform":
        mu = uniform(grid)
    elif kind == "power_law":
        mu = power_law(grid, spec.get("a", 0.0), spec.get("center"))
    elif kind == "point_mass_mixture":
        mu = point_mass_mixture(grid, spec.get("cells", []), spec.get("weights", []), spec.get("background", 0.0))
    elif kind == "random":
        mu = random_measure(grid, rng_for(cfg, STREAM_MEASURE), spec.get("max_ratio", 1e6),
                            spec.get("zero_fraction", 0.2))
    else:
        if "path" not in spec:
            raise InputError("measure kind 'csv' needs a path")
        mu = read_measure_csv(base / spec["path"], grid)
    if "growth_constant" in spec:
        mu = DiscreteMeasure(grid, mu.masses, growth_constant=spec["growth_constant"])
    return mu


def build_omega(cfg: dict) -> ModulusOfContinuity:
    return ModulusOfContinuity.from_config(cfg["omega"])


def build_operator(cfg: dict, mu: DiscreteMeasure, base: Path) -> Operator:
    grid, spec = grid_of(cfg), cfg["operator"]
    kind = spec["kind"]
    if kind == "kernel":
        kernel = KernelSpec.builtin(spec.get("name", "hilbert"), grid.d, build_omega(cfg))
        return assemble_operator(kernel, mu, grid)
    if kind == "random":
        return random_operator(grid, mu, rng_for(cfg, STREAM_OPERATOR))
    if kind == "zero":
        return Operator.zeros(mu.masses)
    if "path" not in spec:
        raise InputError("operator kind 'kernel_csv' needs a path")
    return Operator(read_kernel_csv(base / spec["path"], grid), mu.masses)


def pairing_functions(cfg: dict, mu: DiscreteMeasure) -> tuple[np.ndarray, np.ndarray]:
    """Seeded mean-zero pair (f, g)."""
    rng = rng_for(cfg, STREAM_FUNCTIONS)
    n = mu.masses.size
    f = project_mean_zero(rng.standard_normal(n), mu)
    g = project_mean_zero(rng.standard_normal(n), mu)
    return f, g


def build_weights(cfg: dict, base: Path) -> list[tuple[str, np.ndarray]]:
    grid = grid_of(cfg)
    out = []
    for spec in cfg.get("weights", [{"id": "one", "kind": "one"}]):
        if spec["kind"] == "one":
            w = np.ones(grid.n_cells)
        elif spec["kind"] == "power":
            w = power_weight(grid, spec.get("alpha", 0.5), spec.get("x0"))
        else:
            if "path" not in spec:
                raise InputError(f"weight {spec['id']!r} of kind 'csv' needs a path")
            w = read_weight_csv(base / spec["path"], grid)
        out.append((spec["id"], w))
    return out


def cz_function(cfg: dict, mu: DiscreteMeasure) -> np.ndarray:
    grid = grid_of(cfg)
    spec = cfg.get("cz", {}).get("function", {"kind": "atom"})
    if spec["kind"] == "random":
        return np.abs(rng_for(cfg, STREAM_FUNCTIONS).standard_normal(grid.n_cells))
    f = np.zeros(grid.n_cells)
    cell = spec.get("cell")
    if cell is None:
        idx = int(np.argmax(mu.masses))
    else:
        m = grid.cells_per_side
        if len(cell) != grid.d or any(not 0 <= c < m for c in cell):
            raise InputError(f"cz.function.cell {cell} is not a cell of the grid")
        idx = int(np.ravel_multi_index(tuple(cell), (m,) * grid.d))
    f[idx] = spec.get("amplitude", 1.0)
    return f
