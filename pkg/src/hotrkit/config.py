"""Experiment configuration: schema validation, defaults, and hashing.

Configs are JSON documents. Unknown keys are rejected so typos fail loudly;
every section has defaults matching the reference beam study. A resolved
copy (defaults applied) is echoed next to the outputs of each run together
with its hash, which also stamps every artifact header.
"""

from __future__ import annotations

import copy
import hashlib
import json

import jsonschema

from .identify import GaConfig, ParameterSpace
from .mesh import CrackSpec, Mesh2D, build_mesh
from .model import Material, SensorSpec, default_penalty, default_sensor_columns
from .rom import SubstructureSplit
from .timedomain import IntegratorConfig


class ConfigError(ValueError):
    def __init__(self, message, paths=None):
        super().__init__(message)
        self.paths = paths or []


DEFAULTS = {
    "beam": {"length_mm": 1200.0, "height_mm": 200.0, "nx": 120, "ny": 20,
             "thickness_mm": 1.0},
    "material": {"E_mpa": 2.1e5, "rho_kg_m3": 7300.0, "nu": 0.26},
    "damping": {"zeta": 0.002},
    "contact": {"penalty_scale": 100.0},
    "load": {"midspan_deflection_mm": 2.0},
    "sensors": {"columns": None, "count": 4},
    "crack": None,
    "frequency": {"single_hz": 128.0,
                  "sweep": {"start_hz": 50.0, "stop_hz": 650.0, "count": 241}},
    "aft": {"harmonics": 5, "samples": 1024},
    "integrator": {"rho_inf": 0.7, "steps_per_period": 512,
                   "max_periods": 2000, "steady_tol": 1e-5,
                   "record_periods": 8},
    "rom": {"kind": "RB", "modes": 6, "band_rows": 4},
    "ga": {"population": 7, "generations": 40, "elite": 2,
           "crossover_fraction": 0.8, "mutation_scale": [30.0, 1.0],
           "mutation_shrink": 1.0},
    "noise": {"level_percent": 0.0},
    "measurement": {"periods": 100},
    "montecarlo": {"replicates": 50},
    "sdof": {"m": 1.0, "c": 0.02, "k": 0.9, "k0": 0.1, "delta": 0.0,
             "omega_f": 0.6, "harmonics": 8},
    "space": {"depths": [5.0, 10.0, 15.0]},
}

_POS = {"type": "number", "exclusiveMinimum": 0}
_POS_INT = {"type": "integer", "minimum": 1}

SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "beam": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "length_mm": _POS, "height_mm": _POS,
                "nx": _POS_INT, "ny": _POS_INT, "thickness_mm": _POS,
            },
        },
        "material": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "E_mpa": _POS, "rho_kg_m3": _POS,
                "nu": {"type": "number", "minimum": 0,
                       "exclusiveMaximum": 0.5},
            },
        },
        "damping": {
            "type": "object", "additionalProperties": False,
            "properties": {"zeta": {"type": "number", "minimum": 0}},
        },
        "contact": {
            "type": "object", "additionalProperties": False,
            "properties": {"penalty_scale": _POS},
        },
        "load": {
            "type": "object", "additionalProperties": False,
            "properties": {"midspan_deflection_mm": _POS},
        },
        "sensors": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "columns": {"type": ["array", "null"],
                            "items": {"type": "integer", "minimum": 0}},
                "count": _POS_INT,
            },
        },
        "crack": {
            "type": ["object", "null"], "additionalProperties": False,
            "properties": {
                "location_index": _POS_INT,
                "depth_percent": _POS,
            },
            "required": ["location_index", "depth_percent"],
        },
        "frequency": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "single_hz": _POS,
                "sweep": {
                    "type": "object", "additionalProperties": False,
                    "properties": {"start_hz": _POS, "stop_hz": _POS,
                                   "count": {"type": "integer", "minimum": 0}},
                },
            },
        },
        "aft": {
            "type": "object", "additionalProperties": False,
            "properties": {"harmonics": _POS_INT, "samples": _POS_INT},
        },
        "integrator": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "rho_inf": {"type": "number", "minimum": 0, "maximum": 1},
                "steps_per_period": {"type": "integer", "minimum": 64},
                "max_periods": _POS_INT,
                "steady_tol": _POS,
                "record_periods": _POS_INT,
            },
        },
        "rom": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "kind": {"enum": ["RB", "SUB", "full"]},
                "modes": _POS_INT,
                "band_rows": _POS_INT,
            },
        },
        "ga": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "population": {"type": "integer", "minimum": 2},
                "generations": _POS_INT,
                "elite": {"type": "integer", "minimum": 0},
                "crossover_fraction": {"type": "number", "minimum": 0,
                                       "maximum": 1},
                "mutation_scale": {"type": "array", "minItems": 2,
                                   "maxItems": 2,
                                   "items": {"type": "number", "minimum": 0}},
                "mutation_shrink": {"type": "number", "minimum": 0,
                                    "maximum": 1},
            },
        },
        "noise": {
            "type": "object", "additionalProperties": False,
            "properties": {"level_percent": {"type": "number", "minimum": 0}},
        },
        "measurement": {
            "type": "object", "additionalProperties": False,
            "properties": {"periods": _POS_INT},
        },
        "montecarlo": {
            "type": "object", "additionalProperties": False,
            "properties": {"replicates": _POS_INT},
        },
        "sdof": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "m": _POS, "c": {"type": "number", "minimum": 0},
                "k": {"type": "number", "minimum": 0},
                "k0": {"type": "number", "minimum": 0},
                "delta": {"type": "number"}, "omega_f": _POS,
                "harmonics": _POS_INT,
            },
        },
        "space": {
            "type": "object", "additionalProperties": False,
            "properties": {
                "depths": {"type": "array", "minItems": 1,
                           "items": _POS},
            },
        },
    },
}


def _merge_defaults(defaults, given):
    if not isinstance(defaults, dict):
        return copy.deepcopy(given)
    if given is None:
        return copy.deepcopy(defaults)
    out = copy.deepcopy(defaults)
    for key, val in given.items():
        if isinstance(defaults.get(key), dict):
            out[key] = _merge_defaults(defaults[key], val)
        else:
            out[key] = copy.deepcopy(val)
    return out


def validate_config(raw: dict) -> dict:
    """Validate against the schema and return a fully resolved copy."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        paths = ["$" + "".join(
            f"[{p!r}]" if isinstance(p, str) else f"[{p}]"
            for p in err.absolute_path
        ) for err in errors]
        details = "; ".join(
            f"{path}: {err.message}" for path, err in zip(paths, errors)
        )
        raise ConfigError(f"invalid configuration: {details}", paths=paths)
    resolved = {}
    for key, default in DEFAULTS.items():
        if key == "crack":
            resolved[key] = copy.deepcopy(raw.get(key, default))
        else:
            resolved[key] = _merge_defaults(default, raw.get(key))
    return resolved


def load_config(path) -> dict:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config is not valid JSON: {exc}") from exc
    return validate_config(raw)


def config_hash(resolved: dict) -> str:
    canonical = json.dumps(resolved, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canonical.encode()).hexdigest()


# --- object builders --------------------------------------------------------

def mesh_from_config(cfg: dict) -> Mesh2D:
    b = cfg["beam"]
    return build_mesh(b["length_mm"], b["height_mm"], b["nx"], b["ny"])


def material_from_config(cfg: dict) -> Material:
    m = cfg["material"]
    return Material(E=m["E_mpa"], rho=m["rho_kg_m3"], nu=m["nu"])


def sensors_from_config(cfg: dict, mesh: Mesh2D) -> list[SensorSpec]:
    s = cfg["sensors"]
    columns = s["columns"]
    if columns is None:
        columns = default_sensor_columns(mesh.nx, s["count"])
    top = (mesh.ny - 1) * mesh.nx
    for c in columns:
        if not 0 <= c < mesh.nx:
            raise ConfigError(f"sensor column {c} outside 0..{mesh.nx - 1}")
    return [SensorSpec(top + c) for c in columns]


def crack_from_config(cfg: dict) -> CrackSpec | None:
    c = cfg["crack"]
    if c is None:
        return None
    return CrackSpec(location_index=c["location_index"],
                     depth_percent=c["depth_percent"])


def penalty_from_config(cfg: dict, mesh: Mesh2D, mat: Material) -> float:
    return default_penalty(mesh, mat, cfg["beam"]["thickness_mm"],
                           scale=cfg["contact"]["penalty_scale"])


def integrator_from_config(cfg: dict) -> IntegratorConfig:
    i = cfg["integrator"]
    return IntegratorConfig(
        rho_inf=i["rho_inf"], steps_per_period=i["steps_per_period"],
        max_periods=i["max_periods"], steady_tol=i["steady_tol"],
        record_periods=i["record_periods"],
    )


def ga_from_config(cfg: dict, seed: int) -> GaConfig:
    g = cfg["ga"]
    return GaConfig(
        population=g["population"], max_generations=g["generations"],
        elite=g["elite"], crossover_fraction=g["crossover_fraction"],
        mutation_scale=tuple(g["mutation_scale"]),
        mutation_shrink=g["mutation_shrink"], seed=seed,
    )


def space_from_config(cfg: dict) -> ParameterSpace:
    return ParameterSpace(nx=cfg["beam"]["nx"],
                          depths=tuple(cfg["space"]["depths"]))


def split_from_config(cfg: dict) -> SubstructureSplit:
    return SubstructureSplit(band_rows=cfg["rom"]["band_rows"])
