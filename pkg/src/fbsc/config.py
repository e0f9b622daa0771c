"""Run configuration: JSON schema, defaults, canonical hash and model construction."""

from __future__ import annotations

import copy
import hashlib
import json
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path

import jsonschema
import numpy as np

from .bath import BathSpec, SpectralDensity, discretize_exp_cutoff, discretize_linear_ohmic
from .errors import ConfigError, FBSCError
from .propagator import InitialSystemState, PropagationConfig
from .solver import SolverConfig
from .system import Harmonic, LinearCoupling, Morse, MorseCoupling, SystemSpec

_POSITIVE = {"type": "number", "exclusiveMinimum": 0}
_NONNEG = {"type": "number", "minimum": 0}
_COUNT = {"type": "integer", "minimum": 1}

SCHEMA = {
    "$schema": "https://json-schema.org/draft/2020-12/schema",
    "title": "fbsc run configuration",
    "type": "object",
    "required": ["system", "bath", "initial_state", "numerics", "output"],
    "additionalProperties": False,
    "properties": {
        "system": {
            "type": "object",
            "required": ["mass", "potential", "coupling"],
            "additionalProperties": False,
            "properties": {
                "mass": _POSITIVE,
                "potential": {"oneOf": [
                    {"type": "object", "additionalProperties": False, "required": ["kind", "omega"],
                     "properties": {"kind": {"const": "harmonic"}, "omega": _NONNEG}},
                    {"type": "object", "additionalProperties": False, "required": ["kind", "depth", "alpha"],
                     "properties": {"kind": {"const": "morse"}, "depth": _POSITIVE, "alpha": _POSITIVE}},
                ]},
                "coupling": {"oneOf": [
                    {"type": "object", "additionalProperties": False, "required": ["kind"],
                     "properties": {"kind": {"const": "linear"}}},
                    {"type": "object", "additionalProperties": False, "required": ["kind", "alpha"],
                     "properties": {"kind": {"const": "morse"}, "alpha": _POSITIVE}},
                ]},
                "counter_term": {"type": "boolean", "default": True},
            },
        },
        "bath": {
            "type": "object",
            "required": ["spectral_density", "n_modes", "omega_max"],
            "additionalProperties": False,
            "properties": {
                "spectral_density": {"oneOf": [
                    {"type": "object", "additionalProperties": False, "required": ["kind", "xi", "omega_c"],
                     "properties": {"kind": {"const": "exp_cutoff_ohmic"}, "xi": _NONNEG, "omega_c": _POSITIVE}},
                    {"type": "object", "additionalProperties": False, "required": ["kind", "gamma"],
                     "properties": {"kind": {"const": "linear_ohmic"}, "gamma": _NONNEG}},
                ]},
                "n_modes": _COUNT,
                "omega_max": _POSITIVE,
                "mode_mass": {**_POSITIVE, "default": 1.0},
                "discretization": {"enum": ["equal_spacing"], "default": "equal_spacing"},
            },
        },
        "initial_state": {
            "type": "object",
            "required": ["displacement"],
            "additionalProperties": False,
            "properties": {
                "displacement": {"type": "number"},
                "width": {"oneOf": [_POSITIVE, {"const": "ground_state"}], "default": "ground_state"},
                "beta": {"oneOf": [_POSITIVE, {"const": "inf"}], "default": "inf"},
                "bath_init": {"enum": ["wigner", "equilibrium", "rest"], "default": "wigner"},
            },
        },
        "numerics": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                "dt_max": _POSITIVE,
                "steps_per_period": {**_COUNT, "default": 32},
                "min_steps": {"type": "integer", "minimum": 2, "default": 16},
                "quadrature": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "center_nodes": {"type": "integer", "minimum": 2, "default": 8},
                        "offset_nodes": {"type": "integer", "minimum": 2, "default": 24},
                        "final_nodes": {"type": "integer", "minimum": 2, "default": 8},
                        "prune_tolerance": {**_NONNEG, "default": 1e-14},
                    },
                    "default": {},
                },
                "n_samples": {**_COUNT, "default": 200},
                "antithetic": {"type": "boolean", "default": False},
                "solver": {
                    "type": "object",
                    "additionalProperties": False,
                    "properties": {
                        "max_iterations": {"type": "integer", "minimum": 0, "default": 50},
                        "residual_tolerance": {**_POSITIVE, "default": 1e-10},
                        "step_scale": {**_POSITIVE, "maximum": 1, "default": 1.0},
                        "backtrack_factor": {**_POSITIVE, "maximum": 1, "default": 0.5},
                        "continuation_stages": {**_COUNT, "default": 1},
                    },
                    "default": {},
                },
                "seed": {"type": "integer", "minimum": 0, "default": 0},
                "hbar": {**_POSITIVE, "default": 1.0},
                "max_drop_fraction": {"type": "number", "minimum": 0, "maximum": 1, "default": 0.01},
                "trace_tolerance": {**_POSITIVE, "default": 0.05},
            },
            "default": {},
        },
        "output": {
            "type": "object",
            "required": ["t_grid"],
            "additionalProperties": False,
            "properties": {
                "t_grid": {"oneOf": [
                    {"type": "array", "items": _NONNEG, "minItems": 1},
                    {"type": "object", "additionalProperties": False, "required": ["stop", "num"],
                     "properties": {"start": {**_NONNEG, "default": 0.0}, "stop": _NONNEG, "num": _COUNT,
                                    "unit": {"enum": ["time", "period"], "default": "time"}}},
                ]},
                "path": {"type": "string", "default": "series.csv"},
            },
        },
    },
}


def _fill_defaults(schema, value):
    """Insert schema defaults into ``value`` in place, recursing through object properties."""
    if not isinstance(value, dict):
        return
    for key, sub in schema.get("properties", {}).items():
        if key not in value and "default" in sub:
            value[key] = copy.deepcopy(sub["default"])
        if key in value:
            if "oneOf" in sub:
                for branch in sub["oneOf"]:
                    if jsonschema.Draft202012Validator(branch).is_valid(value[key]):
                        _fill_defaults(branch, value[key])
                        break
            else:
                _fill_defaults(sub, value[key])


def validate(raw: dict) -> dict:
    """Schema-check ``raw`` and return a normalized copy with every default filled in."""
    validator = jsonschema.Draft202012Validator(SCHEMA)
    errors = sorted(validator.iter_errors(raw), key=lambda e: list(e.absolute_path))
    if errors:
        lines = [f"{'/'.join(map(str, e.absolute_path)) or '<root>'}: {e.message}" for e in errors]
        raise ConfigError("invalid configuration:\n  " + "\n  ".join(lines))
    cfg = copy.deepcopy(raw)
    _fill_defaults(SCHEMA, cfg)
    grid = cfg["output"]["t_grid"]
    if isinstance(grid, dict) and grid["stop"] < grid["start"]:
        raise ConfigError("output/t_grid: stop must not be below start")
    if isinstance(grid, list) and any(b <= a for a, b in zip(grid, grid[1:])):
        raise ConfigError("output/t_grid: times must be strictly increasing")
    return cfg


def load(path) -> dict:
    """Read and validate a JSON config file."""
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from exc
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path} is not valid JSON: {exc}") from exc
    return validate(raw)


def bundled(name: str) -> Path:
    """Path of a configuration shipped with the package, e.g. ``benchmark_va.json``."""
    return Path(str(resources.files("fbsc") / "data" / name))


def config_hash(cfg: dict) -> str:
    """sha256 of the normalized config without the output location."""
    body = validate(cfg)
    body["output"].pop("path", None)
    text = json.dumps(body, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode()).hexdigest()


@dataclass(frozen=True, eq=False)
class RunSetup:
    """Everything ``expectation_position`` needs, built from one normalized config."""

    system: SystemSpec
    bath: BathSpec
    state: InitialSystemState
    propagation: PropagationConfig
    t_grid: np.ndarray


def build_system(block) -> SystemSpec:
    pot = block["potential"]
    if pot["kind"] == "harmonic":
        potential = Harmonic(float(pot["omega"]))
    else:
        potential = Morse(float(pot["depth"]), float(pot["alpha"]))
    cpl = block["coupling"]
    coupling = LinearCoupling() if cpl["kind"] == "linear" else MorseCoupling(float(cpl["alpha"]))
    return SystemSpec(float(block["mass"]), potential, coupling, bool(block["counter_term"]))


def build_bath(block, system: SystemSpec, hbar=1.0) -> BathSpec:
    J = block["spectral_density"]
    n, wmax, m = block["n_modes"], float(block["omega_max"]), float(block["mode_mass"])
    if J["kind"] == "exp_cutoff_ohmic":
        return discretize_exp_cutoff(n, wmax, SpectralDensity.exp_cutoff(J["xi"], J["omega_c"], hbar), m)
    return discretize_linear_ohmic(n, wmax, float(J["gamma"]), m, system.mass)


def period_of(system: SystemSpec) -> float:
    if not system.frequency > 0:
        raise ConfigError("a period-based setting needs a system with positive frequency")
    return 2.0 * math.pi / system.frequency


def build_t_grid(block, system: SystemSpec) -> np.ndarray:
    grid = block["t_grid"]
    if isinstance(grid, list):
        return np.asarray(grid, dtype=float)
    unit = period_of(system) if grid["unit"] == "period" else 1.0
    return np.linspace(grid["start"], grid["stop"], grid["num"]) * unit


def build(cfg: dict) -> RunSetup:
    """Construct model objects from a normalized config (see ``validate``)."""
    try:
        num = cfg["numerics"]
        hbar = float(num["hbar"])
        system = build_system(cfg["system"])
        bath = build_bath(cfg["bath"], system, hbar)
        init = cfg["initial_state"]
        width = init["width"]
        if width == "ground_state":
            state = InitialSystemState.displaced_gaussian(init["displacement"], omega=system.frequency,
                                                          mass=system.mass, hbar=hbar)
        else:
            state = InitialSystemState.displaced_gaussian(init["displacement"], sigma=float(width))
        dt_max = num.get("dt_max")
        if dt_max is None:
            dt_max = period_of(system) / num["steps_per_period"]
        quad, sol = num["quadrature"], num["solver"]
        propagation = PropagationConfig(
            n_center_nodes=quad["center_nodes"],
            n_offset_nodes=quad["offset_nodes"],
            n_final_nodes=quad["final_nodes"],
            prune_tolerance=float(quad["prune_tolerance"]),
            n_samples=num["n_samples"],
            bath_init=init["bath_init"],
            beta=math.inf if init["beta"] == "inf" else float(init["beta"]),
            seed=num["seed"],
            antithetic=num["antithetic"],
            dt_max=float(dt_max),
            min_steps=num["min_steps"],
            solver=SolverConfig(**sol),
            max_drop_fraction=float(num["max_drop_fraction"]),
            trace_tolerance=float(num["trace_tolerance"]),
            hbar=hbar,
        )
        t_grid = build_t_grid(cfg["output"], system)
    except ConfigError:
        raise
    except FBSCError as exc:
        raise ConfigError(str(exc)) from exc
    return RunSetup(system, bath, state, propagation, t_grid)
