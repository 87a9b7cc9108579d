"""TOML run configuration.

Every section is optional; missing keys take the defaults below, some of which
depend on the chosen built-in plant. Unknown keys are errors.
"""

from __future__ import annotations

import copy
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .data import ExcitationSpec
from .errors import ConfigurationError, InputError
from .plants import BUILTIN_PLANTS, PlantModel, plant_from_dict
from .simulation import SIM_MODES
from .smc import CANCEL_READINGS, SmcParams
from .synthesis import SynthesisConfig

PLANT_DEFAULTS = {
    "pendulum": {
        "excitation": {"T": 30, "input_range": [-0.5, 0.5]},
        "simulation": {"steps": 300},
    },
    # x1 and x1 exp(-x1) are nearly collinear along one slow trajectory
    "cart_spring": {
        "excitation": {"T": 150, "input_range": [-1.0, 1.0], "restarts": True, "x0_spread": 1.0},
        "simulation": {"steps": 1500},
    },
}

DEFAULTS = {
    "seed": 0,
    "plant": {"name": "pendulum"},
    "excitation": {
        "T": 30,
        "input_range": [-0.5, 0.5],
        "restarts": False,
        "x0_spread": 0.1,
    },
    "disturbance": {"delta": 0.01},
    "synthesis": {
        "N": [[1.0, 1.0]],
        "eps1": 1.0,
        "eps2": 1.0,
        "margin": 1e-6,
        "margin_fraction": 0.5,
        "solver_tol": 1e-9,
        "objective": "min_gamma",
        "successor": "X1",
        "uncertainty_gain": "PhiD",
        "gamma_cap": 1e6,
        "rank_tol": 1e-8,
    },
    "smc": {"q": 0.1, "sigma": 0.1, "rho": [0.5], "cancel": "x"},
    "simulation": {
        "x0": [1.0, 0.0],
        "steps": 300,
        "blowup": 1e6,
        "mode": "smc",
        "open_loop": False,
        "converge_tol": 0.05,
        "tail_fraction": 0.2,
    },
    "sweep": {"deltas": [0.01, 0.1, 0.2, 0.3, 0.4], "seeds": 10, "jobs": 1, "simulate": True},
}

# keys that may be absent even after defaults are merged
OPTIONAL_KEYS = {
    "excitation": {"x0"},
    "synthesis": {"solver"},
    "plant": {"params", "A_x", "A_q", "B", "D", "basis", "t_s"},
}


@dataclass(frozen=True)
class SimSettings:
    x0: tuple
    steps: int
    blowup: float
    mode: str
    open_loop: bool
    converge_tol: float
    tail_fraction: float


@dataclass(frozen=True)
class SweepSettings:
    deltas: tuple
    seeds: tuple
    jobs: int
    simulate: bool


@dataclass(frozen=True, eq=False)
class RunConfig:
    seed: int
    plant: PlantModel
    excitation: ExcitationSpec
    delta: float
    synthesis: SynthesisConfig
    smc: SmcParams
    cancel: str
    sim: SimSettings
    sweep: SweepSettings
    data: dict  # fully merged plain-data form, written as the run snapshot

    def dumps(self) -> str:
        return tomli_w.dumps(self.data)


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in override.items():
        where = f"{path}{key}"
        if key not in base and key not in OPTIONAL_KEYS.get(path.rstrip("."), set()):
            raise ConfigurationError(f"unknown configuration key {where!r}")
        if isinstance(base.get(key), dict) and key != "params":
            if not isinstance(value, dict):
                raise ConfigurationError(f"{where!r} must be a table")
            out[key] = _merge(base[key], value, where + ".")
        else:
            out[key] = copy.deepcopy(value)
    return out


def _defaults_for(raw: dict) -> dict:
    name = raw.get("plant", {}).get("name", DEFAULTS["plant"]["name"])
    base = copy.deepcopy(DEFAULTS)
    for section, values in PLANT_DEFAULTS.get(name, {}).items():
        base[section].update(values)
    return base


def _build_plant(section: dict) -> PlantModel:
    name = section.get("name")
    custom = {k: section[k] for k in ("A_x", "A_q", "B", "D", "basis", "t_s") if k in section}
    if custom:
        if "params" in section:
            raise ConfigurationError("plant.params only applies to built-in plants")
        return plant_from_dict({"name": name or "custom", **custom})
    if name not in BUILTIN_PLANTS:
        raise ConfigurationError(
            f"unknown plant {name!r}; use one of {sorted(BUILTIN_PLANTS)} or give A_x, A_q, B, D and basis"
        )
    try:
        return BUILTIN_PLANTS[name](**section.get("params", {}))
    except TypeError as exc:
        raise ConfigurationError(f"plant.params: {exc}") from None


def _seeds(value) -> tuple:
    if isinstance(value, int):
        if value < 1:
            raise ConfigurationError("sweep.seeds must be a positive count or a list of seeds")
        return tuple(range(value))
    return tuple(int(v) for v in value)


def from_dict(raw: dict) -> RunConfig:
    """Validate ``raw`` against the schema, fill defaults and build every component."""
    data = _merge(_defaults_for(raw), raw)
    try:
        plant = _build_plant(data["plant"])
        exc = data["excitation"]
        excitation = ExcitationSpec(
            T=exc["T"],
            input_range=tuple(exc["input_range"]),
            x0=tuple(exc["x0"]) if "x0" in exc else None,
            seed=int(data["seed"]),
            restarts=bool(exc["restarts"]),
            x0_spread=float(exc["x0_spread"]),
        )
        delta = float(data["disturbance"]["delta"])
        if not np.isfinite(delta) or delta < 0:
            raise ConfigurationError(f"disturbance.delta must be finite and >= 0, got {delta}")
        synthesis = SynthesisConfig(**data["synthesis"])
        smc_section = dict(data["smc"])
        cancel = smc_section.pop("cancel")
        if cancel not in CANCEL_READINGS:
            raise ConfigurationError(f"smc.cancel must be one of {CANCEL_READINGS}, got {cancel!r}")
        smc = SmcParams(N=synthesis.N, **smc_section)
        sim = SimSettings(**{**data["simulation"], "x0": tuple(data["simulation"]["x0"])})
        if sim.mode not in SIM_MODES:
            raise ConfigurationError(f"simulation.mode must be one of {SIM_MODES}, got {sim.mode!r}")
        if sim.steps < 1:
            raise ConfigurationError(f"simulation.steps must be >= 1, got {sim.steps}")
        if len(sim.x0) != plant.n_x:
            raise ConfigurationError(f"simulation.x0 needs {plant.n_x} entries, got {len(sim.x0)}")
        sw = data["sweep"]
        sweep = SweepSettings(
            deltas=tuple(float(d) for d in sw["deltas"]),
            seeds=_seeds(sw["seeds"]),
            jobs=int(sw["jobs"]),
            simulate=bool(sw["simulate"]),
        )
        if not sweep.deltas or not sweep.seeds:
            raise ConfigurationError("sweep needs at least one delta and one seed")
    except (InputError, TypeError, ValueError) as exc:
        if isinstance(exc, ConfigurationError):
            raise
        raise ConfigurationError(str(exc)) from None
    if synthesis.N.shape[1] != plant.n_x:
        raise ConfigurationError(f"synthesis.N has {synthesis.N.shape[1]} columns, plant has n_x={plant.n_x}")
    return RunConfig(
        seed=int(data["seed"]),
        plant=plant,
        excitation=excitation,
        delta=delta,
        synthesis=synthesis,
        smc=smc,
        cancel=cancel,
        sim=sim,
        sweep=sweep,
        data=data,
    )


def loads(text: str, overrides: dict | None = None) -> RunConfig:
    try:
        raw = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigurationError(f"invalid TOML: {exc}") from None
    for dotted, value in (overrides or {}).items():
        section = raw
        *parents, leaf = dotted.split(".")
        for p in parents:
            section = section.setdefault(p, {})
        section[leaf] = value
    return from_dict(raw)


def load(path, overrides: dict | None = None) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigurationError(f"cannot read config {path}: {exc}") from None
    return loads(text, overrides)
