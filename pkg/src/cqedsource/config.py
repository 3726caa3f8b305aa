"""TOML experiment configuration.

Every physical key carries its unit in its name (``g_mhz``, ``t_us``,
``intensity_mhz2``, ``d_mhz4_us``).  Frequencies are angular MHz.

Example::

    mode = "ideal"            # ideal | intensity-noise | loss | motion
    seed = 1
    n_range = [1, 10]         # inclusive; or n = [1, 3, 5]

    [branch]                  # identical branches; use [[branches]] for two
    g_mhz = 60.0
    delta_mhz = 1500.0
    kc_mhz = 25.0

    [pulse]
    shape = "square"
    intensity_mhz2 = 3600.0
    t_us = 30.0
"""
from __future__ import annotations

import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ConfigError, InvalidInputError
from .model import (
    ContinuumGrid,
    InitialSuperposition,
    PolarizationBranch,
    Pulse,
    Sampled,
    SampledPhase,
    SineSquaredRamp,
    Square,
    default_grid,
)
from .motion import MotionSpec
from .noise import DEFAULT_STEPS, NoiseSpec

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

MODES = ("ideal", "intensity-noise", "loss", "motion")

TOP_KEYS = {"mode", "seed", "output", "n_range", "n", "branch", "branches", "pulse",
            "superposition", "noise", "motion", "grid", "sweep"}
BRANCH_KEYS = {"g_mhz", "delta_mhz", "kc_mhz", "ka_mhz", "ka_over_kc", "strict"}
PULSE_KEYS = {"shape", "intensity_mhz2", "t_us", "ramp_fraction", "times_us",
              "intensity_samples_mhz2", "phase_rad", "phase_times_us", "phase_samples_rad"}
SUPERPOSITION_KEYS = {"c0", "c1"}
NOISE_KEYS = {"fr", "d_mhz4_us", "sample_count", "steps", "monte_carlo"}
MOTION_KEYS = {"omega0_mhz", "eta_l", "eta_r", "n_thermal", "n_max", "engine", "dt_us"}
GRID_KEYS = {"half_bandwidth_mhz", "mode_count"}
SWEEP_KEYS = {"variable", "values"}

COMMON_SWEEPS = {"g_mhz", "delta_mhz", "kc_mhz", "intensity_mhz2", "t_us"}
MODE_SWEEPS = {
    "ideal": COMMON_SWEEPS,
    "intensity-noise": COMMON_SWEEPS | {"fr", "d_mhz4_us"},
    "loss": COMMON_SWEEPS | {"ka_mhz", "ka_over_kc"},
    "motion": COMMON_SWEEPS | {"n_thermal", "eta", "eta_l", "eta_r", "omega0_mhz"},
}


def _unknown(section: str, table: dict, allowed: set) -> None:
    extra = sorted(set(table) - allowed)
    if extra:
        where = f"[{section}]" if section else "top level"
        raise ConfigError(f"unknown keys at {where}: {', '.join(extra)}")


def _table(raw: dict, key: str) -> dict:
    value = raw.get(key, {})
    if not isinstance(value, dict):
        raise ConfigError(f"[{key}] must be a table")
    return value


def _number(table: dict, key: str, section: str, default=None, required: bool = False) -> float:
    if key not in table:
        if required:
            raise ConfigError(f"missing required key {section}.{key}")
        return default
    value = table[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{section}.{key} must be a number, got {value!r}")
    value = float(value)
    if not math.isfinite(value):
        raise ConfigError(f"{section}.{key} must be finite")
    return value


def _complex(value, name: str) -> complex:
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        return complex(value)
    if isinstance(value, list) and len(value) == 2 and all(isinstance(v, (int, float)) for v in value):
        return complex(value[0], value[1])
    raise ConfigError(f"superposition.{name} must be a number or [re, im], got {value!r}")


@dataclass(frozen=True)
class Sweep:
    variable: str
    values: tuple


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    """Validated experiment description.

    ``params`` keeps the scalar inputs so that sweep points can be rebuilt
    with one value replaced.
    """

    mode: str
    branches: tuple
    pulse: Pulse
    superposition: InitialSuperposition
    n_values: tuple
    grid: ContinuumGrid
    noise: NoiseSpec | None = None
    motion: MotionSpec | None = None
    sweep: Sweep | None = None
    output: str | None = None
    seed: int = 0
    engine: str = "markov"
    dt: float | None = None
    params: dict = field(default_factory=dict, repr=False)

    @property
    def monte_carlo(self) -> bool:
        return bool(self.params.get("noise", {}).get("monte_carlo", False))

    def at(self, variable: str | None, value) -> "ExperimentConfig":
        """Configuration with one sweep variable set to ``value``."""
        if variable is None:
            return self
        params = _deep_copy(self.params)
        _apply(params, variable, value)
        return build_config(params, self.mode, self.n_values, self.sweep, self.output, self.seed)

    def with_seed(self, seed: int) -> "ExperimentConfig":
        return replace(self, seed=seed, noise=replace(self.noise, seed=seed) if self.noise else None)


def _deep_copy(params: dict) -> dict:
    return {k: ([dict(b) for b in v] if isinstance(v, list) else dict(v) if isinstance(v, dict) else v)
            for k, v in params.items()}


def _apply(params: dict, variable: str, value: float) -> None:
    value = float(value)
    if variable in ("g_mhz", "delta_mhz", "kc_mhz", "ka_mhz", "ka_over_kc"):
        for b in params["branches"]:
            b[variable] = value
            if variable == "ka_mhz":
                b.pop("ka_over_kc", None)
            if variable == "ka_over_kc":
                b.pop("ka_mhz", None)
    elif variable in ("intensity_mhz2", "t_us"):
        params["pulse"][variable] = value
    elif variable in ("fr", "d_mhz4_us"):
        params["noise"].pop("fr", None)
        params["noise"].pop("d_mhz4_us", None)
        params["noise"][variable] = value
    elif variable == "eta":
        params["motion"]["eta_l"] = value
        params["motion"]["eta_r"] = value
    elif variable in ("n_thermal", "eta_l", "eta_r", "omega0_mhz"):
        params["motion"][variable] = value
        if variable == "n_thermal" and not params.get("fixed_n_max", False):
            params["motion"].pop("n_max", None)
    else:  # pragma: no cover - guarded by the sweep check
        raise ConfigError(f"unknown sweep variable {variable!r}")


def _branch(table: dict, label: int, section: str) -> PolarizationBranch:
    _unknown(section, table, BRANCH_KEYS)
    g = _number(table, "g_mhz", section, required=True)
    delta = _number(table, "delta_mhz", section, required=True)
    kc = _number(table, "kc_mhz", section, required=True)
    if "ka_mhz" in table and "ka_over_kc" in table:
        raise ConfigError(f"{section}: give ka_mhz or ka_over_kc, not both")
    ka = _number(table, "ka_mhz", section, default=0.0)
    if "ka_over_kc" in table:
        ka = _number(table, "ka_over_kc", section) * kc
    for name, value in (("g_mhz (g)", g), ("delta_mhz (delta)", delta), ("kc_mhz (k_c)", kc)):
        if value <= 0:
            raise ConfigError(f"{section}.{name} must be > 0, got {value}")
    if ka < 0:
        raise ConfigError(f"{section}.ka_mhz (k_a) must be >= 0, got {ka}")
    try:
        return PolarizationBranch(g, delta, kc, ka, label, bool(table.get("strict", False)))
    except InvalidInputError as exc:
        raise ConfigError(f"{section}: {exc}") from exc


def _pulse(table: dict) -> Pulse:
    _unknown("pulse", table, PULSE_KEYS)
    shape = table.get("shape", "square")
    try:
        if shape == "square":
            body = Square(_number(table, "intensity_mhz2", "pulse", required=True),
                          _number(table, "t_us", "pulse", required=True))
        elif shape == "sine-squared":
            body = SineSquaredRamp(_number(table, "intensity_mhz2", "pulse", required=True),
                                   _number(table, "t_us", "pulse", required=True),
                                   _number(table, "ramp_fraction", "pulse", default=0.1))
        elif shape == "sampled":
            if "times_us" not in table or "intensity_samples_mhz2" not in table:
                raise ConfigError("sampled pulse needs pulse.times_us and pulse.intensity_samples_mhz2")
            body = Sampled(np.array(table["times_us"], float), np.array(table["intensity_samples_mhz2"], float),
                           _number(table, "t_us", "pulse"))
        else:
            raise ConfigError(f"pulse.shape must be square, sine-squared or sampled, got {shape!r}")
        if "phase_times_us" in table or "phase_samples_rad" in table:
            phase = SampledPhase(np.array(table.get("phase_times_us", []), float),
                                 np.array(table.get("phase_samples_rad", []), float))
        else:
            phase = _number(table, "phase_rad", "pulse", default=0.0)
        return Pulse(body, phase)
    except InvalidInputError as exc:
        raise ConfigError(f"pulse: {exc}") from exc


def _noise(table: dict, seed: int) -> NoiseSpec:
    _unknown("noise", table, NOISE_KEYS)
    if "fr" in table and "d_mhz4_us" in table:
        raise ConfigError("noise: fr and d_mhz4_us are mutually exclusive; give exactly one")
    if "fr" not in table and "d_mhz4_us" not in table:
        raise ConfigError("noise: one of fr or d_mhz4_us is required")
    try:
        return NoiseSpec(
            D=_number(table, "d_mhz4_us", "noise"),
            fr=_number(table, "fr", "noise"),
            seed=seed,
            sample_count=int(table.get("sample_count", 100_000)),
            steps=int(table.get("steps", DEFAULT_STEPS)),
        )
    except InvalidInputError as exc:
        raise ConfigError(f"noise: {exc}") from exc


def _motion(table: dict) -> MotionSpec:
    _unknown("motion", table, MOTION_KEYS)
    try:
        n_max = table.get("n_max")
        return MotionSpec(
            _number(table, "omega0_mhz", "motion", required=True),
            _number(table, "eta_l", "motion", default=0.0),
            _number(table, "eta_r", "motion", default=0.0),
            _number(table, "n_thermal", "motion", default=0.0),
            None if n_max is None else int(n_max),
        )
    except InvalidInputError as exc:
        raise ConfigError(f"motion: {exc}") from exc


def _n_values(raw: dict) -> tuple:
    if "n" in raw and "n_range" in raw:
        raise ConfigError("give n or n_range, not both")
    if "n" in raw:
        values = raw["n"]
        if not isinstance(values, list):
            values = [values]
    else:
        bounds = raw.get("n_range", [1, 1])
        if not (isinstance(bounds, list) and len(bounds) == 2):
            raise ConfigError("n_range must be [first, last]")
        values = list(range(int(bounds[0]), int(bounds[1]) + 1))
    if not values:
        raise ConfigError("photon-count range is empty")
    for v in values:
        if isinstance(v, bool) or int(v) != v or v < 0:
            raise ConfigError(f"photon counts must be non-negative integers, got {v!r}")
    return tuple(sorted({int(v) for v in values}))


def build_config(params: dict, mode: str, n_values: tuple, sweep: Sweep | None,
                 output: str | None, seed: int) -> ExperimentConfig:
    """Validate normalized parameter tables into an ExperimentConfig."""
    tables = params["branches"]
    branches = tuple(_branch(t, i if len(tables) == 2 else 0, f"branches[{i}]" if len(tables) == 2 else "branch")
                     for i, t in enumerate(tables))
    if len(branches) == 1:
        branches = (branches[0], replace(branches[0], label=1))
    pulse = _pulse(params["pulse"])
    sup = params.get("superposition") or {}
    _unknown("superposition", sup, SUPERPOSITION_KEYS)
    try:
        c = InitialSuperposition.normalized(_complex(sup.get("c0", 1 / math.sqrt(2)), "c0"),
                                            _complex(sup.get("c1", 1 / math.sqrt(2)), "c1"))
    except InvalidInputError as exc:
        raise ConfigError(f"superposition: {exc}") from exc
    noise = _noise(params["noise"], seed) if mode == "intensity-noise" else None
    motion = _motion(params["motion"]) if mode == "motion" else None
    kappa = max(b.k_c + b.k_a for b in branches)
    grid_table = params.get("grid") or {}
    _unknown("grid", grid_table, GRID_KEYS)
    if grid_table:
        grid = ContinuumGrid(_number(grid_table, "half_bandwidth_mhz", "grid", required=True),
                             int(_number(grid_table, "mode_count", "grid", required=True)))
    else:
        grid = default_grid(pulse.duration, kappa)
    grid.validate_for(pulse.duration, kappa)
    motion_table = params.get("motion") or {}
    engine = motion_table.get("engine", "markov")
    if engine not in ("markov", "explicit"):
        raise ConfigError(f"motion.engine must be markov or explicit, got {engine!r}")
    dt = _number(motion_table, "dt_us", "motion") if motion_table else None
    return ExperimentConfig(mode, branches, pulse, c, n_values, grid, noise, motion, sweep, output,
                            seed, engine, dt, params)


def parse_config(raw: dict[str, Any]) -> ExperimentConfig:
    """Validate a parsed TOML document."""
    _unknown("", raw, TOP_KEYS)
    mode = raw.get("mode")
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {', '.join(MODES)}, got {mode!r}")
    seed = raw.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or not 0 <= seed < 2**64:
        raise ConfigError(f"seed must be an unsigned 64-bit integer, got {seed!r}")
    if "branch" in raw and "branches" in raw:
        raise ConfigError("give [branch] (identical branches) or [[branches]], not both")
    if "branch" in raw:
        tables = [_table(raw, "branch")]
    elif "branches" in raw:
        tables = raw["branches"]
        if not isinstance(tables, list) or len(tables) not in (1, 2):
            raise ConfigError("[[branches]] must hold one or two tables")
    else:
        raise ConfigError("missing [branch] or [[branches]]")
    if "pulse" not in raw:
        raise ConfigError("missing [pulse]")
    for section in ("noise", "motion"):
        if section in raw and mode != {"noise": "intensity-noise", "motion": "motion"}[section]:
            raise ConfigError(f"[{section}] is not used in mode {mode!r}")
    if mode == "intensity-noise" and "noise" not in raw:
        raise ConfigError("mode intensity-noise requires [noise]")
    if mode == "motion" and "motion" not in raw:
        raise ConfigError("mode motion requires [motion]")
    params = {
        "branches": [dict(t) for t in tables],
        "pulse": dict(_table(raw, "pulse")),
        "superposition": dict(_table(raw, "superposition")),
        "noise": dict(_table(raw, "noise")),
        "motion": dict(_table(raw, "motion")),
        "grid": dict(_table(raw, "grid")),
    }
    params["fixed_n_max"] = "n_max" in params["motion"]
    sweep = None
    if "sweep" in raw:
        table = _table(raw, "sweep")
        _unknown("sweep", table, SWEEP_KEYS)
        variable = table.get("variable")
        if variable not in MODE_SWEEPS[mode]:
            raise ConfigError(
                f"sweep variable {variable!r} does not exist in mode {mode!r}; "
                f"choose from {', '.join(sorted(MODE_SWEEPS[mode]))}"
            )
        values = table.get("values")
        if not isinstance(values, list) or not values:
            raise ConfigError("sweep.values must be a non-empty list")
        if any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in values):
            raise ConfigError("sweep.values must be numbers")
        sweep = Sweep(variable, tuple(float(v) for v in values))
    output = raw.get("output")
    config = build_config(params, mode, _n_values(raw), sweep, output, seed)
    if sweep is not None:
        for value in sweep.values:  # fail before any work starts
            config.at(sweep.variable, value)
    return config


def load_config(path) -> ExperimentConfig:
    path = Path(path)
    try:
        text = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror}") from exc
    try:
        raw = tomllib.loads(text.decode("utf-8"))
    except (tomllib.TOMLDecodeError, UnicodeDecodeError) as exc:
        raise ConfigError(f"{path}: invalid TOML: {exc}") from exc
    return parse_config(raw)
