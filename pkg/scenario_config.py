# scenario_config.py
"""
Scenario files: TOML loading, field-precise validation and the builders that
turn a scenario into a grid, an initial state, an observation plan and
diagnostics settings.
"""
from __future__ import annotations

import copy
import math
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from diagnose import DiagnosticsSettings
from grid_ops import CoefficientProfile, Grid1D, ProfileKind, apply_M, gaussian_pulse, make_grid
from observe import ObservationPlan, Sampler
from projectors import (
    AcousticParams,
    HyperbolicParams,
    Mode,
    PhysicalInputs,
    StateVector,
    StringParams,
    SystemKind,
    SystemParams,
    exact_project,
)
from propagate import max_speed
from utils import ConfigError, PreconditionError, setup_logger

# Configure logging
logger = setup_logger('scenario_config')

# A pulse must stay this many widths away from the domain boundary over the run
GUARD_WIDTHS = 6.0
DEFAULT_FRAMES = 11
SWEEP_AXES = ("epsilon", "delta1", "delta2", "beta", "noise_sigma", "dx", "dt", "points")

TOP_LEVEL_KEYS = {"name", "system", "grid", "params", "pulses", "observation", "diagnostics", "output"}
PARAM_KEYS = {
    SystemKind.STRING: {"c"},
    SystemKind.HYPERBOLIC: {"epsilon", "b_profile", "c_profile"},
    SystemKind.ACOUSTIC: {"gamma", "delta1", "delta2", "beta", "physical_inputs"},
}
PROFILE_KEYS = {"kind", "baseline", "amplitude", "center", "width"}
PHYSICAL_KEYS = {"mu", "kappa", "c_p", "c_v", "rho0", "c0", "lambda_scale"}
PULSE_KEYS = {"mode", "shape", "center", "width", "amplitude"}
OBSERVATION_KEYS = {"x_obs", "dx", "dt", "t_start", "t_end", "noise_sigma", "seed", "sampler"}
DIAGNOSTICS_KEYS = {"kappa", "spline_order", "knot_spacing", "threshold_frac", "t_zero",
                    "delta_speed", "delta_arrival"}
OUTPUT_KEYS = {"directory", "emit_plots", "frames"}


@dataclass(frozen=True)
class PulseSpec:
    mode: Mode
    center: float
    width: float
    amplitude: float
    shape: str = "gaussian"


@dataclass(frozen=True)
class OutputSettings:
    directory: Optional[str] = None
    emit_plots: bool = False
    frames: int = DEFAULT_FRAMES


@dataclass(frozen=True, eq=False)
class ScenarioConfig:
    """Validated scenario; `raw` is the echo written into manifests"""
    raw: Dict[str, Any]
    name: str
    system: SystemKind
    grid: Grid1D
    params: SystemParams
    pulses: Tuple[PulseSpec, ...]
    plan: ObservationPlan
    settings: DiagnosticsSettings
    output: OutputSettings

    def to_dict(self) -> Dict[str, Any]:
        return copy.deepcopy(self.raw)

    def simulation_times(self) -> np.ndarray:
        """Frame times spread uniformly over [t_start, t_end]"""
        return np.linspace(self.plan.t_start, self.plan.t_end, self.output.frames)

    def build_initial_state(self) -> StateVector:
        return build_initial_state(self.system, self.grid, self.params, self.pulses)

    def pulse_modes(self) -> List[Mode]:
        return [pulse.mode for pulse in self.pulses]

    def with_value(self, axis: str, value: float) -> "ScenarioConfig":
        """Copy of the scenario with one sweep axis set to value"""
        if axis not in SWEEP_AXES:
            raise ConfigError(f"--axis: unknown sweep axis {axis!r} (expected one of {', '.join(SWEEP_AXES)})")
        raw = self.to_dict()
        if axis == "epsilon":
            if self.system is not SystemKind.HYPERBOLIC:
                raise ConfigError(f"--axis: epsilon applies to hyperbolic scenarios, not {self.system.value}")
            raw["params"]["epsilon"] = value
        elif axis in ("delta1", "delta2", "beta"):
            if self.system is not SystemKind.ACOUSTIC:
                raise ConfigError(f"--axis: {axis} applies to acoustic scenarios, not {self.system.value}")
            params = raw["params"]
            if axis != "beta" and "physical_inputs" in params:
                # dissipation numbers are swept directly, so they no longer derive from gas properties
                params.pop("physical_inputs")
                params["gamma"] = self.params.gamma
                params["delta1"] = self.params.delta1
                params["delta2"] = self.params.delta2
            params[axis] = value
        elif axis == "points":
            if float(value) != int(value):
                raise ConfigError(f"--values: points must be integers, got {value}")
            raw["grid"]["points"] = int(value)
        else:
            raw.setdefault("observation", {})[axis] = value
        return parse_config(raw)


def _is_number(value: Any) -> bool:
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _check_keys(table: Dict[str, Any], allowed, path: str):
    if not isinstance(table, dict):
        raise ConfigError(f"{path}: expected a table")
    unknown = sorted(set(table) - set(allowed))
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {', '.join(unknown)}")


def _number(table: Dict[str, Any], key: str, path: str, default: Any = None, required: bool = False) -> Optional[float]:
    if key not in table:
        if required:
            raise ConfigError(f"{path}.{key}: missing")
        return default
    value = table[key]
    if not _is_number(value) or not math.isfinite(value):
        raise ConfigError(f"{path}.{key}: expected a finite number, got {value!r}")
    return float(value)


def _integer(table: Dict[str, Any], key: str, path: str, default: Any = None, required: bool = False) -> Optional[int]:
    if key not in table:
        if required:
            raise ConfigError(f"{path}.{key}: missing")
        return default
    value = table[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{path}.{key}: expected an integer, got {value!r}")
    return value


def _guarded(path: str, build):
    """Run a constructor and report its precondition failure under the field path"""
    try:
        return build()
    except PreconditionError as e:
        raise ConfigError(f"{path}: {e}") from e


def _parse_profile(table: Dict[str, Any], path: str) -> CoefficientProfile:
    _check_keys(table, PROFILE_KEYS, path)
    kind = table.get("kind", ProfileKind.CONSTANT.value)
    if kind not in {item.value for item in ProfileKind}:
        raise ConfigError(f"{path}.kind: unknown profile kind {kind!r}")
    return _guarded(path, lambda: CoefficientProfile(
        kind=ProfileKind(kind),
        baseline=_number(table, "baseline", path, 1.0),
        amplitude=_number(table, "amplitude", path, 0.0),
        center=_number(table, "center", path, 0.0),
        width=_number(table, "width", path, 1.0),
    ))


def _parse_params(system: SystemKind, table: Dict[str, Any], grid: Grid1D) -> SystemParams:
    path = "params"
    _check_keys(table, PARAM_KEYS[system], path)
    if system is SystemKind.STRING:
        return _guarded(path, lambda: StringParams(c=_number(table, "c", path, 1.0)))

    if system is SystemKind.HYPERBOLIC:
        params = _guarded(path, lambda: HyperbolicParams(
            b_profile=_parse_profile(table.get("b_profile", {}), "params.b_profile"),
            c_profile=_parse_profile(table.get("c_profile", {}), "params.c_profile"),
            epsilon=_number(table, "epsilon", path, 0.0),
        ))
        _guarded("params.b_profile", lambda: params.b(grid))
        _guarded("params.c_profile", lambda: params.c(grid))
        return params

    inputs = None
    if "physical_inputs" in table:
        sub = table["physical_inputs"]
        _check_keys(sub, PHYSICAL_KEYS, "params.physical_inputs")
        inputs = _guarded("params.physical_inputs", lambda: PhysicalInputs(
            **{key: _number(sub, key, "params.physical_inputs", required=True) for key in sorted(PHYSICAL_KEYS)}
        ))
    beta = _number(table, "beta", path, 0.0)
    if inputs is not None:
        return _guarded(path, lambda: AcousticParams(
            gamma=_number(table, "gamma", path, inputs.gamma()),
            delta1=_number(table, "delta1", path, inputs.delta1()),
            delta2=_number(table, "delta2", path, inputs.delta2()),
            beta=beta,
            physical_inputs=inputs,
        ))
    return _guarded(path, lambda: AcousticParams(
        gamma=_number(table, "gamma", path, 1.4),
        delta1=_number(table, "delta1", path, 0.0),
        delta2=_number(table, "delta2", path, 0.0),
        beta=beta,
    ))


def _parse_pulses(system: SystemKind, entries: Any, grid: Grid1D) -> Tuple[PulseSpec, ...]:
    if not isinstance(entries, list) or not entries:
        raise ConfigError("pulses: at least one [[pulses]] entry is required")
    pulses = []
    for index, table in enumerate(entries):
        path = f"pulses[{index}]"
        _check_keys(table, PULSE_KEYS, path)
        mode = table.get("mode")
        if mode not in {item.value for item in Mode}:
            raise ConfigError(f"{path}.mode: expected right, left or entropy, got {mode!r}")
        if mode == Mode.ENTROPY.value and system is not SystemKind.ACOUSTIC:
            raise ConfigError(f"{path}.mode: entropy pulses need the acoustic system")
        shape = table.get("shape", "gaussian")
        if shape != "gaussian":
            raise ConfigError(f"{path}.shape: only gaussian pulses are supported, got {shape!r}")
        pulse = PulseSpec(
            mode=Mode(mode),
            center=_number(table, "center", path, required=True),
            width=_number(table, "width", path, required=True),
            amplitude=_number(table, "amplitude", path, 1.0),
        )
        minimum = 4.0 * grid.spacing
        if pulse.width < minimum:
            raise ConfigError(f"{path}.width: {pulse.width:g} is below 4 grid spacings ({minimum:.4g})")
        _guarded(path, lambda: gaussian_pulse(grid, pulse.center, pulse.width, pulse.amplitude))
        pulses.append(pulse)
    return tuple(pulses)


def _parse_plan(system: SystemKind, table: Dict[str, Any], grid: Grid1D) -> ObservationPlan:
    path = "observation"
    _check_keys(table, OBSERVATION_KEYS, path)
    default_sampler = Sampler.STENCIL if system is SystemKind.STRING else Sampler.DIRECT
    sampler = table.get("sampler", default_sampler.value)
    if sampler not in {item.value for item in Sampler}:
        raise ConfigError(f"{path}.sampler: expected stencil or direct, got {sampler!r}")
    if sampler == Sampler.STENCIL.value and system is not SystemKind.STRING:
        raise ConfigError(f"{path}.sampler: the stencil sampler needs the string system")
    dt = _number(table, "dt", path, required=True)
    dx = _number(table, "dx", path, 0.0)
    if sampler == Sampler.STENCIL.value and dx < grid.spacing:
        raise ConfigError(f"{path}.dx: {dx:g} is below the grid spacing ({grid.spacing:.4g})")
    x_obs = _number(table, "x_obs", path, 0.0)
    if not -grid.length / 2 <= x_obs < grid.length / 2:
        raise ConfigError(f"{path}.x_obs: {x_obs:g} lies outside the domain")
    if not dt > 0:
        raise ConfigError(f"{path}.dt: must be positive, got {dt:g}")
    seed = _integer(table, "seed", path, 0)
    return _guarded(path, lambda: ObservationPlan.spanning(
        x_obs=x_obs,
        t_start=_number(table, "t_start", path, 0.0),
        t_end=_number(table, "t_end", path, required=True),
        dt=dt,
        dx=dx,
        sigma=_number(table, "noise_sigma", path, 0.0),
        seed=seed,
        sampler=Sampler(sampler),
    ))


def _parse_settings(table: Dict[str, Any]) -> DiagnosticsSettings:
    path = "diagnostics"
    _check_keys(table, DIAGNOSTICS_KEYS, path)
    return _guarded(path, lambda: DiagnosticsSettings(
        kappa=_number(table, "kappa", path, 3.0),
        spline_order=_integer(table, "spline_order", path, 3),
        knot_spacing=_number(table, "knot_spacing", path, None),
        threshold_frac=_number(table, "threshold_frac", path, 0.05),
        t_zero=_number(table, "t_zero", path, 0.0),
        delta_speed=_number(table, "delta_speed", path, 0.0),
        delta_arrival=_number(table, "delta_arrival", path, 0.0),
    ))


def _parse_output(table: Dict[str, Any]) -> OutputSettings:
    path = "output"
    _check_keys(table, OUTPUT_KEYS, path)
    directory = table.get("directory")
    if directory is not None and not isinstance(directory, str):
        raise ConfigError(f"{path}.directory: expected a string")
    emit_plots = table.get("emit_plots", False)
    if not isinstance(emit_plots, bool):
        raise ConfigError(f"{path}.emit_plots: expected true or false")
    frames = _integer(table, "frames", path, DEFAULT_FRAMES)
    if frames < 2:
        raise ConfigError(f"{path}.frames: at least 2 frames are required, got {frames}")
    return OutputSettings(directory=directory, emit_plots=emit_plots, frames=frames)


def _check_guard_band(system: SystemKind, grid: Grid1D, params: SystemParams,
                      pulses: Tuple[PulseSpec, ...], plan: ObservationPlan):
    """Every pulse must stay GUARD_WIDTHS widths inside the domain until the last sample"""
    horizon = plan.t_end + (plan.dt if plan.sampler is Sampler.STENCIL else 0.0)
    speed = max_speed(params, grid)
    half = grid.length / 2
    for index, pulse in enumerate(pulses):
        if pulse.mode is Mode.RIGHT:
            extreme = pulse.center + speed * horizon
        elif pulse.mode is Mode.LEFT:
            extreme = pulse.center - speed * horizon
        else:
            extreme = pulse.center
        margin = half - abs(extreme)
        if margin < GUARD_WIDTHS * pulse.width:
            raise ConfigError(
                f"pulses[{index}]: reaches x={extreme:.4g} by t={horizon:g}, only {margin:.3g} from the "
                f"boundary (needs {GUARD_WIDTHS:g} widths = {GUARD_WIDTHS * pulse.width:.3g})"
            )


def parse_config(data: Dict[str, Any]) -> ScenarioConfig:
    """
    Validate a scenario mapping.

    Raises:
        ConfigError: naming the offending field path
    """
    _check_keys(data, TOP_LEVEL_KEYS, "config")
    system_name = data.get("system")
    if system_name not in {item.value for item in SystemKind}:
        raise ConfigError(f"system: expected string, hyperbolic or acoustic, got {system_name!r}")
    system = SystemKind(system_name)
    name = data.get("name", system.value)
    if not isinstance(name, str):
        raise ConfigError("name: expected a string")

    grid_table = data.get("grid")
    if grid_table is None:
        raise ConfigError("grid: missing")
    _check_keys(grid_table, {"length", "points"}, "grid")
    grid = _guarded("grid", lambda: make_grid(
        _number(grid_table, "length", "grid", required=True),
        _integer(grid_table, "points", "grid", required=True),
    ))

    params = _parse_params(system, data.get("params", {}), grid)
    pulses = _parse_pulses(system, data.get("pulses"), grid)
    if "observation" not in data:
        raise ConfigError("observation: missing")
    plan = _parse_plan(system, data["observation"], grid)
    settings = _parse_settings(data.get("diagnostics", {}))
    output = _parse_output(data.get("output", {}))
    _check_guard_band(system, grid, params, pulses, plan)

    return ScenarioConfig(
        raw=copy.deepcopy(data),
        name=name,
        system=system,
        grid=grid,
        params=params,
        pulses=pulses,
        plan=plan,
        settings=settings,
        output=output,
    )


def load_config(path: str) -> ScenarioConfig:
    """Read and validate a TOML scenario file"""
    try:
        with open(path, "rb") as handle:
            data = tomllib.load(handle)
    except FileNotFoundError as e:
        raise ConfigError(f"Config file {path} not found") from e
    except tomllib.TOMLDecodeError as e:
        raise ConfigError(f"{path}: {e}") from e
    config = parse_config(data)
    logger.debug(f"Loaded {config.system.value} scenario {config.name!r} from {path}")
    return config


def _pulse_state(system: SystemKind, grid: Grid1D, params: SystemParams, pulse: PulseSpec) -> StateVector:
    g = gaussian_pulse(grid, pulse.center, pulse.width, pulse.amplitude)
    s = 1.0 if pulse.mode is Mode.RIGHT else -1.0
    if system is SystemKind.STRING:
        return StateVector(system, (g, s * g), params)
    if system is SystemKind.HYPERBOLIC:
        return StateVector(system, (g, s * apply_M(params.f(grid), g)), params)
    if pulse.mode is Mode.ENTROPY:
        seed = StateVector(system, (grid.zeros(), grid.zeros(), g), params)
    else:
        seed = StateVector(system, (g, s * g, s * g), params)
    return exact_project(seed, pulse.mode)


def build_initial_state(system: SystemKind, grid: Grid1D, params: SystemParams,
                        pulses) -> StateVector:
    """
    Superpose one pure-mode state per pulse.

    Right string pulses have v = w = g; hyperbolic right pulses u = g, v = M g;
    acoustic pulses are exact eigenprojections of (g, +-g, +-g) or (0, 0, g).
    """
    states = [_pulse_state(system, grid, params, pulse) for pulse in pulses]
    total = states[0]
    for state in states[1:]:
        total = total + state
    return total
