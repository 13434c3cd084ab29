# observe.py
"""
Synthetic instrument: point-time series of field components at an observation
point, either from a finite-difference stencil on the string displacement or
by direct sampling of the state components, with seeded Gaussian noise.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Dict, List, Optional

import numpy as np

from grid_ops import ScalarField, antiderivative, interpolate, spectral_evaluate
from projectors import Mode, StateVector, SystemKind, exact_project
from propagate import evolve, solve_string
from utils import PreconditionError, csv_text, setup_logger

# Configure logging
logger = setup_logger('observe')

MIN_CALIBRATION_TRIALS = 10
# Relative off-mode content tolerated in a calibration scenario
PURITY_TOLERANCE = 1e-10
TIME_UNIFORMITY_TOL = 1e-12


class Sampler(str, Enum):
    STENCIL = "stencil"
    DIRECT = "direct"


@dataclass(frozen=True)
class ObservationPlan:
    """Where, when and how the instrument samples"""
    x_obs: float
    t_start: float
    count: int
    dt: float
    dx: float = 0.0
    sigma: float = 0.0
    seed: int = 0
    sampler: Sampler = Sampler.DIRECT

    def __post_init__(self):
        object.__setattr__(self, "sampler", Sampler(self.sampler))
        if self.count < 2:
            raise PreconditionError(f"An observation needs at least 2 times, got {self.count}")
        if not self.dt > 0:
            raise PreconditionError(f"Observation dt must be positive, got {self.dt}")
        if self.t_start < 0:
            raise PreconditionError(f"Observation t_start must be >= 0, got {self.t_start}")
        if self.sigma < 0:
            raise PreconditionError(f"Noise sigma must be >= 0, got {self.sigma}")
        if self.sampler is Sampler.STENCIL and not self.dx > 0:
            raise PreconditionError(f"Stencil dx must be positive, got {self.dx}")

    @classmethod
    def spanning(cls, x_obs: float, t_start: float, t_end: float, dt: float, **kwargs) -> "ObservationPlan":
        """Plan with times t_start, t_start + dt, ... up to t_end"""
        if not t_end > t_start:
            raise PreconditionError(f"t_end ({t_end}) must exceed t_start ({t_start})")
        count = int(math.floor((t_end - t_start) / dt + 1e-9)) + 1
        return cls(x_obs=x_obs, t_start=t_start, count=count, dt=dt, **kwargs)

    @property
    def times(self) -> np.ndarray:
        return self.t_start + self.dt * np.arange(self.count)

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def with_seed(self, seed: int) -> "ObservationPlan":
        return replace(self, seed=seed)


@dataclass(frozen=True, eq=False)
class MeasurementSeries:
    """Component samples phi[i, j] of component j at time t_i"""
    times: np.ndarray
    phi: np.ndarray
    x_obs: float
    dt: float
    system: SystemKind
    dx: Optional[float] = None
    noise_sigma: float = 0.0
    seed: int = 0
    sampler: Sampler = Sampler.DIRECT

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        phi = np.asarray(self.phi, dtype=float)
        if phi.ndim == 1:
            phi = phi[:, None]
        if times.ndim != 1 or times.size < 1:
            raise PreconditionError("A series needs at least one time")
        if phi.shape[0] != times.size:
            raise PreconditionError(f"phi has {phi.shape[0]} rows for {times.size} times")
        if times.size >= 2:
            steps = np.diff(times)
            if np.max(np.abs(steps - self.dt)) > TIME_UNIFORMITY_TOL * max(1.0, abs(times[-1])):
                raise PreconditionError("Series times must be uniform with step dt")
        if not np.all(np.isfinite(phi)):
            raise PreconditionError("Series contains non-finite samples")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "system", SystemKind(self.system))
        object.__setattr__(self, "sampler", Sampler(self.sampler))

    @property
    def n(self) -> int:
        return int(self.times.size)

    @property
    def components(self) -> int:
        return int(self.phi.shape[1])

    def with_phi(self, phi: np.ndarray) -> "MeasurementSeries":
        return replace(self, phi=np.asarray(phi, dtype=float))


@dataclass(frozen=True)
class CalibrationResult:
    """Baseline off-mode residual of a pure right-wave experiment"""
    delta: float
    trials: int
    sigma_used: float
    mean: float = 0.0
    std: float = 0.0
    stencil: Dict[str, object] = field(default_factory=dict)

    def __post_init__(self):
        if self.delta < 0:
            raise PreconditionError(f"Calibration delta must be >= 0, got {self.delta}")

    def to_dict(self) -> Dict[str, object]:
        return {
            "delta": self.delta,
            "trials": self.trials,
            "sigma": self.sigma_used,
            "mean": self.mean,
            "std": self.std,
            "stencil": dict(self.stencil),
        }

    @classmethod
    def from_dict(cls, payload: Dict[str, object]) -> "CalibrationResult":
        return cls(
            delta=float(payload["delta"]),
            trials=int(payload["trials"]),
            sigma_used=float(payload["sigma"]),
            mean=float(payload.get("mean", 0.0)),
            std=float(payload.get("std", 0.0)),
            stencil=dict(payload.get("stencil", {})),
        )


def noise_draw(shape, sigma: float, seed: int) -> np.ndarray:
    """The exact additive noise a synthesis with this sigma and seed receives"""
    if sigma == 0:
        return np.zeros(shape)
    return np.random.default_rng(seed).normal(0.0, sigma, size=shape)


def displacement_at(state: StateVector, positions) -> np.ndarray:
    """
    String displacement u(x) = int_{x0}^{x} v/c dx', anchored to zero at the left seam.

    Evaluated off-grid through the trigonometric interpolant of the zero-mean
    part plus the linear term carried by the mean of v/c.
    """
    if state.system is not SystemKind.STRING:
        raise PreconditionError("Displacement is defined for string states only")
    grid = state.grid
    slope = state.components[0] / state.params.c
    mean = slope.mean()
    primitive = antiderivative(ScalarField(grid, slope.values - mean))
    x0 = grid.x[0]
    positions = np.atleast_1d(np.asarray(positions, dtype=float))
    anchor = spectral_evaluate(primitive, [x0])[0]
    return spectral_evaluate(primitive, positions) - anchor + mean * (positions - x0)


def _stencil_samples(initial: StateVector, plan: ObservationPlan) -> np.ndarray:
    if initial.system is not SystemKind.STRING:
        raise PreconditionError("The finite-difference stencil needs a string state")
    if plan.dx < initial.grid.spacing:
        raise PreconditionError(
            f"Stencil dx {plan.dx} is below the grid spacing {initial.grid.spacing:.4g}"
        )
    c = initial.params.c
    # one extra time for the forward time difference of the last sample
    sample_times = plan.t_start + plan.dt * np.arange(plan.count + 1)
    here = np.empty(sample_times.size)
    ahead = np.empty(sample_times.size)
    for index, t in enumerate(sample_times):
        state = solve_string(initial, float(t))
        here[index], ahead[index] = displacement_at(state, [plan.x_obs, plan.x_obs + plan.dx])
    phi1 = c * (ahead[:-1] - here[:-1]) / plan.dx
    phi2 = (here[:-1] - here[1:]) / plan.dt
    return np.column_stack([phi1, phi2])


def _direct_samples(initial: StateVector, plan: ObservationPlan) -> np.ndarray:
    result = evolve(initial, plan.times)
    rows = []
    for state in result.states:
        rows.append([interpolate(component, [plan.x_obs])[0] for component in state.components])
    return np.array(rows)


def clean_samples(initial: StateVector, plan: ObservationPlan) -> np.ndarray:
    """Noiseless component samples, shape (count, components)"""
    if plan.sampler is Sampler.STENCIL:
        return _stencil_samples(initial, plan)
    return _direct_samples(initial, plan)


def _series(initial: StateVector, plan: ObservationPlan, phi: np.ndarray, seed: int) -> MeasurementSeries:
    return MeasurementSeries(
        times=plan.times,
        phi=phi,
        x_obs=plan.x_obs,
        dt=plan.dt,
        system=initial.system,
        dx=plan.dx if plan.sampler is Sampler.STENCIL else None,
        noise_sigma=plan.sigma,
        seed=seed,
        sampler=plan.sampler,
    )


def synthesize_string_series(initial: StateVector, plan: ObservationPlan) -> MeasurementSeries:
    """
    Forward-difference measurement of a string:
        phi1 = c (u(x+dx, t) - u(x, t)) / dx
        phi2 = (u(x, t) - u(x, t+dt)) / dt
    so that phi1 = phi2 for a right wave. Noise is added per entry.
    """
    stencil_plan = replace(plan, sampler=Sampler.STENCIL)
    phi = _stencil_samples(initial, stencil_plan)
    return _series(initial, stencil_plan, phi + noise_draw(phi.shape, plan.sigma, plan.seed), plan.seed)


def synthesize_direct_series(initial: StateVector, plan: ObservationPlan) -> MeasurementSeries:
    """Sample every state component at x_obs (periodic cubic interpolation) and add noise"""
    direct_plan = replace(plan, sampler=Sampler.DIRECT)
    phi = _direct_samples(initial, direct_plan)
    return _series(initial, direct_plan, phi + noise_draw(phi.shape, plan.sigma, plan.seed), plan.seed)


def synthesize(initial: StateVector, plan: ObservationPlan, seed: Optional[int] = None) -> MeasurementSeries:
    """Dispatch on the plan's sampler; seed overrides plan.seed"""
    if seed is not None:
        plan = plan.with_seed(seed)
    if plan.sampler is Sampler.STENCIL:
        return synthesize_string_series(initial, plan)
    return synthesize_direct_series(initial, plan)


def off_mode_content(initial: StateVector) -> float:
    """Relative content of everything except the right mode, measured with exact projectors"""
    total = initial.l2()
    if total == 0:
        return 0.0
    rest = initial - exact_project(initial, Mode.RIGHT)
    return rest.l2() / total


def calibrate_delta(initial: StateVector, plan: ObservationPlan, trials: int,
                    settings=None) -> CalibrationResult:
    """
    Baseline residual delta of a pure right-wave experiment.

    Args:
        initial: Pure right-wave state
        plan: Observation plan of the experiment being calibrated
        trials: Number of seeded syntheses (trial k uses plan.seed + k)
        settings: DiagnosticsSettings of the diagnosis this calibration serves; acoustic
            projections differentiate the series with its spline order and knot spacing

    Returns:
        CalibrationResult with delta = mean + 3 std of ||phi - P+ phi||_n
    """
    from diagnose import left_residual

    if trials < MIN_CALIBRATION_TRIALS:
        raise PreconditionError(f"Calibration needs at least {MIN_CALIBRATION_TRIALS} trials, got {trials}")
    impurity = off_mode_content(initial)
    if impurity > PURITY_TOLERANCE:
        raise PreconditionError(
            f"Calibration scenario is not a pure right wave (off-mode content {impurity:.3e})"
        )

    clean = clean_samples(initial, plan)
    residuals: List[float] = []
    for k in range(trials):
        seed = plan.seed + k
        phi = clean + noise_draw(clean.shape, plan.sigma, seed)
        residuals.append(left_residual(_series(initial, plan, phi, seed), initial.params, settings))

    mean = math.fsum(residuals) / trials
    variance = math.fsum((value - mean) ** 2 for value in residuals) / trials
    std = math.sqrt(variance)
    delta = mean + 3.0 * std
    logger.info(f"Calibrated delta={delta:.6g} over {trials} trials (mean {mean:.4g}, std {std:.4g})")
    return CalibrationResult(
        delta=delta,
        trials=trials,
        sigma_used=plan.sigma,
        mean=mean,
        std=std,
        stencil={"sampler": plan.sampler.value, "dx": plan.dx, "dt": plan.dt, "x_obs": plan.x_obs},
    )


def series_to_csv(series: MeasurementSeries) -> str:
    """Header t,phi1,phi2[,phi3]; one row per time"""
    header = ["t"] + [f"phi{index + 1}" for index in range(series.components)]
    rows = np.column_stack([series.times, series.phi])
    return csv_text(header, rows)
