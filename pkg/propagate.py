# propagate.py
"""
Time evolution of the three wave systems.

    string      exact translation of Pi (+c t) and Lambda (-c t)
    hyperbolic  backward characteristics dx/dt = +-sqrt(b c), RK4 + periodic cubic interpolation
    acoustic    exp(-L(k) t) per wavenumber
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy.linalg import expm

from grid_ops import Grid1D, ScalarField, derivative, interpolate, spectral_shift, wrap_positions
from projectors import (
    AcousticParams,
    HyperbolicParams,
    ModeDecomposition,
    StateVector,
    SystemKind,
    SystemParams,
    acoustic_symbol,
    mode_compose,
    mode_decompose,
)
from utils import PreconditionError, WrapAroundError, setup_logger

# Configure logging
logger = setup_logger('propagate')

# Field values allowed at the seam samples, relative to the field maximum
SEAM_TOLERANCE = 1e-6
# RK4 step as a fraction of the time a characteristic needs to cross one cell
CHARACTERISTIC_STEP_FRACTION = 0.1


@dataclass(frozen=True, eq=False)
class EvolutionResult:
    """States sampled at increasing times with their conserved norm"""
    times: np.ndarray
    states: Tuple[StateVector, ...]
    norms: np.ndarray
    energy_parts: Optional[Dict[str, np.ndarray]] = None

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        if times.ndim != 1 or times.size == 0:
            raise PreconditionError("EvolutionResult needs at least one time")
        if np.any(np.diff(times) <= 0):
            raise PreconditionError("EvolutionResult times must be strictly increasing")
        if len(self.states) != times.size or len(self.norms) != times.size:
            raise PreconditionError("EvolutionResult needs one state and one norm per time")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(self, "norms", np.asarray(self.norms, dtype=float))

    @property
    def system(self) -> SystemKind:
        return self.states[0].system

    @property
    def grid(self) -> Grid1D:
        return self.states[0].grid


def mode_speed(params: SystemParams, x=None):
    """
    Propagation speed of the directed waves.

    Args:
        params: System parameters
        x: Positions (hyperbolic only; defaults to x = 0)

    Returns:
        c for the string, sqrt(b c) at x for the hyperbolic system, 1 for acoustics
    """
    if params.system is SystemKind.STRING:
        return float(params.c)
    if params.system is SystemKind.HYPERBOLIC:
        speed = params.speed_at(0.0 if x is None else x)
        return float(speed) if np.ndim(speed) == 0 else speed
    return 1.0


def max_speed(params: SystemParams, grid: Grid1D) -> float:
    if params.system is SystemKind.HYPERBOLIC:
        return float(np.max(params.speed_at(grid.x)))
    return mode_speed(params)


def _check_seam(fields: Sequence[ScalarField], label: str, t: float):
    # edges relative to the largest field of the state
    scale = max(field.max_abs() for field in fields)
    if scale == 0.0:
        return
    for index, field in enumerate(fields):
        edge = max(abs(field.values[0]), abs(field.values[-1]))
        if edge > SEAM_TOLERANCE * scale:
            raise WrapAroundError(
                f"{label} field {index} reached the domain seam at t={t:g} "
                f"(edge/scale = {edge / scale:.2e} > {SEAM_TOLERANCE:g})"
            )


def check_seam(state: StateVector, t: float = 0.0):
    """
    Raise WrapAroundError when a pulse has reached the periodic seam.

    String and hyperbolic states are checked on their mode amplitudes (the
    hyperbolic v field legitimately carries the step of M), acoustic states
    on their components.
    """
    if state.system is SystemKind.ACOUSTIC:
        _check_seam(state.components, state.system.value, t)
        return
    decomposition = mode_decompose(state)
    _check_seam((decomposition.pi, decomposition.lambda_), state.system.value, t)


def check_localized(state: StateVector):
    """
    Precondition of every solver: the initial mode amplitudes vanish at the seam.

    A hyperbolic v that is not the M-image of a localized field (for example a
    bare velocity pulse over a varying f) leaves M^-1 v with a ramp reaching the
    seam; such states are rejected before any time stepping.
    """
    try:
        check_seam(state, 0.0)
    except WrapAroundError as e:
        raise PreconditionError(f"Initial {state.system.value} state is not localized: {e}") from None


def _validate_times(times: Sequence[float]) -> np.ndarray:
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if times.size == 0:
        raise PreconditionError("At least one evolution time is required")
    if np.any(times < 0):
        raise PreconditionError(f"Evolution times must be >= 0, got min {times.min():g}")
    if np.any(np.diff(times) <= 0):
        raise PreconditionError("Evolution times must be strictly increasing")
    return times


def _require(state: StateVector, system: SystemKind):
    if state.system is not system:
        raise PreconditionError(f"Expected a {system.value} state, got {state.system.value}")


def _translate_string(decomposition: ModeDecomposition, c: float, t: float) -> StateVector:
    moved = ModeDecomposition(
        pi=spectral_shift(decomposition.pi, c * t),
        lambda_=spectral_shift(decomposition.lambda_, -c * t),
        system=decomposition.system,
        params=decomposition.params,
    )
    return mode_compose(moved)


def solve_string(initial: StateVector, t: float) -> StateVector:
    """Exact d'Alembert solution: Pi moves right and Lambda left at speed c"""
    _require(initial, SystemKind.STRING)
    if t < 0:
        raise PreconditionError(f"Evolution time must be >= 0, got {t}")
    check_localized(initial)
    if t == 0:
        return initial
    state = _translate_string(mode_decompose(initial), initial.params.c, t)
    check_seam(state, t)
    return state


def trace_characteristics(velocity: Callable[[np.ndarray], np.ndarray], x_start: np.ndarray,
                          durations: Sequence[float], step: float) -> List[np.ndarray]:
    """
    Integrate dx/dtau = velocity(x) with fixed-step classical RK4.

    Args:
        velocity: Vectorised right-hand side
        x_start: Starting positions
        durations: Increasing integration times; positions are recorded at each
        step: Largest allowed RK4 step; every segment uses an integer number of equal steps

    Returns:
        One position array per duration
    """
    positions = np.array(x_start, dtype=float)
    elapsed = 0.0
    recorded = []
    total_steps = 0
    for duration in durations:
        span = duration - elapsed
        if span < 0:
            raise PreconditionError("Characteristic durations must be increasing")
        steps = int(math.ceil(span / step)) if span > 0 else 0
        h = span / steps if steps else 0.0
        for _ in range(steps):
            k1 = velocity(positions)
            k2 = velocity(positions + 0.5 * h * k1)
            k3 = velocity(positions + 0.5 * h * k2)
            k4 = velocity(positions + h * k3)
            positions = positions + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        total_steps += steps
        elapsed = duration
        recorded.append(positions.copy())
    logger.debug(f"Traced {positions.size} characteristics over {elapsed:g} in {total_steps} RK4 steps")
    return recorded


def _hyperbolic_frames(initial: StateVector, times: np.ndarray) -> List[StateVector]:
    params: HyperbolicParams = initial.params
    grid = initial.grid
    decomposition = mode_decompose(initial)
    step = CHARACTERISTIC_STEP_FRACTION * grid.spacing / max_speed(params, grid)

    def speed(x: np.ndarray) -> np.ndarray:
        return params.speed_at(wrap_positions(grid, x))

    # right waves came from the left, left waves from the right
    right_feet = trace_characteristics(lambda x: -speed(x), grid.x, times, step)
    left_feet = trace_characteristics(speed, grid.x, times, step)

    frames = []
    for t, right_foot, left_foot in zip(times, right_feet, left_feet):
        if t == 0:
            frames.append(initial)
            continue
        moved = ModeDecomposition(
            pi=ScalarField(grid, interpolate(decomposition.pi, right_foot)),
            lambda_=ScalarField(grid, interpolate(decomposition.lambda_, left_foot)),
            system=SystemKind.HYPERBOLIC,
            params=params,
        )
        state = mode_compose(moved)
        check_seam(state, t)
        frames.append(state)
    return frames


def solve_hyperbolic(initial: StateVector, t: float) -> StateVector:
    """Transport Pi and Lambda along backward characteristics and recompose"""
    _require(initial, SystemKind.HYPERBOLIC)
    if t < 0:
        raise PreconditionError(f"Evolution time must be >= 0, got {t}")
    check_localized(initial)
    return _hyperbolic_frames(initial, np.array([float(t)]))[-1]


def acoustic_propagator(params: AcousticParams, grid: Grid1D, t: float) -> np.ndarray:
    """Stacked exp(-L(k) t), shape (n_k, 3, 3)"""
    return expm(-acoustic_symbol(params, grid.wavenumbers) * t)


def solve_acoustic(initial: StateVector, t: float) -> StateVector:
    """Exact-in-time solution of psi_t + L psi = 0 by per-wavenumber matrix exponentials"""
    _require(initial, SystemKind.ACOUSTIC)
    if t < 0:
        raise PreconditionError(f"Evolution time must be >= 0, got {t}")
    check_localized(initial)
    if t == 0:
        return initial
    grid = initial.grid
    spectra = np.fft.rfft(initial.as_array(), axis=1)
    evolved = np.einsum("kij,jk->ik", acoustic_propagator(initial.params, grid, t), spectra)
    evolved[:, -1] = 0.0
    state = StateVector.from_array(SystemKind.ACOUSTIC, grid, np.fft.irfft(evolved, n=grid.points, axis=1),
                                   initial.params)
    check_seam(state, t)
    return state


def acoustic_energy_densities(state: StateVector) -> Tuple[np.ndarray, np.ndarray]:
    """E_a = (v^2 + p^2)/2 and E_s = (rho - p)^2/2"""
    v, p, rho = (component.values for component in state.components)
    return 0.5 * (v ** 2 + p ** 2), 0.5 * (rho - p) ** 2


def state_norm(state: StateVector, acoustic_norm: str = "total") -> float:
    """
    Conserved norm of one state.

    string: int (Pi^2 + Lambda^2) dx; hyperbolic: int (u^2/b + v^2/c) dx;
    acoustic: int (E_a + E_s) dx ("total") or int E_a dx ("acoustic").
    """
    if acoustic_norm not in ("total", "acoustic"):
        raise PreconditionError(f"acoustic_norm must be 'total' or 'acoustic', got {acoustic_norm!r}")
    h = state.grid.spacing
    if state.system is SystemKind.STRING:
        decomposition = mode_decompose(state)
        return float(np.sum(decomposition.pi.values ** 2 + decomposition.lambda_.values ** 2) * h)
    if state.system is SystemKind.HYPERBOLIC:
        u, v = state.components
        b = state.params.b(state.grid).values
        c = state.params.c(state.grid).values
        return float(np.sum(u.values ** 2 / b + v.values ** 2 / c) * h)
    e_a, e_s = acoustic_energy_densities(state)
    if acoustic_norm == "acoustic":
        return float(np.sum(e_a) * h)
    return float(np.sum(e_a + e_s) * h)


def evolve(initial: StateVector, times: Sequence[float]) -> EvolutionResult:
    """
    Evolve a state and store it at each requested time.

    Args:
        initial: State at t = 0
        times: Strictly increasing, non-negative sample times

    Returns:
        EvolutionResult with states, norms and (acoustic) energy totals
    """
    times = _validate_times(times)
    check_localized(initial)
    system = initial.system
    logger.debug(f"Evolving {system.value} state to {len(times)} times up to t={times[-1]:g}")

    if system is SystemKind.STRING:
        states = [solve_string(initial, t) for t in times]
    elif system is SystemKind.HYPERBOLIC:
        states = _hyperbolic_frames(initial, times)
    else:
        states = [solve_acoustic(initial, t) for t in times]

    energy_parts = None
    if system is SystemKind.ACOUSTIC:
        h = initial.grid.spacing
        totals = [acoustic_energy_densities(state) for state in states]
        energy_parts = {
            "E_a": np.array([np.sum(e_a) * h for e_a, _ in totals]),
            "E_s": np.array([np.sum(e_s) * h for _, e_s in totals]),
        }
    norms = np.array([state_norm(state) for state in states])
    return EvolutionResult(times, tuple(states), norms, energy_parts)


def track_norm(result: EvolutionResult, acoustic_norm: str = "total") -> np.ndarray:
    """Conserved norm per stored time (see state_norm)"""
    return np.array([state_norm(state, acoustic_norm) for state in result.states])


def entropy_balance_residual(result: EvolutionResult) -> np.ndarray:
    """
    Spatial max of |dE_s/dt + D(p v)| per stored time.

    The time derivative uses second-order differences over the stored frames
    (one-sided at the ends). Reported as a diagnostic; it does not vanish in general.
    """
    if result.system is not SystemKind.ACOUSTIC:
        raise PreconditionError("entropy_balance_residual needs an acoustic evolution")
    if len(result.times) < 3:
        raise PreconditionError(f"entropy_balance_residual needs >= 3 frames, got {len(result.times)}")
    grid = result.grid
    e_s = np.vstack([acoustic_energy_densities(state)[1] for state in result.states])
    rate = np.gradient(e_s, result.times, axis=0, edge_order=2)
    residual = []
    for index, state in enumerate(result.states):
        v, p, _ = state.components
        flux = derivative(ScalarField(grid, p.values * v.values)).values
        residual.append(float(np.max(np.abs(rate[index] + flux))))
    return np.array(residual)
