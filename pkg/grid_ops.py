# grid_ops.py
"""
Uniform periodic grid, scalar fields and the spectral operators built on them:
D, D^-1 and the pseudodifferential pair M = D^-1 f D, M^-1 = D^-1 f^-1 D.
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from enum import Enum
from functools import cached_property

import numpy as np
from scipy.interpolate import CubicSpline

from utils import PreconditionError, setup_logger

# Configure logging
logger = setup_logger('grid_ops')

MIN_POINTS = 8
# D^-1 accepts fields whose mean is below this fraction of max|f|*length
ANTIDERIVATIVE_MEAN_TOL = 1e-10
# Pulses must be resolved by this many samples per width
MIN_SAMPLES_PER_WIDTH = 4.0
# Pulse value allowed at the domain boundary, relative to amplitude
BOUNDARY_TOL = 1e-12
# Profiles may vary at most this fast: max|f'| <= MAX_RELATIVE_SLOPE * epsilon * baseline
MAX_RELATIVE_SLOPE = 10.0


@dataclass(frozen=True)
class Grid1D:
    """Uniform periodic grid on [-length/2, length/2)"""
    length: float
    points: int
    periodic: bool = True

    @property
    def spacing(self) -> float:
        return self.length / self.points

    @cached_property
    def x(self) -> np.ndarray:
        positions = -self.length / 2 + np.arange(self.points) * self.spacing
        positions.setflags(write=False)
        return positions

    @cached_property
    def wavenumbers(self) -> np.ndarray:
        """Angular wavenumbers of the real FFT, Nyquist mode included"""
        k = 2 * np.pi * np.fft.rfftfreq(self.points, d=self.spacing)
        k.setflags(write=False)
        return k

    def zeros(self) -> "ScalarField":
        return ScalarField(self, np.zeros(self.points))

    def field_from(self, values) -> "ScalarField":
        return ScalarField(self, np.asarray(values, dtype=float))


@dataclass(frozen=True, eq=False)
class ScalarField:
    """Real samples of one field component on a grid"""
    grid: Grid1D
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.shape != (self.grid.points,):
            raise PreconditionError(
                f"Field has shape {values.shape}, grid expects ({self.grid.points},)"
            )
        if not np.all(np.isfinite(values)):
            raise PreconditionError("Field contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def mean(self) -> float:
        return float(np.mean(self.values))

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    def l2(self) -> float:
        """Rectangle-rule L2 norm (exact trapezoid on a periodic grid)"""
        return float(np.sqrt(np.sum(self.values ** 2) * self.grid.spacing))

    def _coerce(self, other) -> np.ndarray:
        if isinstance(other, ScalarField):
            if other.grid != self.grid:
                raise PreconditionError("Fields live on different grids")
            return other.values
        return other

    def __add__(self, other) -> "ScalarField":
        return ScalarField(self.grid, self.values + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other) -> "ScalarField":
        return ScalarField(self.grid, self.values - self._coerce(other))

    def __rsub__(self, other) -> "ScalarField":
        return ScalarField(self.grid, self._coerce(other) - self.values)

    def __mul__(self, other) -> "ScalarField":
        return ScalarField(self.grid, self.values * self._coerce(other))

    __rmul__ = __mul__

    def __truediv__(self, other) -> "ScalarField":
        return ScalarField(self.grid, self.values / self._coerce(other))

    def __neg__(self) -> "ScalarField":
        return ScalarField(self.grid, -self.values)


class ProfileKind(str, Enum):
    CONSTANT = "constant"
    LINEAR_RAMP = "linear_ramp"
    GAUSSIAN_BUMP = "gaussian_bump"
    TANH_STEP = "tanh_step"


@dataclass(frozen=True)
class CoefficientProfile:
    """
    Coefficient b(x) or c(x) of the inhomogeneous system:
        value(x) = baseline * (1 + epsilon * amplitude * shape((x - center) / width))
    """
    kind: ProfileKind = ProfileKind.CONSTANT
    baseline: float = 1.0
    amplitude: float = 0.0
    center: float = 0.0
    width: float = 1.0
    epsilon: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ProfileKind(self.kind))
        if self.baseline <= 0:
            raise PreconditionError(f"Profile baseline must be positive, got {self.baseline}")
        if self.width <= 0:
            raise PreconditionError(f"Profile width must be positive, got {self.width}")
        if self.epsilon < 0:
            raise PreconditionError(f"Profile epsilon must be >= 0, got {self.epsilon}")

    def with_epsilon(self, epsilon: float) -> "CoefficientProfile":
        return replace(self, epsilon=epsilon)

    def _shape(self, x: np.ndarray) -> np.ndarray:
        s = (x - self.center) / self.width
        if self.kind is ProfileKind.CONSTANT:
            return np.zeros_like(s)
        if self.kind is ProfileKind.LINEAR_RAMP:
            return s
        if self.kind is ProfileKind.GAUSSIAN_BUMP:
            return np.exp(-0.5 * s ** 2)
        return np.tanh(s)

    def values_at(self, x) -> np.ndarray:
        """Profile values at arbitrary positions"""
        x = np.asarray(x, dtype=float)
        return self.baseline * (1.0 + self.epsilon * self.amplitude * self._shape(x))

    def evaluate(self, grid: Grid1D) -> ScalarField:
        """Sample the profile on a grid, enforcing positivity and weak variation"""
        values = self.values_at(grid.x)
        if np.min(values) <= 0:
            raise PreconditionError(
                f"{self.kind.value} profile is not strictly positive (min {np.min(values):.3g})"
            )
        slope = np.max(np.abs(np.gradient(values, grid.spacing)))
        bound = MAX_RELATIVE_SLOPE * self.epsilon * self.baseline
        if slope > bound + 1e-12 * self.baseline:
            raise PreconditionError(
                f"{self.kind.value} profile varies too fast: max|f'| = {slope:.3g} > {bound:.3g}"
            )
        return ScalarField(grid, values)


def make_grid(length: float, points: int) -> Grid1D:
    """
    Build the periodic computational grid.

    Args:
        length: Domain size (positive)
        points: Number of samples (even, at least 8)

    Returns:
        Grid1D covering [-length/2, length/2)
    """
    if not length > 0:
        raise PreconditionError(f"Grid length must be positive, got {length}")
    if int(points) != points or points < MIN_POINTS or points % 2:
        raise PreconditionError(f"Grid points must be an even integer >= {MIN_POINTS}, got {points}")
    return Grid1D(float(length), int(points))


def _spectral(values: np.ndarray) -> np.ndarray:
    return np.fft.rfft(values)


def _physical(coefficients: np.ndarray, points: int) -> np.ndarray:
    return np.fft.irfft(coefficients, n=points)


def derivative(f: ScalarField) -> ScalarField:
    """Spectral derivative; the Nyquist mode is dropped"""
    grid = f.grid
    coefficients = _spectral(f.values) * (1j * grid.wavenumbers)
    coefficients[-1] = 0.0
    return ScalarField(grid, _physical(coefficients, grid.points))


def antiderivative(f: ScalarField) -> ScalarField:
    """
    Zero-mean spectral antiderivative D^-1.

    Raises:
        PreconditionError: if f has a mean D^-1 cannot represent
    """
    grid = f.grid
    mean = f.mean()
    tolerance = ANTIDERIVATIVE_MEAN_TOL * f.max_abs() * grid.length
    if abs(mean) > tolerance:
        raise PreconditionError(
            f"antiderivative needs a zero-mean field, mean is {mean:.3e} (tolerance {tolerance:.3e})"
        )
    k = grid.wavenumbers
    coefficients = _spectral(f.values)
    result = np.zeros_like(coefficients)
    result[1:-1] = coefficients[1:-1] / (1j * k[1:-1])
    return ScalarField(grid, _physical(result, grid.points))


def _require_positive(f_profile: ScalarField):
    if np.min(f_profile.values) <= 0:
        raise PreconditionError("M needs a strictly positive profile")


def _anchored_antiderivative(integrand: np.ndarray, spread: np.ndarray, anchor: float,
                             grid: Grid1D) -> ScalarField:
    # the net step of the integrand cannot live on a periodic domain: remove it with profile `spread`
    integrand = integrand - integrand.mean() * spread / spread.mean()
    result = antiderivative(ScalarField(grid, integrand)).values
    return ScalarField(grid, result - result[0] + anchor)


def apply_M(f_profile: ScalarField, g: ScalarField) -> ScalarField:
    """
    M g = D^-1 (f D g), anchored at the left seam so that (M g)(x0) = f(x0) g(x0).

    On the infinite line f*Dg integrates to a step when f varies; here that
    step is removed in proportion to f, which keeps M^-1 M = identity exactly.
    For constant f = kappa the result is kappa * g for every g.
    """
    _require_positive(f_profile)
    f = f_profile.values
    return _anchored_antiderivative(f * derivative(g).values, f, f[0] * g.values[0], g.grid)


def apply_M_inv(f_profile: ScalarField, g: ScalarField) -> ScalarField:
    """M^-1 g = D^-1 (f^-1 D g), anchored so that (M^-1 g)(x0) = g(x0) / f(x0)"""
    _require_positive(f_profile)
    f = f_profile.values
    return _anchored_antiderivative(derivative(g).values / f, np.ones_like(f), g.values[0] / f[0], g.grid)


def gaussian_pulse(grid: Grid1D, center: float, width: float, amplitude: float) -> ScalarField:
    """
    Sample amplitude * exp(-(x - center)^2 / (2 width^2)).

    Raises:
        PreconditionError: if the pulse is under-resolved or touches the boundary
    """
    if width < MIN_SAMPLES_PER_WIDTH * grid.spacing:
        raise PreconditionError(
            f"Pulse width {width} is below {MIN_SAMPLES_PER_WIDTH:g} grid spacings ({MIN_SAMPLES_PER_WIDTH * grid.spacing:.4g})"
        )
    distance = min(center + grid.length / 2, grid.length / 2 - center)
    edge_value = np.exp(-0.5 * (distance / width) ** 2) if distance > 0 else 1.0
    if edge_value > BOUNDARY_TOL:
        raise PreconditionError(
            f"Pulse at {center} with width {width} is not negligible at the boundary ({edge_value:.2e})"
        )
    return ScalarField(grid, amplitude * np.exp(-0.5 * ((grid.x - center) / width) ** 2))


def spectral_shift(f: ScalarField, distance: float) -> ScalarField:
    """Translate a band-limited field by distance: returns f(x - distance)"""
    grid = f.grid
    coefficients = _spectral(f.values) * np.exp(-1j * grid.wavenumbers * distance)
    coefficients[-1] = 0.0
    return ScalarField(grid, _physical(coefficients, grid.points))


def spectral_evaluate(f: ScalarField, positions) -> np.ndarray:
    """Evaluate the trigonometric interpolant of f at arbitrary positions"""
    grid = f.grid
    positions = np.atleast_1d(np.asarray(positions, dtype=float))
    coefficients = _spectral(f.values) / grid.points
    weights = np.full(coefficients.shape, 2.0)
    weights[0] = 1.0
    weights[-1] = 0.0
    phase = np.exp(1j * np.outer(positions - grid.x[0], grid.wavenumbers))
    return np.real(phase @ (weights * coefficients))


def periodic_interpolator(f: ScalarField) -> CubicSpline:
    """Cubic spline through the samples, periodic over the domain"""
    grid = f.grid
    nodes = np.append(grid.x, grid.x[0] + grid.length)
    samples = np.append(f.values, f.values[0])
    return CubicSpline(nodes, samples, bc_type="periodic")


def wrap_positions(grid: Grid1D, positions: np.ndarray) -> np.ndarray:
    """Map positions into [x0, x0 + length)"""
    return grid.x[0] + np.mod(positions - grid.x[0], grid.length)


def interpolate(f: ScalarField, positions) -> np.ndarray:
    """Periodic cubic interpolation at arbitrary positions"""
    spline = periodic_interpolator(f)
    return spline(wrap_positions(f.grid, np.asarray(positions, dtype=float)))
