# diagnose.py
"""
Inverse problem on a point-time series: project onto directed modes, compare
off-mode residuals with the calibrated delta, reconstruct the detected
waveforms with regularised splines, time the arrival and place the source.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np
from scipy.integrate import trapezoid
from scipy.optimize import brentq, minimize_scalar

from grid_ops import Grid1D, ScalarField
from observe import CalibrationResult, MeasurementSeries, ObservationPlan, Sampler, synthesize
from projectors import Mode, ModeDecomposition, SystemKind, SystemParams, acoustic_projector_parts, mode_compose
from propagate import mode_speed
from splines import SplineModel, fit_smoothing_spline
from utils import PreconditionError, csv_text, json_text, setup_logger

# Configure logging
logger = setup_logger('diagnose')

DIRECTED_MODES = (Mode.RIGHT, Mode.LEFT)
# Dense evaluation points per breakpoint interval when scanning a waveform
SCAN_POINTS_PER_INTERVAL = 40
STENCIL_MATCH_TOL = 1e-9
# Samples over which a re-simulated profile is tapered to zero at the window ends
LOOP_TAPER_STEPS = 10


@dataclass(frozen=True)
class DiagnosticsSettings:
    kappa: float = 3.0
    spline_order: int = 3
    knot_spacing: Optional[float] = None
    threshold_frac: float = 0.05
    t_zero: float = 0.0
    delta_speed: float = 0.0
    delta_arrival: float = 0.0

    def __post_init__(self):
        if not self.kappa > 0:
            raise PreconditionError(f"kappa must be positive, got {self.kappa}")
        if not 0 < self.threshold_frac <= 1:
            raise PreconditionError(f"threshold_frac must be in (0, 1], got {self.threshold_frac}")
        if self.knot_spacing is not None and not self.knot_spacing > 0:
            raise PreconditionError(f"knot_spacing must be positive, got {self.knot_spacing}")
        if self.delta_speed < 0 or self.delta_arrival < 0:
            raise PreconditionError("delta_speed and delta_arrival must be >= 0")


@dataclass(frozen=True)
class SourceEstimate:
    position: float
    from_speed: float
    from_arrival: float

    @property
    def total(self) -> float:
        return self.from_speed + self.from_arrival

    def budget(self) -> Dict[str, float]:
        return {"from_speed": self.from_speed, "from_arrival": self.from_arrival, "total": self.total}


@dataclass
class DiagnosticsReport:
    """Detection, reconstruction and localisation results for one series"""
    norm_total: float
    residual_left: float
    residual_right: float
    delta_used: float
    kappa: float
    detected: List[Mode]
    weights: Dict[str, float]
    residual_entropy: Optional[float] = None
    waveform: Dict[Mode, SplineModel] = field(default_factory=dict)
    dominant_mode: Optional[Mode] = None
    raw_arrival_time: Optional[float] = None
    arrival_offset: Optional[float] = None
    arrival_time: Optional[float] = None
    source_position: Optional[float] = None
    error_budget: Optional[Dict[str, float]] = None
    I_value: Optional[float] = None

    def __post_init__(self):
        if self.source_position is not None and self.arrival_time is None:
            raise PreconditionError("A source position needs an arrival time")

    def to_dict(self) -> Dict[str, object]:
        return {
            "norm_total": self.norm_total,
            "residual_left": self.residual_left,
            "residual_right": self.residual_right,
            "residual_entropy": self.residual_entropy,
            "delta_used": self.delta_used,
            "kappa": self.kappa,
            "detected": [mode.value for mode in self.detected],
            "weights": dict(self.weights),
            "waveform": {mode.value: model.to_dict() for mode, model in self.waveform.items()},
            "dominant_mode": self.dominant_mode.value if self.dominant_mode else None,
            "raw_arrival_time": self.raw_arrival_time,
            "arrival_offset": self.arrival_offset,
            "arrival_time": self.arrival_time,
            "source_position": self.source_position,
            "error_budget": dict(self.error_budget) if self.error_budget else None,
            "I_value": self.I_value,
        }


def discrete_norm(series: MeasurementSeries) -> float:
    """sqrt of the sum of all squared components over all times"""
    return float(np.sqrt(np.sum(series.phi ** 2)))


def _norm(phi: np.ndarray) -> float:
    return float(np.sqrt(np.sum(phi ** 2)))


def _require_components(series: MeasurementSeries, params: SystemParams):
    expected = 3 if params.system is SystemKind.ACOUSTIC else 2
    if series.components != expected:
        raise PreconditionError(
            f"{params.system.value} series needs {expected} components, got {series.components}"
        )


def zeroth_order_projector(params: SystemParams, mode: Mode, x_obs: float) -> np.ndarray:
    """Pointwise projector matrix; M becomes f(x_obs) for the hyperbolic system"""
    mode = Mode(mode)
    if params.system is SystemKind.ACOUSTIC:
        return acoustic_projector_parts(params, mode)[0]
    if mode is Mode.ENTROPY:
        return np.zeros((2, 2))
    s = 1.0 if mode is Mode.RIGHT else -1.0
    f = 1.0 if params.system is SystemKind.STRING else float(params.f_at(x_obs))
    return 0.5 * np.array([[1.0, s / f], [s * f, 1.0]])


def mode_vector(params: SystemParams, mode: Mode, x_obs: float) -> np.ndarray:
    """Zeroth-order eigenvector carrying the mode"""
    mode = Mode(mode)
    if params.system is SystemKind.ACOUSTIC:
        return {Mode.RIGHT: np.array([1.0, 1.0, 1.0]),
                Mode.LEFT: np.array([1.0, -1.0, -1.0]),
                Mode.ENTROPY: np.array([0.0, 0.0, 1.0])}[mode]
    if mode is Mode.ENTROPY:
        raise PreconditionError(f"{params.system.value} systems have no entropy mode")
    s = 1.0 if mode is Mode.RIGHT else -1.0
    f = 1.0 if params.system is SystemKind.STRING else float(params.f_at(x_obs))
    return np.array([1.0, s * f])


def regularized_derivative(times, samples, sigma: float, order: int = 3,
                           knot_spacing: Optional[float] = None) -> np.ndarray:
    """
    Time derivative of noisy samples through a discrepancy-principle smoothing spline.

    Args:
        times: Uniform sample times (at least 5)
        samples: Sample values
        sigma: Noise standard deviation of the samples
        order: Spline degree
        knot_spacing: Breakpoint spacing (default two sample steps)

    Returns:
        Derivative of the fitted spline at the sample times
    """
    model = fit_smoothing_spline(times, samples, sigma, order=order, knot_spacing=knot_spacing)
    return model.derivative(np.asarray(times, dtype=float))


def project_series(series: MeasurementSeries, direction: Mode, params: SystemParams,
                   settings: Optional[DiagnosticsSettings] = None) -> MeasurementSeries:
    """
    Apply a mode projector sample by sample.

    Acoustic D-terms act on time series as -d/dt (right mode) or +d/dt (left
    mode), realised with regularized_derivative; the entropy projector keeps
    only its constant part.
    """
    _require_components(series, params)
    direction = Mode(direction)
    matrix = zeroth_order_projector(params, direction, series.x_obs)
    projected = series.phi @ matrix.T
    if params.system is SystemKind.ACOUSTIC and direction is not Mode.ENTROPY:
        settings = settings or DiagnosticsSettings()
        linear = acoustic_projector_parts(params, direction)[1]
        if np.any(linear):
            rates = np.column_stack([
                regularized_derivative(series.times, series.phi[:, j], series.noise_sigma,
                                       settings.spline_order, settings.knot_spacing)
                for j in range(series.components)
            ])
            x_rate = -1.0 if direction is Mode.RIGHT else 1.0
            projected = projected + x_rate * rates @ linear.T
    return series.with_phi(projected)


def left_residual(series: MeasurementSeries, params: SystemParams,
                  settings: Optional[DiagnosticsSettings] = None) -> float:
    """||phi - P+ phi||_n"""
    return _norm(series.phi - project_series(series, Mode.RIGHT, params, settings).phi)


def right_residual(series: MeasurementSeries, params: SystemParams,
                   settings: Optional[DiagnosticsSettings] = None) -> float:
    """||phi - P- phi||_n"""
    return _norm(series.phi - project_series(series, Mode.LEFT, params, settings).phi)


def detect(series: MeasurementSeries, calibration: CalibrationResult, params: SystemParams,
           kappa: float = 3.0, settings: Optional[DiagnosticsSettings] = None) -> DiagnosticsReport:
    """
    Decide which modes the series carries.

    Left content is declared when ||phi - P+ phi||_n > kappa * delta, right
    content when ||phi - P- phi||_n > kappa * delta, entropy (acoustic) when
    ||P3 phi||_n > kappa * delta.
    """
    _require_components(series, params)
    threshold = kappa * calibration.delta
    total = discrete_norm(series)
    right = project_series(series, Mode.RIGHT, params, settings).phi
    left = project_series(series, Mode.LEFT, params, settings).phi
    residual_left = _norm(series.phi - right)
    residual_right = _norm(series.phi - left)
    residual_entropy = None
    entropy_norm = 0.0
    if params.system is SystemKind.ACOUSTIC:
        entropy_norm = _norm(project_series(series, Mode.ENTROPY, params, settings).phi)
        residual_entropy = entropy_norm

    detected: List[Mode] = []
    weights = {"alpha_hat": 0.0, "beta_hat": 0.0}
    if params.system is SystemKind.ACOUSTIC:
        weights["entropy_hat"] = 0.0
    if total == 0.0:
        logger.warning("Series is identically zero; nothing to detect")
    else:
        if residual_right > threshold:
            detected.append(Mode.RIGHT)
        if residual_left > threshold:
            detected.append(Mode.LEFT)
        if residual_entropy is not None and residual_entropy > threshold:
            detected.append(Mode.ENTROPY)
        weights["alpha_hat"] = _norm(right) / total
        weights["beta_hat"] = _norm(left) / total
        if params.system is SystemKind.ACOUSTIC:
            weights["entropy_hat"] = entropy_norm / total

    logger.info(
        f"Detected {[mode.value for mode in detected]} (left residual {residual_left:.4g}, "
        f"right residual {residual_right:.4g}, threshold {threshold:.4g})"
    )
    return DiagnosticsReport(
        norm_total=total,
        residual_left=residual_left,
        residual_right=residual_right,
        delta_used=calibration.delta,
        kappa=kappa,
        detected=detected,
        weights=weights,
        residual_entropy=residual_entropy,
    )


def mode_track(series: MeasurementSeries, direction: Mode, params: SystemParams,
               settings: Optional[DiagnosticsSettings] = None) -> np.ndarray:
    """Scalar amplitude (e . P phi) / (e . e) of the projected series per time"""
    e = mode_vector(params, direction, series.x_obs)
    projected = project_series(series, direction, params, settings).phi
    return projected @ e / float(e @ e)


def track_sigma(series: MeasurementSeries, direction: Mode, params: SystemParams) -> float:
    """Noise level of the mode track: sigma times the norm of the row producing it"""
    e = mode_vector(params, direction, series.x_obs)
    row = e @ zeroth_order_projector(params, direction, series.x_obs) / float(e @ e)
    return series.noise_sigma * float(np.linalg.norm(row))


def reconstruct_waveform(series: MeasurementSeries, direction: Mode, params: SystemParams,
                         settings: Optional[DiagnosticsSettings] = None,
                         detected: Optional[Sequence[Mode]] = None) -> SplineModel:
    """
    Smoothing-spline fit of the mode track at x_obs.

    The spatial profile follows from the characteristic mapping (spatial_profile).

    Raises:
        PreconditionError: if the mode was not detected or the track is identically zero
    """
    settings = settings or DiagnosticsSettings()
    direction = Mode(direction)
    if detected is not None and direction not in detected:
        raise PreconditionError(f"Cannot reconstruct the {direction.value} mode: it was not detected")
    track = mode_track(series, direction, params, settings)
    if not np.any(track):
        raise PreconditionError(f"Cannot reconstruct the {direction.value} mode: its track is identically zero")
    model = fit_smoothing_spline(
        series.times, track, track_sigma(series, direction, params),
        order=settings.spline_order, knot_spacing=settings.knot_spacing,
    )
    logger.debug(f"Reconstructed {direction.value} waveform with lambda={model.lambda_reg:.3e}")
    return model


def spatial_profile(model: SplineModel, xi, speed: float, x_obs: float, direction: Mode) -> np.ndarray:
    """
    Initial spatial profile implied by a reconstructed track.

    Right waves: F(xi) = track((x_obs - xi) / speed); left waves:
    G(xi) = track((xi - x_obs) / speed). NaN where xi maps outside the observed times.
    """
    xi = np.asarray(xi, dtype=float)
    if Mode(direction) is Mode.RIGHT:
        t = (x_obs - xi) / speed
    else:
        t = (xi - x_obs) / speed
    inside = (t >= model.t_start) & (t <= model.t_end)
    values = model(np.clip(t, model.t_start, model.t_end))
    return np.where(inside, values, np.nan)


def closed_loop_series(series: MeasurementSeries, model: SplineModel, direction: Mode,
                       params: SystemParams, grid: Grid1D) -> MeasurementSeries:
    """
    Forward-simulate a reconstructed string waveform and measure it again,
    noise-free, with the instrument that recorded the series.

    The profile is zero wherever it maps outside the observed times and is
    cosine-tapered over LOOP_TAPER_STEPS samples at both ends of the window.
    """
    if params.system is not SystemKind.STRING:
        raise PreconditionError(f"Closed-loop re-measurement needs a string series, got {params.system.value}")
    direction = Mode(direction)
    profile = spatial_profile(model, grid.x, params.c, series.x_obs, direction)
    if direction is Mode.RIGHT:
        tau = (series.x_obs - grid.x) / params.c
    else:
        tau = (grid.x - series.x_obs) / params.c
    taper_time = LOOP_TAPER_STEPS * series.dt
    ramp = np.clip(np.minimum(tau - model.t_start, model.t_end - tau) / taper_time, 0.0, 1.0)
    window = 0.5 * (1.0 - np.cos(np.pi * ramp))
    profile = ScalarField(grid, np.nan_to_num(profile, nan=0.0) * window)
    pi, lambda_ = (profile, grid.zeros()) if direction is Mode.RIGHT else (grid.zeros(), profile)
    state = mode_compose(ModeDecomposition(pi, lambda_, SystemKind.STRING, params))
    plan = ObservationPlan(x_obs=series.x_obs, t_start=float(series.times[0]), count=series.n, dt=series.dt,
                           dx=series.dx or 0.0, seed=series.seed, sampler=series.sampler)
    return synthesize(state, plan)


def closed_loop_errors(series: MeasurementSeries, model: SplineModel, direction: Mode,
                       params: SystemParams, grid: Grid1D) -> Dict[str, float]:
    """
    loop_error: ||phi_remeasured - phi||_n
    reconstruction_error: ||model(t) e - phi||_n with e the mode vector
    """
    remeasured = closed_loop_series(series, model, direction, params, grid)
    fitted = np.outer(model(series.times), mode_vector(params, direction, series.x_obs))
    return {
        "loop_error": _norm(remeasured.phi - series.phi),
        "reconstruction_error": _norm(fitted - series.phi),
    }


def _scan(model: SplineModel):
    count = (model.knots.size - 1) * SCAN_POINTS_PER_INTERVAL + 1
    t = np.linspace(model.t_start, model.t_end, count)
    return t, np.abs(model(t))


def _peak(model: SplineModel):
    t, values = _scan(model)
    index = int(np.argmax(values))
    peak_time, peak = float(t[index]), float(values[index])
    lower = t[max(index - 1, 0)]
    upper = t[min(index + 1, t.size - 1)]
    if upper > lower:
        refined = minimize_scalar(lambda s: -abs(float(model(s))), bounds=(lower, upper), method="bounded",
                                  options={"xatol": 1e-12 * max(1.0, abs(upper))})
        if -refined.fun >= peak:
            peak_time, peak = float(refined.x), float(-refined.fun)
    return peak_time, peak


def estimate_arrival(waveform: SplineModel, threshold_frac: float) -> float:
    """
    Earliest time at which |waveform| reaches threshold_frac of its peak.

    Args:
        waveform: Reconstructed track
        threshold_frac: Fraction of the peak in (0, 1]; 1 returns the peak time

    Returns:
        Crossing time located by Brent's method between bracketing scan points
    """
    if not 0 < threshold_frac <= 1:
        raise PreconditionError(f"threshold_frac must be in (0, 1], got {threshold_frac}")
    peak_time, peak = _peak(waveform)
    if peak <= 0:
        raise PreconditionError("Waveform is flat: no peak to time")
    if threshold_frac == 1:
        return peak_time
    level = threshold_frac * peak
    t, values = _scan(waveform)
    above = np.nonzero(values >= level)[0]
    first = int(above[0])
    if first == 0:
        return float(t[0])
    tolerance = 1e-3 * float(np.min(np.diff(waveform.knots))) / 2
    return float(brentq(lambda s: abs(float(waveform(s))) - level, t[first - 1], t[first], xtol=tolerance))


def pulse_duration(waveform: SplineModel) -> float:
    """RMS duration of |waveform| about its centroid"""
    t, weight = _scan(waveform)
    mass = trapezoid(weight, t)
    if mass <= 0:
        raise PreconditionError("Waveform is flat: no duration")
    centroid = trapezoid(t * weight, t) / mass
    return float(np.sqrt(trapezoid((t - centroid) ** 2 * weight, t) / mass))


def threshold_offset(duration: float, threshold_frac: float) -> float:
    """Lead of a threshold crossing over the centre of a Gaussian pulse"""
    if not 0 < threshold_frac <= 1:
        raise PreconditionError(f"threshold_frac must be in (0, 1], got {threshold_frac}")
    return duration * math.sqrt(2.0 * math.log(1.0 / threshold_frac))


def localize_source(arrival: float, t_zero: float, speed: float, direction: Mode, x_obs: float = 0.0,
                    delta_speed: float = 0.0, delta_arrival: float = 0.0) -> SourceEstimate:
    """
    Place the source of a directed wave from its arrival time.

    Right-moving waves came from x_obs - speed * elapsed, left-moving from
    x_obs + speed * elapsed. The budget is linear in the a-priori uncertainties.
    """
    if arrival < t_zero:
        raise PreconditionError(f"Arrival {arrival} precedes the zero-time event {t_zero}")
    if not speed > 0:
        raise PreconditionError(f"Speed must be positive, got {speed}")
    elapsed = arrival - t_zero
    sign = -1.0 if Mode(direction) is Mode.RIGHT else 1.0
    return SourceEstimate(
        position=x_obs + sign * speed * elapsed,
        from_speed=abs(delta_speed) * elapsed,
        from_arrival=speed * abs(delta_arrival),
    )


def mode_weights_functional(series: MeasurementSeries, params: SystemParams,
                            settings: Optional[DiagnosticsSettings] = None) -> Dict[str, float]:
    """
    Minimise I = ||psi+ - P+ phi||_n over spline-parametrised right states.

    Returns:
        alpha_hat and beta_hat (norm fractions) and the minimal I_value
    """
    settings = settings or DiagnosticsSettings()
    total = discrete_norm(series)
    right = project_series(series, Mode.RIGHT, params, settings).phi
    left = project_series(series, Mode.LEFT, params, settings).phi
    if total == 0:
        return {"alpha_hat": 0.0, "beta_hat": 0.0, "I_value": 0.0}
    track = mode_track(series, Mode.RIGHT, params, settings)
    if np.any(track):
        model = fit_smoothing_spline(series.times, track, track_sigma(series, Mode.RIGHT, params),
                                     order=settings.spline_order, knot_spacing=settings.knot_spacing)
        fitted = np.outer(model(series.times), mode_vector(params, Mode.RIGHT, series.x_obs))
    else:
        fitted = np.zeros_like(right)
    return {
        "alpha_hat": _norm(right) / total,
        "beta_hat": _norm(left) / total,
        "I_value": _norm(fitted - right),
    }


def check_calibration_matches(series: MeasurementSeries, calibration: CalibrationResult):
    """The calibration must come from the same sampler, stencil and noise level"""
    stencil = calibration.stencil
    if not stencil:
        return
    problems = []
    if stencil.get("sampler") != series.sampler.value:
        problems.append(f"sampler {stencil.get('sampler')} != {series.sampler.value}")
    for key, value in (("dt", series.dt), ("x_obs", series.x_obs)):
        if abs(float(stencil.get(key, value)) - value) > STENCIL_MATCH_TOL:
            problems.append(f"{key} {stencil.get(key)} != {value}")
    if series.sampler is Sampler.STENCIL and abs(float(stencil.get("dx", 0.0)) - (series.dx or 0.0)) > STENCIL_MATCH_TOL:
        problems.append(f"dx {stencil.get('dx')} != {series.dx}")
    if abs(calibration.sigma_used - series.noise_sigma) > STENCIL_MATCH_TOL:
        problems.append(f"sigma {calibration.sigma_used} != {series.noise_sigma}")
    if problems:
        raise PreconditionError("Calibration does not match the series: " + "; ".join(problems))


def run_diagnostics(series: MeasurementSeries, calibration: CalibrationResult, params: SystemParams,
                    settings: Optional[DiagnosticsSettings] = None) -> DiagnosticsReport:
    """
    Full inverse pipeline: detection, reconstruction of each detected directed
    mode, then arrival and source position for the dominant one.
    """
    settings = settings or DiagnosticsSettings()
    check_calibration_matches(series, calibration)
    report = detect(series, calibration, params, settings.kappa, settings)

    for mode in DIRECTED_MODES:
        if mode in report.detected:
            report.waveform[mode] = reconstruct_waveform(series, mode, params, settings, report.detected)
    report.I_value = mode_weights_functional(series, params, settings)["I_value"]

    if not report.waveform:
        logger.info("No directed mode detected; skipping arrival and localisation")
        return report

    weight_keys = {Mode.RIGHT: "alpha_hat", Mode.LEFT: "beta_hat"}
    dominant = max(report.waveform, key=lambda mode: report.weights[weight_keys[mode]])
    model = report.waveform[dominant]
    report.dominant_mode = dominant
    report.raw_arrival_time = estimate_arrival(model, settings.threshold_frac)
    report.arrival_offset = threshold_offset(pulse_duration(model), settings.threshold_frac)
    report.arrival_time = report.raw_arrival_time + report.arrival_offset

    if report.arrival_time < settings.t_zero:
        logger.warning(f"Arrival {report.arrival_time:.4g} precedes t_zero {settings.t_zero:g}; no source position")
        return report
    estimate = localize_source(
        report.arrival_time, settings.t_zero, mode_speed(params, series.x_obs), dominant,
        x_obs=series.x_obs, delta_speed=settings.delta_speed, delta_arrival=settings.delta_arrival,
    )
    report.source_position = estimate.position
    report.error_budget = estimate.budget()
    logger.info(
        f"{dominant.value} wave arrived at t={report.arrival_time:.4f}; "
        f"source at x={estimate.position:.4f} +- {estimate.total:.4f}"
    )
    return report


def report_to_json(report: DiagnosticsReport) -> str:
    return json_text(report.to_dict())


def waveform_csv(report: DiagnosticsReport, times) -> str:
    """Columns t and one per reconstructed mode, evaluated at the given times"""
    times = np.asarray(times, dtype=float)
    modes = [mode for mode in DIRECTED_MODES if mode in report.waveform]
    columns = [times] + [report.waveform[mode](times) for mode in modes]
    return csv_text(["t"] + [mode.value for mode in modes], np.column_stack(columns))
