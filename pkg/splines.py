# splines.py
"""
Penalised least-squares B-splines on a time axis.

    minimise  sum_i (s(t_i) - y_i)^2 + lambda * int (s'')^2 dt

The smoothing weight lambda is chosen by the discrepancy principle: the
largest lambda whose residual sum stays within n * sigma^2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Tuple

import numpy as np
from scipy.interpolate import BSpline

from utils import PreconditionError, setup_logger

# Configure logging
logger = setup_logger('splines')

MIN_SAMPLES = 5
MIN_ORDER = 2
MAX_ORDER = 5
BISECTION_STEPS = 60
# Search range for lambda, relative to tr(B^T B) / tr(G)
LAMBDA_RANGE = (1e-12, 1e8)


@dataclass(frozen=True, eq=False)
class SplineModel:
    """Clamped B-spline: breakpoints `knots`, `coefficients`, degree `order`"""
    knots: np.ndarray
    coefficients: np.ndarray
    order: int = 3
    lambda_reg: float = 0.0
    residual_sum: float = 0.0

    def __post_init__(self):
        knots = np.asarray(self.knots, dtype=float)
        coefficients = np.asarray(self.coefficients, dtype=float)
        if knots.ndim != 1 or knots.size < 2 or np.any(np.diff(knots) <= 0):
            raise PreconditionError("Spline knots must be strictly increasing (at least two)")
        if coefficients.size != knots.size + self.order - 1:
            raise PreconditionError(
                f"{coefficients.size} coefficients do not fit {knots.size} knots of order {self.order}"
            )
        if self.lambda_reg < 0:
            raise PreconditionError(f"lambda_reg must be >= 0, got {self.lambda_reg}")
        object.__setattr__(self, "knots", knots)
        object.__setattr__(self, "coefficients", coefficients)

    @property
    def t_start(self) -> float:
        return float(self.knots[0])

    @property
    def t_end(self) -> float:
        return float(self.knots[-1])

    def bspline(self) -> BSpline:
        return BSpline(clamped_knot_vector(self.knots, self.order), self.coefficients, self.order)

    def __call__(self, t, nu: int = 0) -> np.ndarray:
        return self.bspline()(np.asarray(t, dtype=float), nu)

    def derivative(self, t) -> np.ndarray:
        return self(t, nu=1)

    def to_dict(self):
        return {
            "knots": self.knots.tolist(),
            "coefficients": self.coefficients.tolist(),
            "order": self.order,
            "lambda_reg": self.lambda_reg,
        }


def clamped_knot_vector(breaks: np.ndarray, order: int) -> np.ndarray:
    """Full knot vector with the end breakpoints repeated order + 1 times"""
    return np.concatenate([np.repeat(breaks[0], order), breaks, np.repeat(breaks[-1], order)])


def breakpoints(times: np.ndarray, knot_spacing: float) -> np.ndarray:
    """Uniform breakpoints from the first to the last time, spacing close to knot_spacing"""
    span = float(times[-1] - times[0])
    if span <= 0:
        raise PreconditionError("Spline fit needs at least two distinct times")
    if not knot_spacing > 0:
        raise PreconditionError(f"knot_spacing must be positive, got {knot_spacing}")
    count = max(2, int(round(span / knot_spacing)) + 1)
    return np.linspace(times[0], times[-1], count)


def design_matrix(times: np.ndarray, breaks: np.ndarray, order: int) -> np.ndarray:
    return BSpline.design_matrix(times, clamped_knot_vector(breaks, order), order).toarray()


def penalty_gram(breaks: np.ndarray, order: int) -> np.ndarray:
    """G_ij = int B_i'' B_j'' dt, exact by Gauss-Legendre quadrature per interval"""
    knots = clamped_knot_vector(breaks, order)
    count = breaks.size + order - 1
    nodes, weights = np.polynomial.legendre.leggauss(order + 1)
    lower, upper = breaks[:-1], breaks[1:]
    half = 0.5 * (upper - lower)
    points = (0.5 * (upper + lower))[:, None] + half[:, None] * nodes[None, :]
    point_weights = half[:, None] * weights[None, :]
    basis = BSpline(knots, np.eye(count), order)
    curvature = basis.derivative(2)(points.ravel())
    return curvature.T @ (point_weights.ravel()[:, None] * curvature)


def _square_root(gram: np.ndarray) -> np.ndarray:
    """L with L^T L = G for the symmetric positive semi-definite penalty"""
    eigenvalues, vectors = np.linalg.eigh(gram)
    return np.sqrt(np.clip(eigenvalues, 0.0, None))[:, None] * vectors.T


def _solve(basis: np.ndarray, root: np.ndarray, samples: np.ndarray, lambda_reg: float) -> Tuple[np.ndarray, float]:
    if lambda_reg > 0:
        system = np.vstack([basis, math.sqrt(lambda_reg) * root])
        rhs = np.concatenate([samples, np.zeros(root.shape[0])])
    else:
        system, rhs = basis, samples
    coefficients = np.linalg.lstsq(system, rhs, rcond=None)[0]
    residual = float(np.sum((basis @ coefficients - samples) ** 2))
    return coefficients, residual


def fit_smoothing_spline(times, samples, sigma: float, order: int = 3,
                         knot_spacing: Optional[float] = None,
                         lambda_reg: Optional[float] = None) -> SplineModel:
    """
    Fit a penalised B-spline to samples.

    Args:
        times: Increasing sample times
        samples: Values at those times
        sigma: Noise standard deviation per sample (0 disables smoothing)
        order: Spline degree
        knot_spacing: Breakpoint spacing (default two sample steps)
        lambda_reg: Fixed smoothing weight; chosen by the discrepancy principle when None

    Returns:
        SplineModel of the fit
    """
    times = np.asarray(times, dtype=float)
    samples = np.asarray(samples, dtype=float)
    if times.ndim != 1 or times.size < MIN_SAMPLES:
        raise PreconditionError(f"Spline fit needs at least {MIN_SAMPLES} samples, got {times.size}")
    if samples.shape != times.shape:
        raise PreconditionError("Spline samples and times differ in length")
    if np.any(np.diff(times) <= 0):
        raise PreconditionError("Spline fit needs strictly increasing times")
    if sigma < 0:
        raise PreconditionError(f"sigma must be >= 0, got {sigma}")
    if not MIN_ORDER <= order <= MAX_ORDER:
        raise PreconditionError(f"Spline order must be in [{MIN_ORDER}, {MAX_ORDER}], got {order}")

    if knot_spacing is None:
        knot_spacing = 2.0 * float(np.mean(np.diff(times)))
    breaks = breakpoints(times, knot_spacing)
    basis = design_matrix(times, breaks, order)
    gram = penalty_gram(breaks, order)
    root = _square_root(gram)

    if lambda_reg is None:
        lambda_reg = discrepancy_lambda(basis, gram, root, samples, sigma)
    coefficients, residual = _solve(basis, root, samples, lambda_reg)
    return SplineModel(breaks, coefficients, order, lambda_reg, residual)


def discrepancy_lambda(basis: np.ndarray, gram: np.ndarray, root: np.ndarray,
                       samples: np.ndarray, sigma: float) -> float:
    """Largest lambda with residual sum <= n * sigma^2 (bisection in log10 lambda)"""
    if sigma == 0:
        return 0.0
    target = samples.size * sigma ** 2
    scale = float(np.trace(basis.T @ basis) / max(np.trace(gram), np.finfo(float).tiny))
    low = math.log10(scale * LAMBDA_RANGE[0])
    high = math.log10(scale * LAMBDA_RANGE[1])

    if _solve(basis, root, samples, 10.0 ** high)[1] <= target:
        return 10.0 ** high
    if _solve(basis, root, samples, 10.0 ** low)[1] > target:
        logger.warning(f"Discrepancy target {target:.3e} unreachable; using the smallest lambda")
        return 10.0 ** low

    for _ in range(BISECTION_STEPS):
        middle = 0.5 * (low + high)
        if _solve(basis, root, samples, 10.0 ** middle)[1] <= target:
            low = middle
        else:
            high = middle
    logger.debug(f"Discrepancy lambda={10.0 ** low:.4e} (target residual {target:.3e})")
    return 10.0 ** low
