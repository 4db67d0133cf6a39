"""Local error estimation and proportional step-size control."""

from __future__ import annotations

import dataclasses

import numpy as np

from .calibration import unit_local_covariance
from .prior import TransitionPair
from .problems import IVProblem

__all__ = [
    "ControllerConfig",
    "StepDecision",
    "local_error",
    "error_ratio",
    "next_step",
    "initial_step",
    "initial_step_from_slope",
]


@dataclasses.dataclass(frozen=True)
class ControllerConfig:
    """Tolerances and proportional-controller constants.

    ``step_scaled_error`` multiplies the residual standard deviation ``D``
    (derivative units) by the step size before it is compared against the
    tolerance ``eps`` (solution units). Without it stiff transients, where
    ``|y'|`` greatly exceeds ``|y|``, force step sizes orders of magnitude
    below what the solution accuracy requires.
    """

    tau_abs: float = 1e-6
    tau_rel: float = 1e-3
    rho: float = 0.9
    eta_min: float = 0.2
    eta_max: float = 10.0
    h_min: float = None
    max_consecutive_rejects: int = 20
    max_steps: int = 10**6
    step_scaled_error: bool = True

    def __post_init__(self):
        if not (self.tau_abs > 0 and self.tau_rel > 0):
            raise ValueError("tolerances must be positive")
        if not 0 < self.rho <= 1:
            raise ValueError("safety factor rho must lie in (0, 1]")
        if not 0 < self.eta_min < 1 < self.eta_max:
            raise ValueError("need 0 < eta_min < 1 < eta_max")
        if self.h_min is not None and not self.h_min > 0:
            raise ValueError("h_min must be positive")

    def min_step(self, span: float) -> float:
        return self.h_min if self.h_min is not None else 1e-14 * span


@dataclasses.dataclass(frozen=True)
class StepDecision:
    accept: bool
    error_ratio: float
    h_next: float
    d_vec: np.ndarray = None


def local_error(h_mat: np.ndarray, pair: TransitionPair, gamma) -> np.ndarray:
    """Standard deviations of the residual assuming an exact previous state."""
    cov = unit_local_covariance(np.asarray(h_mat, dtype=float), pair, gamma)
    return np.sqrt(np.clip(np.diag(cov), 0.0, None))


def error_ratio(d_vec, y_prev, y_new, cfg: ControllerConfig) -> float:
    d_vec = np.asarray(d_vec, dtype=float)
    if not np.all(np.isfinite(d_vec)):
        return np.inf
    eps = cfg.tau_abs + cfg.tau_rel * np.maximum(np.abs(y_prev), np.abs(y_new))
    return float(np.sqrt(np.mean((d_vec / eps) ** 2)))


def next_step(h: float, e: float, q: int, cfg: ControllerConfig,
              d_vec: np.ndarray = None) -> StepDecision:
    """Accept iff ``E <= 1``; propose ``h * clamp(rho E^{-1/(q+1)})``."""
    if not np.isfinite(e):
        return StepDecision(False, float(e), h * cfg.eta_min, d_vec)
    if e == 0.0:
        factor = cfg.eta_max
    else:
        factor = min(cfg.eta_max, max(cfg.eta_min, cfg.rho * e ** (-1.0 / (q + 1))))
    return StepDecision(bool(e <= 1.0), float(e), h * factor, d_vec)


def _rms(x):
    return float(np.sqrt(np.mean(np.square(x))))


def initial_step(problem: IVProblem, q: int, cfg: ControllerConfig) -> float:
    """Automatic first step ``0.01 ||y0|| / ||f(y0)||`` in tolerance-scaled norms."""
    f0 = np.asarray(problem.f(problem.y0, problem.t0), dtype=float)
    return initial_step_from_slope(problem.y0, f0, problem.t1 - problem.t0, cfg)


def initial_step_from_slope(y0, f0, span: float, cfg: ControllerConfig) -> float:
    """:func:`initial_step` for an already evaluated ``f0 = f(y0, t0)``."""
    if not np.all(np.isfinite(f0)):
        raise FloatingPointError("vector field not finite at the initial value")
    upper = span / 10
    lower = cfg.min_step(span)
    scale = cfg.tau_abs + cfg.tau_rel * np.abs(y0)
    d0 = _rms(y0 / scale)
    d1 = _rms(f0 / scale)
    if d1 == 0.0:
        return upper
    h0 = 1e-6 if d0 < 1e-5 else 0.01 * d0 / d1
    return float(min(upper, max(lower, h0)))
