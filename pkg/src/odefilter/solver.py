"""Adaptive and fixed-step probabilistic ODE solvers.

The four algorithms are the product of linearization order and smoothing:

======  ==============  ==========
name    linearization   smoothing
======  ==============  ==========
ekf0    zeroth          no
ekf1    first           no
eks0    zeroth          yes
eks1    first           yes
======  ==============  ==========

Example
-------
>>> from odefilter import get_problem, solve
>>> post, diag = solve(get_problem("logistic"), "eks1", q=3, tau_abs=1e-8, tau_rel=1e-8)
>>> diag.ok
True
"""

from __future__ import annotations

import bisect
import dataclasses
import enum
import time
from typing import Optional

import numpy as np

from .calibration import (
    CalibrationState,
    DiffusionModel,
    accumulate,
    finalize_fixed,
    rescale_posterior,
)
from .control import ControllerConfig, error_ratio, initial_step, next_step
from .filtering import LinearizationOrder, StepRecord, VectorFieldError, filter_step, predict
from .gaussian import GaussianState, NonFiniteError, SingularInnovationError, marginal_solution
from .prior import IWPPrior, iwp_transitions, taylor_initial_state
from .problems import IVProblem
from .smoother import SmoothedGrid, interpolate, smooth_pass

__all__ = [
    "SolverSpec",
    "ODEPosterior",
    "Outcome",
    "SolveDiagnostics",
    "ConfigurationError",
    "solve_adaptive",
    "solve_fixed",
    "solve",
    "ALGORITHMS",
]

ALGORITHMS = {
    "ekf0": (LinearizationOrder.ZEROTH, False),
    "ekf1": (LinearizationOrder.FIRST, False),
    "eks0": (LinearizationOrder.ZEROTH, True),
    "eks1": (LinearizationOrder.FIRST, True),
}

_STEP_FAILURES = (
    VectorFieldError,
    NonFiniteError,
    SingularInnovationError,
    FloatingPointError,
    np.linalg.LinAlgError,
)


class ConfigurationError(ValueError):
    pass


@dataclasses.dataclass(frozen=True)
class SolverSpec:
    linearization: LinearizationOrder = LinearizationOrder.FIRST
    smooth: bool = True
    q: int = 3
    diffusion: DiffusionModel = DiffusionModel.TV

    def __post_init__(self):
        if not 1 <= self.q <= 5:
            raise ConfigurationError(f"order q must lie in [1, 5], got {self.q}")
        if self.diffusion.is_diagonal and self.linearization is not LinearizationOrder.ZEROTH:
            raise ConfigurationError(
                f"diffusion {self.diffusion.value!r} requires zeroth-order linearization"
            )

    @classmethod
    def from_name(cls, algorithm: str, q: int = 3, diffusion="tv") -> "SolverSpec":
        try:
            lin, smooth = ALGORITHMS[algorithm]
        except KeyError:
            raise ConfigurationError(
                f"unknown algorithm {algorithm!r}; choose from {', '.join(ALGORITHMS)}"
            ) from None
        return cls(lin, smooth, q, DiffusionModel(diffusion))

    @property
    def name(self) -> str:
        kind = "eks" if self.smooth else "ekf"
        return f"{kind}{self.linearization.value}"


class Outcome(enum.Enum):
    SUCCESS = "success"
    MIN_STEP_FAILURE = "min-step-failure"
    NON_FINITE_STATE = "non-finite-state"
    MAX_STEPS_EXCEEDED = "max-steps-exceeded"


@dataclasses.dataclass(frozen=True)
class SolveDiagnostics:
    outcome: Outcome
    message: str = ""

    @property
    def ok(self) -> bool:
        return self.outcome is Outcome.SUCCESS


@dataclasses.dataclass
class ODEPosterior:
    """Result of a solve: grid, filtered and (optionally) smoothed states.

    ``diffusions[n]`` is the diffusion attached to node ``n``; for fixed
    models every row holds the final estimate.
    """

    times: np.ndarray
    filtered: list
    smoothed: Optional[SmoothedGrid]
    diffusions: np.ndarray
    stats: dict
    spec: SolverSpec
    d: int
    records: list = dataclasses.field(default_factory=list, repr=False)

    @property
    def q(self) -> int:
        return self.spec.q

    @property
    def states(self) -> list:
        return self.smoothed.states if self.smoothed is not None else self.filtered

    def marginals(self):
        """``(means, stds)`` of the solution on the grid, each ``(N+1, d)``."""
        pairs = [marginal_solution(s, self.d) for s in self.states]
        return np.array([p[0] for p in pairs]), np.array([p[1] for p in pairs])

    @property
    def means(self) -> np.ndarray:
        return np.array([s.mean[: self.d] for s in self.states])

    @property
    def stds(self) -> np.ndarray:
        return self.marginals()[1]

    def covariances(self) -> np.ndarray:
        """Marginal ``d x d`` solution covariances on the grid."""
        return np.array([(s.cov_factor[: self.d] @ s.cov_factor[: self.d].T) for s in self.states])

    def __call__(self, t: float) -> GaussianState:
        """Dense output at ``t``."""
        prior = IWPPrior(self.q, self.d)
        if self.smoothed is not None:
            return interpolate(self.smoothed, prior, None, t)
        times = self.times
        if not times[0] <= t <= times[-1]:
            raise ValueError(f"t={t!r} outside the solved interval")
        n = bisect.bisect_right(times, t) - 1
        if times[n] == t:
            return self.filtered[n]
        return predict(self.filtered[n], iwp_transitions(self.q, t - times[n]),
                       self.diffusions[n + 1], self.d)


class _Counted:
    """Wraps ``f`` and ``jacobian`` of a problem and counts calls."""

    def __init__(self, problem: IVProblem):
        self.f_evals = 0
        self.jac_evals = 0
        self._f = problem.f
        self._jac = problem.jacobian
        self.problem = dataclasses.replace(
            problem, f=self.f, jacobian=self.jacobian if problem.jacobian else None
        )

    def f(self, y, t):
        self.f_evals += 1
        return self._f(y, t)

    def jacobian(self, y, t):
        self.jac_evals += 1
        return self._jac(y, t)


def _finish(problem, spec, state0, records, cal, counter, accepted, rejected, t_start,
            diagnostics):
    d = problem.d
    if spec.diffusion.is_fixed and cal.n > 0:
        g = finalize_fixed(cal)
        records = rescale_posterior(records, g)
        rows = np.tile(np.sqrt(g), spec.q + 1)
        state0 = GaussianState(state0.mean, state0.cov_factor * rows[:, None])
        first = g
    else:
        first = np.ones(d)
    smoothed = None
    if spec.smooth and diagnostics.ok:
        smoothed = smooth_pass(records, state0, problem.t0)
        smoothed = dataclasses.replace(
            smoothed, diffusions=np.vstack([first] + [r.diffusion for r in records])
        )
    times = np.array([problem.t0] + [r.t for r in records])
    diffusions = np.vstack([first] + [r.diffusion for r in records])
    stats = {
        "f_evals": counter.f_evals,
        "jac_evals": counter.jac_evals,
        "steps_accepted": accepted,
        "steps_rejected": rejected,
        "wall_time": time.perf_counter() - t_start,
    }
    post = ODEPosterior(
        times=times,
        filtered=[state0] + [r.filtered for r in records],
        smoothed=smoothed,
        diffusions=diffusions,
        stats=stats,
        spec=spec,
        d=d,
        records=records,
    )
    return post, diagnostics


def _step_gamma(spec: SolverSpec, d: int):
    return spec.diffusion if not spec.diffusion.is_fixed else np.ones(d)


def solve_adaptive(problem: IVProblem, spec: SolverSpec, cfg: ControllerConfig = None):
    """Adaptive solve over ``problem.tspan``; returns ``(ODEPosterior, SolveDiagnostics)``."""
    cfg = cfg or ControllerConfig()
    t_start = time.perf_counter()
    counter = _Counted(problem)
    cp = counter.problem
    d, q = problem.d, spec.q
    t0, t_end = problem.tspan
    h_min = cfg.min_step(t_end - t0)

    state = state0 = taylor_initial_state(problem, q)
    h = initial_step(cp, q, cfg)
    gamma_arg = _step_gamma(spec, d)
    cal = CalibrationState(spec.diffusion, d)
    records: list[StepRecord] = []
    t = t0
    accepted = rejected = consecutive = 0
    diagnostics = SolveDiagnostics(Outcome.SUCCESS)

    while t < t_end:
        if accepted + rejected >= cfg.max_steps:
            diagnostics = SolveDiagnostics(
                Outcome.MAX_STEPS_EXCEEDED,
                f"{cfg.max_steps} attempted steps reached at t={t!r}",
            )
            break
        last = t + 1.01 * h >= t_end
        if last:
            h = t_end - t
        try:
            rec = filter_step(state, cp, t, h, gamma_arg, spec.linearization)
        except _STEP_FAILURES:
            rec = None
        cand = cal
        if rec is None:
            e = np.inf
        else:
            if spec.diffusion.is_fixed:
                cand = accumulate(cal, rec)
                g_err = cand.estimate()
            else:
                g_err = rec.diffusion
            # H (Q (x) G) H^T = G * H (Q (x) I) H^T for every admissible (H, G) pairing
            d_vec = np.sqrt(rec.local_var * g_err)
            if cfg.step_scaled_error:
                d_vec = h * d_vec
            e = error_ratio(d_vec, state.mean[:d], rec.filtered.mean[:d], cfg)
        decision = next_step(h, e, q, cfg)

        if decision.accept:
            if last:
                rec = dataclasses.replace(rec, t=t_end)
            records.append(rec)
            state = rec.filtered
            t = rec.t
            cal = cand
            accepted += 1
            consecutive = 0
            h = decision.h_next
            continue

        rejected += 1
        consecutive += 1
        h = decision.h_next
        if h < h_min or consecutive > cfg.max_consecutive_rejects:
            outcome = Outcome.NON_FINITE_STATE if rec is None else Outcome.MIN_STEP_FAILURE
            diagnostics = SolveDiagnostics(
                outcome,
                f"step size {h:.3e} after {consecutive} consecutive rejections at t={t!r}",
            )
            break

    return _finish(problem, spec, state0, records, cal, counter, accepted, rejected,
                   t_start, diagnostics)


def solve_fixed(problem: IVProblem, spec: SolverSpec, h: float):
    """Solve on the uniform grid ``t0, t0 + h, ..., T`` (last step truncated)."""
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h!r}")
    t_start = time.perf_counter()
    counter = _Counted(problem)
    cp = counter.problem
    d, q = problem.d, spec.q
    t0, t_end = problem.tspan
    n_steps = max(1, int(np.ceil((t_end - t0) / h - 1e-9)))
    grid = t0 + h * np.arange(n_steps + 1)
    grid[-1] = t_end

    state = state0 = taylor_initial_state(problem, q)
    gamma_arg = _step_gamma(spec, d)
    cal = CalibrationState(spec.diffusion, d)
    records = []
    diagnostics = SolveDiagnostics(Outcome.SUCCESS)
    for a, b in zip(grid[:-1], grid[1:]):
        try:
            rec = filter_step(state, cp, a, b - a, gamma_arg, spec.linearization)
        except _STEP_FAILURES as exc:
            diagnostics = SolveDiagnostics(Outcome.NON_FINITE_STATE, f"at t={a!r}: {exc}")
            break
        rec = dataclasses.replace(rec, t=float(b))
        if spec.diffusion.is_fixed:
            cal = accumulate(cal, rec)
        records.append(rec)
        state = rec.filtered
    return _finish(problem, spec, state0, records, cal, counter, len(records), 0,
                   t_start, diagnostics)


def solve(problem: IVProblem, algorithm: str = "eks1", q: int = 3, diffusion: str = "tv",
          tau_abs: float = 1e-6, tau_rel: float = 1e-3, **controller):
    """Convenience wrapper around :func:`solve_adaptive` taking string names."""
    spec = SolverSpec.from_name(algorithm, q, diffusion)
    cfg = ControllerConfig(tau_abs=tau_abs, tau_rel=tau_rel, **controller)
    return solve_adaptive(problem, spec, cfg)
