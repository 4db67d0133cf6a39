"""Calibration and accuracy metrics.

The calibration statistic of a posterior against reference values
``y*(t_i)`` on the solver grid (initial node excluded) is

    chi2 = (1/N) sum_i r_i^T Cov(y(t_i))^{-1} r_i,   r_i = mean(t_i) - y*(t_i).

For a well calibrated posterior each term is ``chi^2_d`` distributed and
the statistic concentrates around ``d``; :class:`Chi2Report` carries the
exact 99% interval of ``(1/N) chi^2_{Nd}``.
"""

from __future__ import annotations

import dataclasses
import math
import time
import warnings
from typing import Iterable, Optional, Sequence, Union

import numpy as np
from scipy import stats

from .baseline import ReferenceFailure, dp5_solve, reference_solution
from .control import ControllerConfig
from .problems import IVProblem
from .solver import ODEPosterior, SolverSpec, solve_adaptive

__all__ = [
    "COVARIANCE_FLOOR",
    "Chi2Report",
    "Chi2Error",
    "WorkPrecisionRecord",
    "chi_square",
    "chi_square_statistic",
    "chi2_band",
    "empirical_order",
    "work_precision",
    "tolerance_ladder",
]

COVARIANCE_FLOOR = 1e-30


class Chi2Error(ValueError):
    pass


def chi2_band(d: int, n_points: int, level: float = 0.99) -> tuple[float, float]:
    """Central ``level`` interval of ``(1/N) chi^2_{N d}``."""
    dist = stats.gamma(a=n_points * d / 2.0, scale=2.0 / n_points)
    lo, hi = (1 - level) / 2, 1 - (1 - level) / 2
    return float(dist.ppf(lo)), float(dist.ppf(hi))


@dataclasses.dataclass(frozen=True)
class Chi2Report:
    statistic: float
    d: int
    n_points: int
    band_low: float
    band_high: float

    @property
    def within_band(self) -> bool:
        return self.band_low <= self.statistic <= self.band_high


def chi_square_statistic(residuals, covariances) -> float:
    """Mean Mahalanobis norm of ``residuals`` (N, d) under ``covariances`` (N, d, d)."""
    r = np.asarray(residuals, dtype=float)
    cov = np.asarray(covariances, dtype=float)
    if r.ndim == 1:
        r = r[:, None]
        cov = cov.reshape(-1, 1, 1)
    n, d = r.shape
    if cov.shape != (n, d, d):
        raise ValueError(f"covariances of shape {cov.shape} do not match residuals {r.shape}")
    if n == 0:
        raise Chi2Error("no evaluation points")
    if not np.any(cov):
        raise Chi2Error("all covariances are zero")
    cov = cov + COVARIANCE_FLOOR * np.eye(d)
    sol = np.linalg.solve(cov, r[..., None])[..., 0]
    return float(np.einsum("ni,ni->", r, sol) / n)


def chi_square(posterior: ODEPosterior, reference) -> Chi2Report:
    """Statistic of the (smoothed if available) solution marginals.

    ``reference`` holds ``y*`` on ``posterior.times``, shape ``(N + 1, d)``;
    the initial node is skipped.
    """
    ref = np.asarray(reference, dtype=float).reshape(len(posterior.times), posterior.d)
    means = posterior.means[1:]
    covs = posterior.covariances()[1:]
    stat = chi_square_statistic(means - ref[1:], covs)
    lo, hi = chi2_band(posterior.d, len(means))
    return Chi2Report(stat, posterior.d, len(means), lo, hi)


def empirical_order(pairs: Iterable[tuple[float, float]]) -> float:
    """Least-squares slope of ``log(error)`` against ``log(h)``."""
    pairs = [(float(h), float(e)) for h, e in pairs]
    kept = [(h, e) for h, e in pairs if e > 0 and np.isfinite(e)]
    if len(kept) < len(pairs):
        warnings.warn(f"dropped {len(pairs) - len(kept)} non-positive or non-finite errors",
                      RuntimeWarning, stacklevel=2)
    hs = np.array([h for h, _ in kept])
    if len(kept) < 3:
        raise ValueError("need at least three pairs with positive error")
    if np.any(hs <= 0) or len(np.unique(hs)) != len(hs):
        raise ValueError("step sizes must be positive and distinct")
    errs = np.array([e for _, e in kept])
    slope = np.polyfit(np.log(hs), np.log(errs), 1)[0]
    return float(slope)


@dataclasses.dataclass(frozen=True)
class WorkPrecisionRecord:
    problem: str
    algorithm: str
    order: int
    diffusion: str
    tau_abs: float
    tau_rel: float
    final_error: float
    f_evals: int
    jac_evals: int
    steps: int
    rejected: int
    chi2: float
    outcome: str
    wall_time: float

    @property
    def evaluations(self) -> int:
        return self.f_evals + self.jac_evals


def tolerance_ladder(first: float, last: float, rel_decades: int = 3):
    """Decade-wise ``(tau_abs, tau_rel)`` pairs from ``first`` to ``last``.

    ``tau_rel = 10**rel_decades * tau_abs``.
    """
    a, b = math.log10(first), math.log10(last)
    if a != round(a) or b != round(b):
        raise ValueError("ladder endpoints must be powers of ten")
    step = -1 if b < a else 1
    exps = range(round(a), round(b) + step, step)
    return [(10.0**e, 10.0 ** (e + rel_decades)) for e in exps]


def _reference_at(problem: IVProblem, ts, cache_dir):
    try:
        return reference_solution(problem, ts, cache_dir=cache_dir)
    except ReferenceFailure:
        return None


def work_precision(problem: IVProblem, specs: Sequence[Union[SolverSpec, str]],
                   tolerances: Sequence[tuple[float, float]],
                   cache_dir: Optional[str] = None, jobs: int = 1) -> list[WorkPrecisionRecord]:
    """One record per ``(spec, tolerance)``; ``"dp5"`` selects the baseline.

    Rows are ordered spec-major, then by tolerance as given. Errors use the
    2-norm at the final time against :func:`reference_solution`; failed
    solves are recorded with their outcome and the sweep continues.
    """
    cells = [(spec, tol) for spec in specs for tol in tolerances]
    if jobs > 1:
        import multiprocessing
        from concurrent.futures import ProcessPoolExecutor

        # fork hands the problem (closures, not picklable) to the workers
        ctx = multiprocessing.get_context("fork")
        with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx, initializer=_set_worker_problem,
                                 initargs=(problem,)) as pool:
            return list(pool.map(_run_worker_cell, [c[0] for c in cells],
                                 [c[1] for c in cells], [cache_dir] * len(cells)))
    return [_run_cell(problem, spec, tol, cache_dir) for spec, tol in cells]


_WORKER_PROBLEM = None


def _set_worker_problem(problem):
    global _WORKER_PROBLEM
    _WORKER_PROBLEM = problem


def _run_worker_cell(spec, tol, cache_dir):
    return _run_cell(_WORKER_PROBLEM, spec, tol, cache_dir)


def _run_cell(problem, spec, tol, cache_dir) -> WorkPrecisionRecord:
    tau_abs, tau_rel = tol
    cfg = ControllerConfig(tau_abs=tau_abs, tau_rel=tau_rel)
    start = time.perf_counter()
    if spec == "dp5":
        traj = dp5_solve(problem, cfg=cfg)
        wall = time.perf_counter() - start
        ref = _reference_at(problem, [problem.t1], cache_dir)
        err = (float(np.linalg.norm(traj.values[-1] - ref[0]))
               if ref is not None and traj.diagnostics.ok else math.nan)
        st = traj.stats
        return WorkPrecisionRecord(problem.name, "dp5", 5, "none", tau_abs, tau_rel, err,
                                   st["f_evals"], 0, st["steps_accepted"], st["steps_rejected"],
                                   math.nan, traj.diagnostics.outcome.value, wall)
    post, diag = solve_adaptive(problem, spec, cfg)
    wall = time.perf_counter() - start
    err = chi2 = math.nan
    if diag.ok:
        ref = _reference_at(problem, post.times, cache_dir)
        if ref is not None:
            err = float(np.linalg.norm(post.means[-1] - ref[-1]))
            try:
                chi2 = chi_square(post, ref).statistic
            except Chi2Error:
                chi2 = math.nan
    st = post.stats
    return WorkPrecisionRecord(problem.name, spec.name, spec.q, spec.diffusion.value,
                               tau_abs, tau_rel, err, st["f_evals"], st["jac_evals"],
                               st["steps_accepted"], st["steps_rejected"], chi2,
                               diag.outcome.value, wall)
