"""Dormand-Prince 4(5) baseline and reference solutions.

The explicit solver shares the tolerance semantics of the probabilistic
solvers: the componentwise weights are
``eps_i = tau_abs + tau_rel * max(|y_prev_i|, |y_new_i|)``, the error
is their RMS ratio and the proportional controller uses exponent ``1/5``
with the same safety factor and clamps.

Function evaluations are counted with first-same-as-last reuse: the
first stage of the initial step doubles as the evaluation for the
initial step-size heuristic and every attempted step costs six new
evaluations, accepted or not, so ``f_evals = 1 + 6 (accepted + rejected)``.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import os
from fractions import Fraction as F
from pathlib import Path
from typing import Optional

import numpy as np
from filelock import FileLock

from .control import ControllerConfig, error_ratio, initial_step_from_slope, next_step
from .problems import IVProblem
from .solver import Outcome, SolveDiagnostics

__all__ = [
    "RKTrajectory",
    "ReferenceFailure",
    "dp5_step",
    "dp5_solve",
    "dp5_fixed",
    "reference_solution",
    "stiff_reference",
    "DEFAULT_CACHE_DIR",
]

DEFAULT_CACHE_DIR = Path.home() / ".cache" / "odefilter"

_C = [F(0), F(1, 5), F(3, 10), F(4, 5), F(8, 9), F(1), F(1)]
_A = [
    [],
    [F(1, 5)],
    [F(3, 40), F(9, 40)],
    [F(44, 45), F(-56, 15), F(32, 9)],
    [F(19372, 6561), F(-25360, 2187), F(64448, 6561), F(-212, 729)],
    [F(9017, 3168), F(-355, 33), F(46732, 5247), F(49, 176), F(-5103, 18656)],
    [F(35, 384), F(0), F(500, 1113), F(125, 192), F(-2187, 6784), F(11, 84)],
]
_B5 = [F(35, 384), F(0), F(500, 1113), F(125, 192), F(-2187, 6784), F(11, 84), F(0)]
_B4 = [F(5179, 57600), F(0), F(7571, 16695), F(393, 640), F(-92097, 339200),
       F(187, 2100), F(1, 40)]
# dense output weights of the fourth-order continuous extension
_D = [F(-12715105075, 11282082432), F(0), F(87487479700, 32700410799),
      F(-10690763975, 1880347072), F(701980252875, 199316789632),
      F(-1453857185, 822651844), F(69997945, 29380423)]

C = np.array([float(v) for v in _C])
A = [np.array([float(v) for v in row]) for row in _A]
B5 = np.array([float(v) for v in _B5])
B4 = np.array([float(v) for v in _B4])
E = np.array([float(a - b) for a, b in zip(_B5, _B4)])
D = np.array([float(v) for v in _D])


class ReferenceFailure(RuntimeError):
    """No trustworthy reference solution can be produced."""


def dp5_step(f, t: float, y: np.ndarray, k1: np.ndarray, h: float):
    """One Dormand-Prince step.

    Returns ``(y_new, k, err)`` where ``k`` holds the seven stage slopes
    (``k[6] = f(y_new)``) and ``err`` the embedded error estimate.
    """
    k = np.empty((7, y.size))
    k[0] = k1
    for s in range(1, 7):
        ys = y + h * (A[s] @ k[:s])
        k[s] = f(ys, t + C[s] * h)
    y_new = y + h * (B5 @ k)
    # stage 7 is evaluated at y + h * sum(b5 k) = y_new
    return y_new, k, h * (E @ k)


def _dense_coefficients(y, y_new, k, h):
    ydiff = y_new - y
    bspl = h * k[0] - ydiff
    return np.stack([y, ydiff, bspl, ydiff - h * k[6] - bspl, h * (D @ k)])


@dataclasses.dataclass
class RKTrajectory:
    """Accepted grid, values, counters and the dense interpolant."""

    times: np.ndarray
    values: np.ndarray
    stats: dict
    dense: np.ndarray
    diagnostics: SolveDiagnostics = dataclasses.field(
        default_factory=lambda: SolveDiagnostics(Outcome.SUCCESS)
    )

    def __call__(self, ts) -> np.ndarray:
        """Dense output; ``(d,)`` for scalar ``ts``, ``(n, d)`` otherwise."""
        ts_arr = np.atleast_1d(np.asarray(ts, dtype=float))
        if np.any(ts_arr < self.times[0]) or np.any(ts_arr > self.times[-1]):
            raise ValueError("evaluation time outside the integrated interval")
        idx = np.clip(np.searchsorted(self.times, ts_arr, side="right") - 1,
                      0, len(self.times) - 2)
        h = self.times[idx + 1] - self.times[idx]
        theta = ((ts_arr - self.times[idx]) / h)[:, None]
        th1 = 1.0 - theta
        r = self.dense[idx]
        out = r[:, 0] + theta * (r[:, 1] + th1 * (r[:, 2] + theta * (r[:, 3] + th1 * r[:, 4])))
        exact = self.times[idx + 1] == ts_arr
        out[exact] = self.values[idx[exact] + 1]
        return out[0] if np.ndim(ts) == 0 else out


def _counted(f):
    count = [0]

    def wrapped(y, t):
        count[0] += 1
        return np.asarray(f(y, t), dtype=float)

    return wrapped, count


def dp5_solve(problem: IVProblem, tau_abs: float = 1e-6, tau_rel: float = 1e-3,
              cfg: Optional[ControllerConfig] = None) -> RKTrajectory:
    """Adaptive DP5 over ``problem.tspan`` with the shared error norm."""
    if cfg is None:
        cfg = ControllerConfig(tau_abs=tau_abs, tau_rel=tau_rel)
    f, count = _counted(problem.f)
    t0, t_end = problem.tspan
    h_min = cfg.min_step(t_end - t0)
    y = problem.y0.copy()
    k1 = f(y, t0)
    h = initial_step_from_slope(y, k1, t_end - t0, cfg)

    times, values, dense = [t0], [y.copy()], []
    t = t0
    accepted = rejected = consecutive = 0
    diagnostics = SolveDiagnostics(Outcome.SUCCESS)
    with np.errstate(over="ignore", invalid="ignore"):
        while t < t_end:
            if accepted + rejected >= cfg.max_steps:
                diagnostics = SolveDiagnostics(
                    Outcome.MAX_STEPS_EXCEEDED, f"{cfg.max_steps} attempted steps at t={t!r}"
                )
                break
            last = t + 1.01 * h >= t_end
            if last:
                h = t_end - t
            y_new, k, err = dp5_step(f, t, y, k1, h)
            if np.all(np.isfinite(y_new)) and np.all(np.isfinite(k)):
                e = error_ratio(err, y, y_new, cfg)
            else:
                e = np.inf
            decision = next_step(h, e, 4, cfg)
            if decision.accept:
                dense.append(_dense_coefficients(y, y_new, k, h))
                t = t_end if last else t + h
                y, k1 = y_new, k[6]
                times.append(t)
                values.append(y.copy())
                accepted += 1
                consecutive = 0
                h = decision.h_next
                continue
            rejected += 1
            consecutive += 1
            h = decision.h_next
            if h < h_min or consecutive > cfg.max_consecutive_rejects:
                outcome = Outcome.MIN_STEP_FAILURE if np.isfinite(e) else Outcome.NON_FINITE_STATE
                diagnostics = SolveDiagnostics(
                    outcome, f"step size {h:.3e} after {consecutive} rejections at t={t!r}"
                )
                break

    d = problem.d
    return RKTrajectory(
        times=np.array(times),
        values=np.array(values),
        stats={"f_evals": count[0], "jac_evals": 0, "steps_accepted": accepted,
               "steps_rejected": rejected},
        dense=np.array(dense) if dense else np.zeros((0, 5, d)),
        diagnostics=diagnostics,
    )


def dp5_fixed(problem: IVProblem, h: float) -> RKTrajectory:
    """DP5 on the uniform grid ``t0, t0 + h, ..., T`` (last step truncated)."""
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h!r}")
    f, count = _counted(problem.f)
    t0, t_end = problem.tspan
    n = max(1, int(np.ceil((t_end - t0) / h - 1e-9)))
    grid = t0 + h * np.arange(n + 1)
    grid[-1] = t_end
    y = problem.y0.copy()
    k1 = f(y, t0)
    values, dense = [y.copy()], []
    for a, b in zip(grid[:-1], grid[1:]):
        y_new, k, _ = dp5_step(f, a, y, k1, b - a)
        dense.append(_dense_coefficients(y, y_new, k, b - a))
        y, k1 = y_new, k[6]
        values.append(y.copy())
    return RKTrajectory(
        times=grid,
        values=np.array(values),
        stats={"f_evals": count[0], "jac_evals": 0, "steps_accepted": n, "steps_rejected": 0},
        dense=np.array(dense),
    )


def _cache_key(problem: IVProblem, ts: np.ndarray, tau: float) -> tuple[str, dict]:
    header = {
        "problem": problem.name,
        "params": {k: v for k, v in sorted(problem.params.items())},
        "y0": problem.y0.tolist(),
        "tspan": list(problem.tspan),
        "tolerance": tau,
        "grid_sha256": hashlib.sha256(np.ascontiguousarray(ts, dtype=float).tobytes()).hexdigest(),
    }
    digest = hashlib.sha256(json.dumps(header, sort_keys=True).encode()).hexdigest()[:24]
    return f"{problem.name}-{digest}", header


def reference_solution(problem: IVProblem, ts, tau: float = 1e-12,
                       cache_dir: Optional[os.PathLike] = DEFAULT_CACHE_DIR) -> np.ndarray:
    """Reference values ``(len(ts), d)`` at the times ``ts``.

    Analytic when the problem has a closed form, otherwise DP5 dense output
    at ``tau_abs = tau_rel = tau``. DP5 results are cached as JSON files in
    ``cache_dir`` (``None`` disables caching).
    """
    ts = np.atleast_1d(np.asarray(ts, dtype=float))
    if np.any(ts < problem.t0) or np.any(ts > problem.t1):
        raise ValueError("reference times must lie in the problem's time span")
    if problem.analytic is not None:
        return np.asarray(problem.analytic(ts), dtype=float).reshape(ts.size, problem.d)
    if problem.name == "vanderpol-stiff":
        raise ReferenceFailure(
            "explicit Runge-Kutta is impractical for the stiff Van der Pol problem; "
            "use stiff_reference"
        )

    def compute():
        traj = dp5_solve(problem, tau, tau, ControllerConfig(tau_abs=tau, tau_rel=tau,
                                                             max_steps=10**7))
        if not traj.diagnostics.ok:
            raise ReferenceFailure(f"DP5 reference failed: {traj.diagnostics.message}")
        return traj(ts).reshape(ts.size, problem.d)

    if cache_dir is None:
        return compute()
    name, header = _cache_key(problem, ts, tau)
    return _cached(Path(cache_dir) / f"{name}.json", header, compute).reshape(ts.size, problem.d)


def _cached(path: Path, header: dict, compute) -> np.ndarray:
    path.parent.mkdir(parents=True, exist_ok=True)
    with FileLock(str(path) + ".lock"):
        if path.exists():
            stored = json.loads(path.read_text())
            if stored.get("header") == header:
                return np.array(stored["values"], dtype=float)
        values = np.asarray(compute(), dtype=float)
        tmp = path.with_suffix(".tmp")
        tmp.write_text(json.dumps({"header": header, "values": values.tolist()}))
        tmp.replace(path)
    return values


def stiff_reference(problem: IVProblem, tau_abs: float = 1e-9, tau_rel: float = 1e-6,
                    agreement: float = 1e-4,
                    cache_dir: Optional[os.PathLike] = DEFAULT_CACHE_DIR):
    """Endpoint reference from two tight-tolerance EKS1 solves.

    Runs EKS1/IWP3 with time-varying scalar diffusion at ``(tau_abs, tau_rel)``
    and at half of both; the tighter result is returned once the two agree
    to ``agreement`` in the 2-norm. Returns ``(value, discrepancy)``; both
    are cached like :func:`reference_solution`.
    """
    from .solver import solve

    def compute():
        results = []
        for scale in (1.0, 0.5):
            post, diag = solve(problem, "eks1", q=3, diffusion="tv",
                               tau_abs=tau_abs * scale, tau_rel=tau_rel * scale)
            if not diag.ok:
                raise ReferenceFailure(f"stiff reference solve failed: {diag.message}")
            results.append(post.means[-1])
        gap = float(np.linalg.norm(results[0] - results[1]))
        return np.append(results[1], gap)

    if cache_dir is None:
        values = compute()
    else:
        name, header = _cache_key(problem, np.array([problem.t1]), tau_abs)
        header = dict(header, kind="stiff-eks1", tau_rel=tau_rel)
        values = _cached(Path(cache_dir) / f"stiff-{name}.json", header, compute)
    gap = float(values[-1])
    if gap > agreement:
        raise ReferenceFailure(f"tolerance-halved solves disagree by {gap:.3e}")
    return values[:-1], gap
