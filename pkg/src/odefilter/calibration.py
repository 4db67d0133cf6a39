"""Diffusion models and quasi maximum likelihood calibration.

Four models for the Wiener process gain ``Gamma`` are supported:

* ``FIXED`` -- ``Gamma = sigma^2 I`` constant over the solve,
* ``FIXED_DIAGONAL`` -- ``Gamma = diag(sigma_1^2, ..., sigma_d^2)`` constant,
* ``TV`` -- ``Gamma_n = sigma_n^2 I`` re-estimated on every step,
* ``TV_DIAGONAL`` -- ``Gamma_n`` diagonal, re-estimated on every step.

Fixed models are solved with unit diffusion; the running sums kept in
:class:`CalibrationState` give the estimate at any time and the posterior is
rescaled once at the end (:func:`rescale_posterior`).
"""

from __future__ import annotations

import dataclasses
import enum

import numpy as np

from .gaussian import GaussianState, ResidualRecord
from .prior import TransitionPair, preconditioned_transitions, preconditioner

__all__ = [
    "DIFFUSION_FLOOR",
    "DiffusionModel",
    "CalibrationState",
    "CalibrationError",
    "accumulate",
    "finalize_fixed",
    "estimate_tv_scalar",
    "estimate_tv_diagonal",
    "tv_scalar_from_covariance",
    "unit_local_covariance",
    "rescale_posterior",
    "log_likelihood",
]

DIFFUSION_FLOOR = 1e-20


class CalibrationError(ValueError):
    pass


class DiffusionModel(enum.Enum):
    FIXED = "fixed"
    FIXED_DIAGONAL = "fixed-mv"
    TV = "tv"
    TV_DIAGONAL = "tv-mv"

    @property
    def is_fixed(self) -> bool:
        return self in (DiffusionModel.FIXED, DiffusionModel.FIXED_DIAGONAL)

    @property
    def is_diagonal(self) -> bool:
        return self in (DiffusionModel.FIXED_DIAGONAL, DiffusionModel.TV_DIAGONAL)


@dataclasses.dataclass(frozen=True)
class CalibrationState:
    variant: DiffusionModel
    d: int
    n: int = 0
    running_scalar: float = 0.0
    running_diag: np.ndarray = None

    def __post_init__(self):
        if self.running_diag is None:
            object.__setattr__(self, "running_diag", np.zeros(self.d))

    def estimate(self) -> np.ndarray:
        """Current estimate as a ``d``-vector (unit diffusion before any data)."""
        if self.n == 0:
            return np.ones(self.d)
        return finalize_fixed(self)


def accumulate(cal: CalibrationState, record) -> CalibrationState:
    """Add one step computed with unit diffusion to the running sums."""
    res: ResidualRecord = record.residual
    w = np.asarray(res.whitened, dtype=float)
    if not np.all(np.isfinite(w)):
        raise CalibrationError("non-finite whitened residual")
    z = np.asarray(res.z_hat, dtype=float)
    s_breve = float(res.s_factor[0, 0] ** 2)
    diag = cal.running_diag + (z**2 / s_breve if s_breve > 0 else 0.0)
    return dataclasses.replace(
        cal,
        n=cal.n + 1,
        running_scalar=cal.running_scalar + float(w @ w) / cal.d,
        running_diag=diag,
    )


def finalize_fixed(cal: CalibrationState) -> np.ndarray:
    if cal.n == 0:
        raise CalibrationError("no steps accumulated")
    if cal.variant is DiffusionModel.FIXED:
        est = np.full(cal.d, cal.running_scalar / cal.n)
    elif cal.variant is DiffusionModel.FIXED_DIAGONAL:
        est = cal.running_diag / cal.n
    else:
        raise CalibrationError(f"{cal.variant} is not a fixed diffusion model")
    return np.maximum(est, DIFFUSION_FLOOR)


def unit_local_covariance(h_mat: np.ndarray, pair: TransitionPair, gamma=1.0) -> np.ndarray:
    """``H (Q_small (x) Gamma) H^T`` evaluated through the preconditioner."""
    q = pair.q
    d = h_mat.shape[0]
    t_full, _ = preconditioner(q, pair.h).expand(d)
    _, _, lq = preconditioned_transitions(q)
    g = np.broadcast_to(np.asarray(gamma, dtype=float), (d,))
    c = (h_mat * t_full) @ np.kron(lq, np.diag(np.sqrt(g)))
    return c @ c.T


def estimate_tv_scalar(z_hat, pair: TransitionPair, h_mat) -> float:
    """Local quasi-MLE of ``sigma_n^2`` assuming an error-free previous state."""
    cov = unit_local_covariance(np.asarray(h_mat, dtype=float), pair)
    return tv_scalar_from_covariance(z_hat, cov)


def tv_scalar_from_covariance(z_hat, cov) -> float:
    """``z^T C^{-1} z / d`` for a unit-diffusion residual covariance ``C``."""
    z = np.asarray(z_hat, dtype=float)
    try:
        chol = np.linalg.cholesky(cov)
        w = np.linalg.solve(chol, z)
        est = float(w @ w) / z.size
    except np.linalg.LinAlgError:
        est = float(z @ np.linalg.lstsq(cov, z, rcond=None)[0]) / z.size
    if not np.isfinite(est):
        return np.inf
    return max(est, DIFFUSION_FLOOR)


def estimate_tv_diagonal(z_hat, pair: TransitionPair) -> np.ndarray:
    """Per-dimension local estimate ``z_i^2 / Q_small[1, 1]``."""
    z = np.asarray(z_hat, dtype=float)
    est = z**2 / pair.q_small[1, 1]
    return np.maximum(est, DIFFUSION_FLOOR)


def _scale_state(state: GaussianState, rows: np.ndarray) -> GaussianState:
    return GaussianState(state.mean, state.cov_factor * rows[:, None])


def rescale_posterior(records, cal_result):
    """Rescale covariances of unit-diffusion records to ``Gamma = diag(cal_result)``."""
    g = np.asarray(cal_result, dtype=float)
    root = np.sqrt(g)
    out = []
    for rec in records:
        q1 = rec.predicted.dim // g.size
        rows = np.tile(root, q1)
        res = rec.residual
        out.append(
            dataclasses.replace(
                rec,
                predicted=_scale_state(rec.predicted, rows),
                filtered=_scale_state(rec.filtered, rows),
                residual=ResidualRecord(
                    res.z_hat, res.s_factor * root[:, None], res.whitened / root
                ),
                diffusion=g * rec.diffusion,
            )
        )
    return out


def log_likelihood(z_hats, s_covs) -> float:
    """Gaussian log-likelihood ``sum_n log N(0; z_n, S_n)``."""
    total = 0.0
    for z, s in zip(z_hats, s_covs):
        z = np.atleast_1d(np.asarray(z, dtype=float))
        s = np.atleast_2d(np.asarray(s, dtype=float))
        sign, logdet = np.linalg.slogdet(s)
        total += -0.5 * (logdet + z @ np.linalg.solve(s, z) + z.size * np.log(2 * np.pi))
    return float(total)
