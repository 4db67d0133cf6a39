"""Extended Kalman filter step for the ODE measurement model.

The residual ``z(t) = X^(1)(t) - f(X^(0)(t), t)`` is conditioned to zero on
every grid point. All covariance arithmetic runs in preconditioned
coordinates, where the transitions do not depend on the step size.

With zeroth-order linearization (``H = E_1``) and diagonal diffusion the
state dimensions never mix, and the step runs on ``d`` independent
``(q+1) x (q+1)`` factors instead of one ``D x D`` factor.
"""

from __future__ import annotations

import dataclasses
import enum
import functools
from typing import Union

import numpy as np

from .calibration import DIFFUSION_FLOOR, DiffusionModel, tv_scalar_from_covariance
from .gaussian import (
    GaussianState,
    NonFiniteError,
    ResidualRecord,
    factored_update,
    sqrt_predict,
)
from .prior import TransitionPair, iwp_transitions, preconditioned_transitions, preconditioner
from .problems import IVProblem

__all__ = [
    "LinearizationOrder",
    "StepRecord",
    "VectorFieldError",
    "predict",
    "linearize",
    "filter_step",
    "to_blocks",
    "from_blocks",
]


class VectorFieldError(FloatingPointError):
    """The vector field (or its Jacobian) returned non-finite values."""


class LinearizationOrder(enum.Enum):
    ZEROTH = 0
    FIRST = 1


@dataclasses.dataclass(frozen=True, slots=True)
class StepRecord:
    """Everything one filter step produced. ``t`` is the time of the new node.

    ``local_var`` is the diagonal of ``H (Q_small (x) I) H^T``, the residual
    variance per unit diffusion under an exact previous state.
    """

    t: float
    h: float
    predicted: GaussianState
    filtered: GaussianState
    residual: ResidualRecord
    h_mat: np.ndarray
    diffusion: np.ndarray
    order: LinearizationOrder = LinearizationOrder.FIRST
    local_var: np.ndarray = None

    @property
    def pair(self) -> TransitionPair:
        return iwp_transitions(self.predicted.dim // self.h_mat.shape[0] - 1, self.h)


@functools.lru_cache(maxsize=None)
def _kron_eye(q: int, d: int):
    a, _, lq = preconditioned_transitions(q)
    e1 = np.zeros((d, d * (q + 1)))
    e1[:, d : 2 * d] = np.eye(d)
    out = np.kron(a, np.eye(d)), np.kron(lq, np.eye(d)), e1
    for arr in out:
        arr.setflags(write=False)
    return out


def to_blocks(factor: np.ndarray, d: int) -> np.ndarray:
    """Per-dimension ``(d, q+1, q+1)`` blocks of a derivative-major factor."""
    q1 = factor.shape[0] // d
    ar = np.arange(d)
    return factor.reshape(q1, d, q1, d)[:, ar, :, ar]


def from_blocks(blocks: np.ndarray) -> np.ndarray:
    d, q1, _ = blocks.shape
    out = np.zeros((q1, d, q1, d))
    ar = np.arange(d)
    out[:, ar, :, ar] = blocks
    return out.reshape(q1 * d, q1 * d)


def _sizes(state: GaussianState, d: int):
    dim = state.dim
    if dim % d:
        raise ValueError(f"state dimension {dim} is not a multiple of d={d}")
    return dim // d - 1


def predict(state: GaussianState, pair: TransitionPair, gamma, d: int) -> GaussianState:
    """Advance ``state`` by ``pair.h`` under ``Q = Q_small (x) diag(gamma)``."""
    q = _sizes(state, d)
    g = np.broadcast_to(np.asarray(gamma, dtype=float), (d,))
    if np.any(g < 0):
        raise ValueError("diffusion must be non-negative")
    t_full, tinv_full = preconditioner(q, pair.h).expand(d)
    a_k, lq_k, _ = _kron_eye(q, d)
    m = a_k @ (state.mean * tinv_full)
    lp = sqrt_predict(a_k, state.cov_factor * tinv_full[:, None], lq_k * np.tile(np.sqrt(g), q + 1))
    out = GaussianState(m * t_full, lp * t_full[:, None])
    if not out.is_finite():
        raise NonFiniteError("non-finite prediction")
    return out


def linearize(problem: IVProblem, predicted_mean: np.ndarray, t: float,
              order: LinearizationOrder):
    """Measurement matrix ``H`` and residual mean ``z_hat`` at ``predicted_mean``.

    The zeroth-order ``H`` is a shared read-only array.
    """
    d = problem.d
    q = predicted_mean.size // d - 1
    y = predicted_mean[:d]
    fy = np.asarray(problem.f(y, t), dtype=float)
    if not np.all(np.isfinite(fy)):
        raise VectorFieldError(f"vector field not finite at t={t!r}")
    z_hat = predicted_mean[d : 2 * d] - fy
    h_mat = _kron_eye(q, d)[2]
    if order is LinearizationOrder.FIRST:
        h_mat = h_mat.copy()
        if problem.jacobian is None:
            raise ValueError(f"problem {problem.name!r} provides no Jacobian")
        jac = np.asarray(problem.jacobian(y, t), dtype=float)
        if not np.all(np.isfinite(jac)):
            raise VectorFieldError(f"Jacobian not finite at t={t!r}")
        h_mat[:, :d] = -jac
    return h_mat, z_hat


def _resolve_gamma(gamma, z_hat, local_cov, d, zeroth):
    if isinstance(gamma, DiffusionModel):
        if gamma is DiffusionModel.TV:
            if zeroth:
                est = float(z_hat @ z_hat) / (d * local_cov[0, 0])
                return np.full(d, max(est, DIFFUSION_FLOOR) if np.isfinite(est) else np.inf)
            return np.full(d, tv_scalar_from_covariance(z_hat, local_cov))
        if gamma is DiffusionModel.TV_DIAGONAL:
            return np.maximum(z_hat**2 / np.diag(local_cov), DIFFUSION_FLOOR)
        raise ValueError(f"{gamma} cannot be resolved inside a step; pass a vector")
    g = np.broadcast_to(np.asarray(gamma, dtype=float), (d,)).copy()
    if np.any(g < 0):
        raise ValueError("diffusion must be non-negative")
    return g


def filter_step(prev: GaussianState, problem: IVProblem, t: float, h: float,
                gamma: Union[np.ndarray, float, DiffusionModel],
                order: LinearizationOrder) -> StepRecord:
    """One predict-linearize-update step from ``t`` to ``t + h``.

    ``gamma`` is either the diffusion (scalar or ``d``-vector) or one of the
    time-varying :class:`DiffusionModel` variants, in which case it is
    estimated from the local residual before the covariance is predicted.
    """
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h!r}")
    d = problem.d
    q = _sizes(prev, d)
    t_new = t + h
    pre = preconditioner(q, h)
    t_full, tinv_full = pre.expand(d)
    a_small, q_small, lq = preconditioned_transitions(q)

    mp_t = (a_small @ (prev.mean * tinv_full).reshape(q + 1, d)).reshape(-1)
    mp = mp_t * t_full
    h_mat, z_hat = linearize(problem, mp, t_new, order)
    if order is LinearizationOrder.ZEROTH:
        local_cov = np.eye(d) * (pre.scale[1] ** 2 * q_small[1, 1])
    else:
        c = (h_mat * t_full) @ _kron_eye(q, d)[1]
        local_cov = c @ c.T
    g = _resolve_gamma(gamma, z_hat, local_cov, d, order is LinearizationOrder.ZEROTH)
    if not np.all(np.isfinite(g)):
        raise VectorFieldError("non-finite diffusion estimate")
    root = np.sqrt(g)

    if order is LinearizationOrder.ZEROTH:
        lb = to_blocks(prev.cov_factor, d) * pre.inverse_scale[None, :, None]
        lpb = sqrt_predict(a_small, lb, lq[None] * root[:, None, None])
        hb = np.zeros((1, q + 1))
        hb[0, 1] = pre.scale[1]
        mfb, lfb, sfac, white, _ = factored_update(
            mp_t.reshape(q + 1, d).T, lpb, hb, z_hat[:, None]
        )
        mf = mfb.T.reshape(-1) * t_full
        lp = from_blocks(lpb) * t_full[:, None]
        lf = from_blocks(lfb) * t_full[:, None]
        residual = ResidualRecord(z_hat, np.diag(sfac[:, 0, 0]), white[:, 0])
    else:
        a_k, lq_k, _ = _kron_eye(q, d)
        lp_t = sqrt_predict(a_k, prev.cov_factor * tinv_full[:, None], lq_k * np.tile(root, q + 1))
        mf_t, lf_t, sfac, white, _ = factored_update(mp_t, lp_t, h_mat * t_full, z_hat)
        mf = mf_t * t_full
        lp = lp_t * t_full[:, None]
        lf = lf_t * t_full[:, None]
        residual = ResidualRecord(z_hat, sfac, white)

    filtered = GaussianState(mf, lf)
    if not (filtered.is_finite() and np.all(np.isfinite(lp))):
        raise NonFiniteError(f"non-finite state at t={t_new!r}")
    return StepRecord(
        t=t_new,
        h=h,
        predicted=GaussianState(mp, lp),
        filtered=filtered,
        residual=residual,
        h_mat=h_mat,
        diffusion=g,
        order=order,
        local_var=np.diag(local_cov).copy(),
    )
