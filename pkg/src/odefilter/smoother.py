"""Rauch-Tung-Striebel smoothing and dense output.

The backward pass is computed in square-root form. For an interval with
transition ``(A, Q)`` and filtered factor ``L_F`` one QR decomposition of

    [[ (A L_F)^T, L_F^T ],
     [  L_Q^T   ,   0   ]]

yields the predicted factor ``R11^T``, the smoothing gain
``G = R12^T R11^{-T}`` and the factor ``R22^T`` of the backward-kernel
covariance ``Sigma_F - G Sigma_P G^T``. The smoothed factor is then a
triangularization of ``[G L_S, R22^T]``; no covariance is ever subtracted.
"""

from __future__ import annotations

import bisect
import dataclasses

import numpy as np

from .filtering import LinearizationOrder, StepRecord, _kron_eye, from_blocks, to_blocks
from .gaussian import GaussianState, _qr_r, _solve_triangular, tria
from .prior import IWPPrior, preconditioned_transitions, preconditioner

__all__ = ["SmoothedGrid", "DegenerateIntervalError", "smooth_pass", "interpolate",
           "backward_step"]


class DegenerateIntervalError(np.linalg.LinAlgError):
    """The predicted covariance of an interval is singular."""


def _mT(a):
    return np.swapaxes(a, -1, -2)


def _backward_arrays(a, lq, mf, lf, ms_next, ls_next):
    """Batch-agnostic square-root smoothing step in preconditioned coordinates."""
    n = lf.shape[-1]
    top = np.concatenate([_mT(a @ lf), _mT(lf)], axis=-1)
    lqt = np.broadcast_to(_mT(lq), lf.shape[:-2] + (n, n))
    bottom = np.concatenate([lqt, np.zeros(lqt.shape)], axis=-1)
    r = _qr_r(np.concatenate([top, bottom], axis=-2))
    r11 = r[..., :n, :n]
    r12 = r[..., :n, n:]
    r22 = r[..., n:, n:]
    if np.any(np.diagonal(r11, axis1=-2, axis2=-1) == 0.0):
        raise DegenerateIntervalError("singular predicted covariance in smoothing step")
    gain = _mT(_solve_triangular(r11, r12))
    mp = (a @ mf[..., None])[..., 0]
    ms = mf + (gain @ (ms_next - mp)[..., None])[..., 0]
    ls = tria(np.concatenate([gain @ ls_next, _mT(r22)], axis=-1))
    return ms, ls


def backward_step(filtered: GaussianState, smoothed_next: GaussianState, h: float,
                  gamma, d: int, zeroth: bool = False) -> GaussianState:
    """Smoothed state at the start of an interval of length ``h``."""
    q = filtered.dim // d - 1
    pre = preconditioner(q, h)
    t_full, tinv_full = pre.expand(d)
    a, _, lq = preconditioned_transitions(q)
    root = np.sqrt(np.broadcast_to(np.asarray(gamma, dtype=float), (d,)))
    mf = filtered.mean * tinv_full
    msn = smoothed_next.mean * tinv_full
    if zeroth:
        ms, lsb = _backward_arrays(
            a,
            lq[None] * root[:, None, None],
            mf.reshape(q + 1, d).T,
            to_blocks(filtered.cov_factor, d) * pre.inverse_scale[None, :, None],
            msn.reshape(q + 1, d).T,
            to_blocks(smoothed_next.cov_factor, d) * pre.inverse_scale[None, :, None],
        )
        ms = ms.T.reshape(-1)
        ls = from_blocks(lsb)
    else:
        a_k, lq_k, _ = _kron_eye(q, d)
        ms, ls = _backward_arrays(
            a_k,
            lq_k * np.tile(root, q + 1),
            mf,
            filtered.cov_factor * tinv_full[:, None],
            msn,
            smoothed_next.cov_factor * tinv_full[:, None],
        )
    return GaussianState(ms * t_full, ls * t_full[:, None])


@dataclasses.dataclass(frozen=True)
class SmoothedGrid:
    """Smoothed states on the solver grid plus what dense output needs.

    ``filtered[n]`` and ``diffusions[n]`` belong to node ``n``; interval
    ``n`` runs from ``times[n]`` to ``times[n+1]`` and uses
    ``diffusions[n+1]`` (the diffusion of the step that produced it).
    """

    times: np.ndarray
    states: list
    filtered: list
    diffusions: np.ndarray
    d: int
    zeroth: bool = False

    def __post_init__(self):
        if len(self.times) != len(self.states):
            raise ValueError("times and states differ in length")
        if np.any(np.diff(self.times) <= 0):
            raise ValueError("grid times must be strictly increasing")


def smooth_pass(records: list[StepRecord], initial: GaussianState, t0: float) -> SmoothedGrid:
    """RTS backward pass over contiguous filter records.

    ``initial`` is the filtered state at ``t0`` (the first record starts
    there). The last smoothed state is the last filtered state.
    """
    if not records:
        return SmoothedGrid(np.array([t0]), [initial], [initial], np.ones((1, initial.dim)), initial.dim)
    d = records[0].h_mat.shape[0]
    zeroth = records[0].order is LinearizationOrder.ZEROTH
    filtered = [initial] + [r.filtered for r in records]
    times = np.array([t0] + [r.t for r in records])
    diffusions = np.vstack([np.ones(d)] + [r.diffusion for r in records])
    states = [None] * len(filtered)
    states[-1] = filtered[-1]
    for n in range(len(records) - 1, -1, -1):
        rec = records[n]
        states[n] = backward_step(filtered[n], states[n + 1], rec.h, rec.diffusion, d, zeroth)
    return SmoothedGrid(times, states, filtered, diffusions, d, zeroth)


def interpolate(grid: SmoothedGrid, prior: IWPPrior, gamma, t: float) -> GaussianState:
    """Posterior at an arbitrary ``t`` in the grid's span.

    ``gamma`` is the diffusion used on the enclosing interval; pass ``None``
    to take the one stored with the grid.
    """
    from .filtering import predict
    from .prior import iwp_transitions

    times = grid.times
    if not times[0] <= t <= times[-1]:
        raise ValueError(f"t={t!r} outside [{times[0]!r}, {times[-1]!r}]")
    n = bisect.bisect_left(times, t)
    if n < len(times) and times[n] == t:
        return grid.states[n]
    n -= 1
    g = grid.diffusions[n + 1] if gamma is None else gamma
    d = prior.d
    at_t = predict(grid.filtered[n], iwp_transitions(prior.q, t - times[n]), g, d)
    return backward_step(at_t, grid.states[n + 1], times[n + 1] - t, g, d, grid.zeroth)
