"""Gaussian states in square-root form and factored predict/update primitives.

Covariances are never formed inside the filter: every state carries a lower
triangular factor ``L`` with ``Sigma = L @ L.T``. The array-level functions
(prefixed ``qr_``/``factored_``) accept leading batch axes so that the same
code serves the dense ``D x D`` path and the per-dimension ``(d, q+1, q+1)``
path used by the zeroth-order filter.
"""

from __future__ import annotations

import dataclasses
import functools

import numpy as np
from scipy.linalg import lapack

__all__ = [
    "GaussianState",
    "ResidualRecord",
    "NonFiniteError",
    "SingularInnovationError",
    "tria",
    "sqrt_predict",
    "sqrt_update",
    "factored_update",
    "marginal_solution",
]


class NonFiniteError(FloatingPointError):
    """A mean or covariance factor became non-finite."""


class SingularInnovationError(np.linalg.LinAlgError):
    """The innovation covariance ``S`` is exactly singular."""


def _mT(a):
    return np.swapaxes(a, -1, -2)


# small batches are cheaper as a loop of LAPACK calls than as one gufunc call
_LOOP_BATCH = 8


def _qr_r(a: np.ndarray) -> np.ndarray:
    """R factor of a (batched) QR decomposition, shape ``(..., min(m, n), n)``."""
    if a.ndim == 3 and a.shape[0] <= _LOOP_BATCH:
        return np.stack([_qr_r(block) for block in a])
    if a.ndim != 2:
        return np.linalg.qr(a, mode="r")
    qr, _, _, info = lapack.dgeqrf(a)
    if info != 0:
        raise np.linalg.LinAlgError(f"QR decomposition failed (info={info})")
    k = min(a.shape)
    return qr[:k] * _upper_mask(k, a.shape[1])


@functools.lru_cache(maxsize=64)
def _upper_mask(k: int, n: int) -> np.ndarray:
    mask = np.triu(np.ones((k, n)))
    mask.setflags(write=False)
    return mask


def _solve_triangular(r: np.ndarray, b: np.ndarray, lower: bool = False) -> np.ndarray:
    if r.ndim == 3 and r.shape[0] <= _LOOP_BATCH:
        return np.stack([_solve_triangular(ri, bi, lower) for ri, bi in zip(r, b)])
    if r.ndim != 2:
        return np.linalg.solve(r, b)
    x, info = lapack.dtrtrs(r, b, lower=int(lower))
    if info != 0:
        raise np.linalg.LinAlgError(f"singular triangular system (info={info})")
    return x


def tria(a: np.ndarray) -> np.ndarray:
    """Lower triangular square factor ``L`` with ``L L^T = A A^T``.

    ``a`` has shape ``(..., n, m)`` with ``m >= n``. The factor is obtained from
    the R of a QR decomposition of ``a^T`` and normalized to a non-negative
    diagonal.
    """
    n, m = a.shape[-2:]
    r = _qr_r(_mT(a))
    if m < n:
        pad = np.zeros(r.shape[:-2] + (n - m, n))
        r = np.concatenate([r, pad], axis=-2)
    low = _mT(r)
    sign = np.sign(np.diagonal(low, axis1=-2, axis2=-1)).copy()
    sign[sign == 0] = 1.0
    return low * sign[..., None, :]


@dataclasses.dataclass(frozen=True, slots=True)
class GaussianState:
    """Gaussian ``N(mean, L L^T)`` over the stacked derivative-major state."""

    mean: np.ndarray
    cov_factor: np.ndarray

    @property
    def cov(self) -> np.ndarray:
        return self.cov_factor @ _mT(self.cov_factor)

    @property
    def dim(self) -> int:
        return self.mean.shape[-1]

    def is_finite(self) -> bool:
        return bool(np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.cov_factor)))

    def scale_rows(self, s: np.ndarray) -> "GaussianState":
        """Apply the diagonal map ``x -> s * x``."""
        return GaussianState(self.mean * s, self.cov_factor * s[:, None])

    @classmethod
    def from_cov(cls, mean, cov) -> "GaussianState":
        cov = np.asarray(cov, dtype=float)
        w, v = np.linalg.eigh(0.5 * (cov + cov.T))
        root = v * np.sqrt(np.clip(w, 0.0, None))
        return cls(np.asarray(mean, dtype=float), tria(root))


@dataclasses.dataclass(frozen=True, slots=True)
class ResidualRecord:
    """Innovation statistics of one update.

    ``z_hat`` is the residual mean, ``s_factor`` a lower factor of the
    innovation covariance ``S`` and ``whitened`` equals ``s_factor^{-1} z_hat``
    (observation ``z = 0``, so the sign is irrelevant for every use).
    """

    z_hat: np.ndarray
    s_factor: np.ndarray
    whitened: np.ndarray

    @property
    def s(self) -> np.ndarray:
        return self.s_factor @ self.s_factor.T


def sqrt_predict(a: np.ndarray, l_filter: np.ndarray, l_process: np.ndarray) -> np.ndarray:
    """Factor of ``A Sigma_F A^T + Q`` from factors of ``Sigma_F`` and ``Q``."""
    with np.errstate(over="ignore", invalid="ignore"):
        out = tria(np.concatenate([a @ l_filter, l_process], axis=-1))
    if not np.all(np.isfinite(out)):
        raise NonFiniteError("non-finite predicted covariance factor")
    return out


def factored_update(mean, l_pred, h_mat, z_hat):
    """Noiseless Kalman update of ``(mean, l_pred)`` on the event ``z = 0``.

    Works on a single ``(D,)``/``(D, D)`` pair or a batch of them. Returns
    ``(mean_f, l_f, s_factor, whitened, gain)``.

    The pre-array ``[[H L, 0], [L, ?]]`` is triangularized in one QR pass:
    with ``[L^T H^T, L^T] = Q R`` and ``R = [[R11, R12], [0, R22]]`` one has
    ``S = R11^T R11``, ``K = R12^T R11^{-T}`` and ``Sigma_F = R22^T R22``.
    """
    n_obs = h_mat.shape[-2]
    dim = l_pred.shape[-1]
    hl = h_mat @ l_pred
    pre = np.concatenate([_mT(hl), _mT(l_pred)], axis=-1)
    r = _qr_r(pre)
    r11 = r[..., :n_obs, :n_obs]
    r12 = r[..., :n_obs, n_obs:]
    r22 = r[..., n_obs:, n_obs:]

    diag = np.abs(np.diagonal(r11, axis1=-2, axis2=-1))
    if np.any(diag == 0.0) or not np.all(np.isfinite(r11)):
        raise SingularInnovationError("innovation covariance is singular")

    s_factor = _mT(r11)
    # K^T = R11^{-1} R12
    gain = _mT(_solve_triangular(r11, r12))
    whitened = _solve_triangular(s_factor, z_hat[..., None], lower=True)[..., 0]
    mean_f = mean - (gain @ z_hat[..., None])[..., 0]

    l_f = np.zeros(l_pred.shape)
    l_f[..., :, : dim - n_obs] = _mT(r22)
    sign = np.sign(np.diagonal(l_f, axis1=-2, axis2=-1)).copy()
    sign[sign == 0] = 1.0
    l_f *= sign[..., None, :]
    ssign = np.sign(np.diagonal(s_factor, axis1=-2, axis2=-1)).copy()
    ssign[ssign == 0] = 1.0
    s_factor = s_factor * ssign[..., None, :]
    whitened = whitened * ssign
    return mean_f, l_f, s_factor, whitened, gain


def sqrt_update(predicted: GaussianState, h_mat: np.ndarray, z_hat: np.ndarray):
    """Condition ``predicted`` on a zero residual with mean ``z_hat``."""
    z_hat = np.asarray(z_hat, dtype=float)
    mean_f, l_f, s_factor, whitened, _ = factored_update(
        predicted.mean, predicted.cov_factor, np.asarray(h_mat, dtype=float), z_hat
    )
    if not (np.all(np.isfinite(mean_f)) and np.all(np.isfinite(l_f))):
        raise NonFiniteError("non-finite filtered state")
    return GaussianState(mean_f, l_f), ResidualRecord(z_hat, s_factor, whitened)


def marginal_solution(state: GaussianState, d: int):
    """Mean and standard deviation of the solution block ``X^(0)``."""
    mean = state.mean[:d]
    l0 = state.cov_factor[:d]
    std = np.sqrt(np.einsum("ij,ij->i", l0, l0))
    return mean, std
