r"""Integrated Wiener process prior.

The ``q``-times integrated Wiener process models a solution together with its
first ``q`` derivatives. The stacked state is stored derivative-major,
``X = (X^(0), X^(1), ..., X^(q))`` with blocks of size ``d``, so that the
discrete transitions factor as

.. math::

    A(h) = \breve A(h) \otimes I_d, \qquad Q(h) = \breve Q(h) \otimes \Gamma,

with

.. math::

    \breve A_{ij}(h) = \mathbb{1}_{i \le j} \frac{h^{j-i}}{(j-i)!}, \qquad
    \breve Q_{ij}(h) = \frac{h^{2q+1-i-j}}{(2q+1-i-j)(q-i)!(q-j)!},

for ``i, j = 0, ..., q``.

In the coordinates ``x = T \tilde x`` with ``T_i = \sqrt{h} h^{q-i}/(q-i)!``
both matrices become independent of ``h``; :func:`preconditioner` returns
``T`` and :func:`preconditioned_transitions` the constant pair.
"""

from __future__ import annotations

import dataclasses
import functools
import math

import numpy as np

from .gaussian import GaussianState
from .problems import IVProblem, TAYLOR_MAX_ORDER

__all__ = [
    "IWPPrior",
    "TransitionPair",
    "Preconditioner",
    "iwp_transitions",
    "expand_transitions",
    "preconditioner",
    "preconditioned_transitions",
    "taylor_initial_state",
    "InitializationError",
]


class InitializationError(ValueError):
    """Raised when no initial state can be built for a problem."""


@dataclasses.dataclass(frozen=True)
class IWPPrior:
    q: int
    d: int

    def __post_init__(self):
        if self.q < 1 or self.d < 1:
            raise ValueError(f"need q >= 1 and d >= 1, got q={self.q}, d={self.d}")

    @property
    def state_dim(self) -> int:
        return self.d * (self.q + 1)

    def selector(self, i: int) -> np.ndarray:
        """The ``d x D`` matrix extracting derivative block ``i``."""
        e = np.zeros((1, self.q + 1))
        e[0, i] = 1.0
        return np.kron(e, np.eye(self.d))


@dataclasses.dataclass(frozen=True)
class TransitionPair:
    a_small: np.ndarray
    q_small: np.ndarray
    h: float

    @property
    def q(self) -> int:
        return self.a_small.shape[0] - 1


@dataclasses.dataclass(frozen=True)
class Preconditioner:
    scale: np.ndarray
    inverse_scale: np.ndarray

    def expand(self, d: int) -> tuple[np.ndarray, np.ndarray]:
        """Scales for the full derivative-major state of dimension ``d(q+1)``."""
        return np.repeat(self.scale, d), np.repeat(self.inverse_scale, d)


def _check_step(h):
    h = float(h)
    if not np.isfinite(h) or h <= 0.0:
        raise ValueError(f"step size must be finite and positive, got {h!r}")
    return h


def _check_order(q):
    if int(q) != q or q < 1:
        raise ValueError(f"order q must be a positive integer, got {q!r}")
    return int(q)


@functools.lru_cache(maxsize=None)
def _constants(q: int):
    i = np.arange(q + 1)
    diff = i[None, :] - i[:, None]
    upper = diff >= 0
    a_expo = np.where(upper, diff, 0)
    a_denom = np.array([math.factorial(int(v)) for v in a_expo.ravel()],
                       dtype=float).reshape(a_expo.shape)
    a_denom[~upper] = np.inf
    q_expo = 2 * q + 1 - i[:, None] - i[None, :]
    qfact = np.array([math.factorial(q - k) for k in i], dtype=float)
    q_denom = q_expo * qfact[:, None] * qfact[None, :]
    return a_expo, a_denom, q_expo, q_denom, q - i, qfact


def iwp_transitions(q: int, h: float) -> TransitionPair:
    q = _check_order(q)
    h = _check_step(h)
    a_expo, a_denom, q_expo, q_denom, _, _ = _constants(q)
    return TransitionPair(h ** a_expo / a_denom, h ** q_expo / q_denom, h)


def expand_transitions(pair: TransitionPair, d: int, gamma) -> tuple[np.ndarray, np.ndarray]:
    """Dense ``A = A_small (x) I_d`` and ``Q = Q_small (x) Gamma``.

    ``gamma`` may be a scalar, a ``d``-vector (diagonal) or a ``d x d``
    diagonal matrix.
    """
    g = np.asarray(gamma, dtype=float)
    if g.ndim == 2:
        if np.any(g != np.diag(np.diag(g))):
            raise ValueError("diffusion matrix must be diagonal")
        g = np.diag(g)
    g = np.broadcast_to(g, (d,))
    if np.any(g < 0):
        raise ValueError("diffusion must be non-negative")
    return np.kron(pair.a_small, np.eye(d)), np.kron(pair.q_small, np.diag(g))


def preconditioner(q: int, h: float) -> Preconditioner:
    q = _check_order(q)
    h = _check_step(h)
    *_, k, fact = _constants(q)
    scale = math.sqrt(h) * h ** k / fact
    return Preconditioner(scale, 1.0 / scale)


@functools.lru_cache(maxsize=None)
def _preconditioned(q: int):
    i = np.arange(q + 1)
    # T^{-1} A T has binomial entries C(q-i, j-i); T^{-1} Q T^{-T} = 1/(2q+1-i-j)
    a = np.zeros((q + 1, q + 1))
    for r in range(q + 1):
        for c in range(r, q + 1):
            a[r, c] = math.comb(q - r, c - r)
    qm = 1.0 / (2 * q + 1 - i[:, None] - i[None, :])
    lq = np.linalg.cholesky(qm)
    for arr in (a, qm, lq):
        arr.setflags(write=False)
    return a, qm, lq


def preconditioned_transitions(q: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Step-independent ``(A, Q, chol(Q))`` in preconditioned coordinates."""
    return _preconditioned(_check_order(q))


def taylor_initial_state(problem: IVProblem, q: int) -> GaussianState:
    """Exact initial state ``(y0, y0', ..., y0^(q))`` with zero covariance.

    Problems without a Taylor initializer (or for ``q`` beyond its supported
    order) get the first two blocks exact from ``y0`` and ``f(y0, t0)`` and
    zero-mean, unit-variance higher derivatives.
    """
    q = _check_order(q)
    d = problem.d
    y0 = problem.y0
    if y0.size == 0 or not np.all(np.isfinite(y0)):
        raise InitializationError(f"problem {problem.name!r} has no valid initial value")

    if problem.taylor_init is not None and q <= TAYLOR_MAX_ORDER:
        derivs = np.asarray(problem.taylor_init(q), dtype=float)
        if derivs.shape != (q + 1, d) or not np.all(np.isfinite(derivs)):
            raise InitializationError(f"bad Taylor coefficients for {problem.name!r}")
        return GaussianState(derivs.reshape(-1), np.zeros((d * (q + 1), d * (q + 1))))

    f0 = np.asarray(problem.f(y0, problem.t0), dtype=float)
    if not np.all(np.isfinite(f0)):
        raise InitializationError("vector field is not finite at the initial value")
    mean = np.zeros(d * (q + 1))
    mean[:d] = y0
    mean[d : 2 * d] = f0
    std = np.ones(d * (q + 1))
    std[: 2 * d] = 0.0
    return GaussianState(mean, np.diag(std))
