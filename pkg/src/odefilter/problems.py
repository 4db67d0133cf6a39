"""Registry of benchmark initial value problems.

Every problem ships with an analytic Jacobian and exact Taylor coefficients
of its solution at ``t0`` (up to order 5). The coefficients are produced by
running the vector field on truncated power series, so the series code path
and the float code path share a single expression per problem.
"""

from __future__ import annotations

import dataclasses
import math
from typing import Callable, Optional

import numpy as np

__all__ = [
    "IVProblem",
    "ProblemError",
    "NoAnalyticSolutionError",
    "get_problem",
    "analytic_value",
    "available_problems",
    "TAYLOR_MAX_ORDER",
]

TAYLOR_MAX_ORDER = 5


class ProblemError(ValueError):
    """Raised for unknown problems or malformed problem definitions."""


class NoAnalyticSolutionError(ProblemError):
    """Raised when an exact solution is requested but not available."""


@dataclasses.dataclass(frozen=True)
class IVProblem:
    """An initial value problem ``y' = f(y, t)``, ``y(t0) = y0`` on ``tspan``.

    ``taylor_init(order)`` returns an ``(order + 1, d)`` array holding
    ``y(t0), y'(t0), ..., y^(order)(t0)``. ``analytic(t)`` returns the exact
    solution when one is known.
    """

    name: str
    f: Callable[[np.ndarray, float], np.ndarray]
    y0: np.ndarray
    tspan: tuple[float, float]
    jacobian: Optional[Callable[[np.ndarray, float], np.ndarray]] = None
    taylor_init: Optional[Callable[[int], np.ndarray]] = None
    analytic: Optional[Callable[[float], np.ndarray]] = None
    params: dict = dataclasses.field(default_factory=dict)

    def __post_init__(self):
        y0 = np.atleast_1d(np.asarray(self.y0, dtype=float))
        object.__setattr__(self, "y0", y0)
        t0, t1 = (float(v) for v in self.tspan)
        if not t1 > t0:
            raise ProblemError(f"empty time span {self.tspan!r}")
        object.__setattr__(self, "tspan", (t0, t1))

    @property
    def d(self) -> int:
        return self.y0.shape[0]

    @property
    def t0(self) -> float:
        return self.tspan[0]

    @property
    def t1(self) -> float:
        return self.tspan[1]

    def with_finite_difference_jacobian(self) -> "IVProblem":
        """Return a copy whose Jacobian is computed by central differences."""

        f = self.f

        def jac(y, t):
            y = np.asarray(y, dtype=float)
            out = np.empty((y.size, y.size))
            for j in range(y.size):
                step = 1e-6 * (1.0 + abs(y[j]))
                e = np.zeros_like(y)
                e[j] = step
                out[:, j] = (f(y + e, t) - f(y - e, t)) / (2 * step)
            return out

        return dataclasses.replace(self, jacobian=jac)


class _Series:
    """Truncated power series ``sum_k c[k] t^k`` with Cauchy-product algebra."""

    __slots__ = ("c",)

    def __init__(self, c):
        self.c = np.asarray(c, dtype=float)

    def _coerce(self, other):
        if isinstance(other, _Series):
            return other.c
        out = np.zeros_like(self.c)
        out[0] = other
        return out

    def __add__(self, other):
        return _Series(self.c + self._coerce(other))

    __radd__ = __add__

    def __sub__(self, other):
        return _Series(self.c - self._coerce(other))

    def __rsub__(self, other):
        return _Series(self._coerce(other) - self.c)

    def __neg__(self):
        return _Series(-self.c)

    def __mul__(self, other):
        if isinstance(other, _Series):
            return _Series(np.convolve(self.c, other.c)[: self.c.size])
        return _Series(self.c * other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, _Series):
            return NotImplemented
        return _Series(self.c / other)

    def __pow__(self, k: int):
        out = self
        for _ in range(k - 1):
            out = out * self
        return out


def _taylor_from_rhs(rhs, y0, order):
    """Taylor coefficients of the flow of an autonomous polynomial ``rhs``.

    Uses the recursion ``y_{k+1} = [f(y)]_k / (k + 1)`` on normalized
    coefficients and returns derivatives ``y^(k)(t0) = k! y_k``.
    """
    if order < 0 or order > TAYLOR_MAX_ORDER:
        raise ProblemError(f"Taylor order must lie in [0, {TAYLOR_MAX_ORDER}], got {order}")
    y0 = np.asarray(y0, dtype=float)
    d = y0.size
    coeffs = np.zeros((order + 1, d))
    coeffs[0] = y0
    for k in range(order):
        series = [_Series(coeffs[: k + 1, i]) for i in range(d)]
        fk = rhs(*series)
        for i in range(d):
            coeffs[k + 1, i] = fk[i].c[k] / (k + 1)
    factorials = np.array([math.factorial(k) for k in range(order + 1)], dtype=float)
    return coeffs * factorials[:, None]


def _make(name, rhs, jac, y0, tspan, params, analytic=None):
    # rhs works on floats and on _Series; tuples keep it agnostic of numpy
    def f(y, t):
        return np.array(rhs(*y), dtype=float)

    def jacobian(y, t):
        return np.array(jac(*y), dtype=float)

    def taylor_init(order):
        return _taylor_from_rhs(rhs, y0, order)

    return IVProblem(
        name=name,
        f=f,
        y0=np.array(y0, dtype=float),
        tspan=tspan,
        jacobian=jacobian,
        taylor_init=taylor_init,
        analytic=analytic,
        params=dict(params),
    )


def logistic(r=3.0, y0=0.1, tspan=(0.0, 2.5)) -> IVProblem:
    def rhs(y):
        return (r * y * (1 - y),)

    def jac(y):
        return ((r * (1 - 2 * y),),)

    def exact(t):
        e = np.exp(r * (np.asarray(t, dtype=float) - tspan[0]))
        # (d,) for scalar t, (n, d) for a time vector
        return (e / (1 / y0 - 1 + e))[..., None]

    return _make("logistic", rhs, jac, [y0], tspan, {"r": r, "y0": y0}, analytic=exact)


def lotka_volterra(alpha=1.5, beta=1.0, gamma=3.0, delta=1.0, y0=(1.0, 1.0),
                   tspan=(0.0, 10.0), variant="classic") -> IVProblem:
    # "classic": y2' = -gamma*y2 + delta*y1*y2. "prey-decay" uses -gamma*y1 instead;
    # from y0 = (1, 1) that variant blows up near t = 0.93.
    if variant == "prey-decay":
        def rhs(y1, y2):
            return (alpha * y1 - beta * y1 * y2, -gamma * y1 + delta * y1 * y2)

        def jac(y1, y2):
            return ((alpha - beta * y2, -beta * y1), (-gamma + delta * y2, delta * y1))
    elif variant == "classic":
        def rhs(y1, y2):
            return (alpha * y1 - beta * y1 * y2, -gamma * y2 + delta * y1 * y2)

        def jac(y1, y2):
            return ((alpha - beta * y2, -beta * y1), (delta * y2, -gamma + delta * y1))
    else:
        raise ProblemError(f"unknown Lotka-Volterra variant {variant!r}")
    params = {"alpha": alpha, "beta": beta, "gamma": gamma, "delta": delta, "variant": variant}
    return _make("lotka-volterra", rhs, jac, y0, tspan, params)


def fitzhugh_nagumo(a=0.2, b=0.2, c=3.0, y0=(-1.0, 1.0), tspan=(0.0, 20.0)) -> IVProblem:
    def rhs(y1, y2):
        return (c * (y1 - y1 ** 3 / 3 + y2), -(y1 - a - b * y2) / c)

    def jac(y1, y2):
        return ((c * (1 - y1 ** 2), c), (-1 / c, b / c))

    return _make("fitzhugh-nagumo", rhs, jac, y0, tspan, {"a": a, "b": b, "c": c})


def vanderpol_stiff(mu=1e6, y0=(0.0, math.sqrt(3.0)), tspan=(0.0, 6.3)) -> IVProblem:
    def rhs(y1, y2):
        return (y2, mu * ((1 - y1 ** 2) * y2 - y1))

    def jac(y1, y2):
        return ((0.0, 1.0), (mu * (-2 * y1 * y2 - 1), mu * (1 - y1 ** 2)))

    return _make("vanderpol-stiff", rhs, jac, y0, tspan, {"mu": mu})


def brusselator(y0=(1.5, 3.0), tspan=(0.0, 10.0)) -> IVProblem:
    def rhs(y1, y2):
        return (1 + y1 ** 2 * y2 - 4 * y1, 3 * y1 - y1 ** 2 * y2)

    def jac(y1, y2):
        return ((2 * y1 * y2 - 4, y1 ** 2), (3 - 2 * y1 * y2, -y1 ** 2))

    return _make("brusselator", rhs, jac, y0, tspan, {})


_REGISTRY = {
    "logistic": logistic,
    "lotka-volterra": lotka_volterra,
    "fitzhugh-nagumo": fitzhugh_nagumo,
    "vanderpol-stiff": vanderpol_stiff,
    "brusselator": brusselator,
}


def available_problems() -> list[str]:
    return list(_REGISTRY)


def get_problem(name: str, **kwargs) -> IVProblem:
    """Look up a registry problem by name.

    Keyword arguments are forwarded to the problem constructor, e.g.
    ``get_problem("lotka-volterra", variant="classic")``.
    """
    try:
        factory = _REGISTRY[name]
    except KeyError:
        raise ProblemError(
            f"unknown problem {name!r}; available: {', '.join(_REGISTRY)}"
        ) from None
    return factory(**kwargs)


def analytic_value(problem: IVProblem, t) -> np.ndarray:
    if problem.analytic is None:
        raise NoAnalyticSolutionError(f"problem {problem.name!r} has no analytic solution")
    return problem.analytic(t)
