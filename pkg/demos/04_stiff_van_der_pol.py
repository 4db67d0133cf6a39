"""Stiff Van der Pol (mu = 1e6) with the first-order smoother.

The first-order linearization uses the Jacobian and keeps the step size
bounded by accuracy rather than stability. Pass ``--eks0`` to also run the
zeroth-order smoother; it stops at the one-million-step cap after several
minutes and needs about 3 GB of memory.
"""

import sys
import time

from scipy.integrate import solve_ivp

from odefilter import get_problem, solve

problem = get_problem("vanderpol-stiff")
start = time.perf_counter()
post, diag = solve(problem, "eks1", q=3, diffusion="tv", tau_abs=1e-6, tau_rel=1e-3)
st = post.stats
print(f"EKS1: {diag.outcome.value} in {time.perf_counter() - start:.1f} s, "
      f"{st['steps_accepted']} accepted and {st['steps_rejected']} rejected steps")

radau = solve_ivp(lambda t, y: problem.f(y, t), problem.tspan, problem.y0, method="Radau",
                  rtol=1e-10, atol=1e-10, jac=lambda t, y: problem.jacobian(y, t))
print(f"y(6.3) = {post.means[-1]}, Radau gives {radau.y[:, -1]}")
print(f"final std: {post.stds[-1]}")

if "--eks0" in sys.argv:
    post0, diag0 = solve(problem, "eks0", q=3, diffusion="tv", tau_abs=1e-6, tau_rel=1e-3)
    print(f"EKS0: {diag0.outcome.value}: {diag0.message}")
