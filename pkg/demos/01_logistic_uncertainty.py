"""Solve the logistic equation and compare the posterior with the exact solution.

Run with ``python3 demos/01_logistic_uncertainty.py``.
"""

import numpy as np

from odefilter import chi_square, get_problem, solve

problem = get_problem("logistic")
post, diag = solve(problem, "eks1", q=3, diffusion="tv", tau_abs=1e-6, tau_rel=1e-6)
print(f"outcome: {diag.outcome.value}, {len(post.times) - 1} steps, "
      f"{post.stats['f_evals']} f evaluations, {post.stats['jac_evals']} Jacobians")

# dense output between grid nodes
print(f"\n{'t':>6} {'mean':>12} {'std':>10} {'exact':>12} {'|error|/std':>12}")
for t in np.linspace(problem.t0, problem.t1, 11):
    state = post(t)
    mean, std = state.mean[0], np.sqrt(state.cov[0, 0])
    exact = problem.analytic(t)[0]
    ratio = abs(mean - exact) / std if std > 0 else 0.0
    print(f"{t:6.2f} {mean:12.8f} {std:10.2e} {exact:12.8f} {ratio:12.2f}")

report = chi_square(post, problem.analytic(post.times))
print(f"\nchi-square on the grid: {report.statistic:.3f} (d = {report.d}; "
      f"99% band for a calibrated solver [{report.band_low:.3f}, {report.band_high:.3f}])")
