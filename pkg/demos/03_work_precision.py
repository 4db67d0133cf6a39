"""Work-precision sweep on Lotka-Volterra: IWP-5 filters against Dormand-Prince.

The same table is available from the command line with
``odefilter benchmark --problem lotka-volterra --algorithms eks1,ekf0,dp5 --order 5``.
"""

from odefilter.metrics import tolerance_ladder, work_precision
from odefilter.problems import get_problem
from odefilter.solver import SolverSpec

problem = get_problem("lotka-volterra")
specs = [SolverSpec.from_name("eks1", q=5), SolverSpec.from_name("ekf0", q=5), "dp5"]
records = work_precision(problem, specs, tolerance_ladder(1e-4, 1e-13))

print(f"{'algorithm':>9} {'abstol':>7} {'reltol':>7} {'error':>9} {'evals':>7} {'steps':>6} {'rejected':>8}")
for r in records:
    print(f"{r.algorithm:>9} {r.tau_abs:7.0e} {r.tau_rel:7.0e} {r.final_error:9.2e} "
          f"{r.evaluations:7d} {r.steps:6d} {r.rejected:8d}")
print("\nevals counts f and Jacobian evaluations alike.")
