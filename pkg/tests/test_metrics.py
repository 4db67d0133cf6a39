import dataclasses
import math

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from odefilter import get_problem
from odefilter.baseline import dp5_fixed, reference_solution
from odefilter.metrics import (
    Chi2Error,
    chi2_band,
    chi_square,
    chi_square_statistic,
    empirical_order,
    tolerance_ladder,
    work_precision,
)
from odefilter.problems import IVProblem
from odefilter.solver import SolverSpec, solve


def random_covs(rng, n, d):
    a = rng.normal(size=(n, d, d))
    return a @ a.transpose(0, 2, 1) + 0.1 * np.eye(d)


# ---------------------------------------------------------------- chi-square

def test_zero_residuals():
    assert chi_square_statistic(np.zeros((4, 2)), np.tile(np.eye(2), (4, 1, 1))) == 0.0


def test_hand_example():
    assert chi_square_statistic([1.0, 3.0], [1.0, 1.0]) == pytest.approx(5.0, rel=1e-14)


def test_monte_carlo_mean(rng):
    n, d, reps = 100, 2, 1000
    covs = random_covs(rng, n, d)
    chol = np.linalg.cholesky(covs)
    values = [chi_square_statistic((chol @ rng.normal(size=(n, d, 1)))[..., 0], covs)
              for _ in range(reps)]
    assert 1.9 <= np.mean(values) <= 2.1


@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 8), d=st.integers(1, 4))
def test_permutation_invariance(seed, n, d):
    rng = np.random.default_rng(seed)
    r, covs = rng.normal(size=(n, d)), random_covs(rng, n, d)
    perm = rng.permutation(d)
    a = chi_square_statistic(r, covs)
    b = chi_square_statistic(r[:, perm], covs[:, perm][:, :, perm])
    assert b == pytest.approx(a, rel=1e-10)


@given(seed=st.integers(0, 2**32 - 1), c=st.floats(1e-3, 1e3))
def test_scaling(seed, c):
    rng = np.random.default_rng(seed)
    r, covs = rng.normal(size=(5, 3)), random_covs(rng, 5, 3)
    a = chi_square_statistic(r, covs)
    assert chi_square_statistic(r, c**2 * covs) == pytest.approx(a / c**2, rel=1e-9)


def test_floor_handles_singular_points():
    covs = np.array([[[1.0]], [[0.0]]])
    value = chi_square_statistic([1.0, 0.0], covs)
    assert value == pytest.approx(0.5)


def test_all_zero_covariance_raises():
    with pytest.raises(Chi2Error):
        chi_square_statistic(np.ones((3, 2)), np.zeros((3, 2, 2)))


def test_shape_mismatch_raises():
    with pytest.raises(ValueError):
        chi_square_statistic(np.ones((3, 2)), np.ones((3, 3, 3)))


@pytest.mark.parametrize("d, n", [(1, 1), (2, 10), (2, 500), (5, 37)])
def test_band_contains_dimension(d, n):
    lo, hi = chi2_band(d, n)
    assert lo < d < hi
    assert stats.chi2(n * d).cdf(n * hi) - stats.chi2(n * d).cdf(n * lo) == pytest.approx(0.99)


def test_chi_square_on_posterior():
    p = get_problem("logistic")
    post, diag = solve(p, "eks1", q=3, tau_abs=1e-8, tau_rel=1e-8)
    ref = reference_solution(p, post.times, cache_dir=None)
    report = chi_square(post, ref)
    assert report.n_points == len(post.times) - 1 and report.d == 1
    covs = post.covariances()[1:]
    expected = np.mean((post.means[1:, 0] - ref[1:, 0]) ** 2 / (covs[:, 0, 0] + 1e-30))
    assert report.statistic == pytest.approx(expected, rel=1e-12)
    assert 1e-2 <= report.statistic <= 1e2


# ---------------------------------------------------------------- order

@pytest.mark.parametrize("power, factor", [(2, 1.0), (5, 3.0), (1, 0.01)])
def test_empirical_order_exact_powers(power, factor):
    hs = [0.5, 0.25, 0.1, 0.01]
    assert empirical_order([(h, factor * h**power) for h in hs]) == pytest.approx(power, abs=1e-12)


def test_empirical_order_drops_zero_errors():
    with pytest.warns(RuntimeWarning):
        assert empirical_order([(1.0, 1.0), (0.5, 0.25), (0.25, 0.0625), (0.1, 0.0)]) == \
            pytest.approx(2.0)


@pytest.mark.parametrize("pairs", [
    [(1.0, 1.0), (0.5, 0.5)],
    [(1.0, 1.0), (1.0, 0.5), (0.5, 0.2)],
    [(-1.0, 1.0), (0.5, 0.5), (0.1, 0.2)],
])
def test_empirical_order_degenerate(pairs):
    with pytest.raises(ValueError):
        empirical_order(pairs)


def test_dp5_fixed_step_slope():
    p = get_problem("logistic")
    y = p.analytic(p.t1)[0]
    pairs = [(2.0**-k, abs(dp5_fixed(p, 2.0**-k).values[-1, 0] - y)) for k in range(2, 7)]
    assert 4.5 <= empirical_order(pairs) <= 5.5


# ---------------------------------------------------------------- ladders and sweeps

def test_tolerance_ladder():
    ladder = tolerance_ladder(1e-4, 1e-13)
    assert len(ladder) == 10
    assert ladder[0] == (1e-4, 1e-1) and ladder[-1] == (1e-13, 1e-10)
    assert tolerance_ladder(1e-6, 1e-6) == [(1e-6, 1e-3)]
    with pytest.raises(ValueError):
        tolerance_ladder(3e-4, 1e-6)


def test_single_cell():
    p = get_problem("logistic")
    [rec] = work_precision(p, [SolverSpec.from_name("eks1")], [(1e-6, 1e-3)], cache_dir=None)
    assert rec.outcome == "success" and rec.algorithm == "eks1" and rec.diffusion == "tv"
    post, _ = solve(p, "eks1", tau_abs=1e-6, tau_rel=1e-3)
    assert rec.final_error == pytest.approx(abs(post.means[-1, 0] - p.analytic(p.t1)[0]))
    assert rec.f_evals == post.stats["f_evals"] and rec.steps == post.stats["steps_accepted"]
    assert rec.evaluations == rec.f_evals + rec.jac_evals
    assert np.isfinite(rec.chi2)


def test_dp5_cell():
    p = get_problem("logistic")
    [rec] = work_precision(p, ["dp5"], [(1e-8, 1e-5)], cache_dir=None)
    assert rec.algorithm == "dp5" and rec.jac_evals == 0 and math.isnan(rec.chi2)
    assert rec.final_error < 1e-5


def test_failed_cell_is_recorded():
    p = IVProblem("blowup", lambda y, t: y**2, [1.0], (0.0, 2.0),
                  jacobian=lambda y, t: np.atleast_2d(2 * y))
    records = work_precision(p, [SolverSpec.from_name("ekf1"), "dp5"], [(1e-6, 1e-3)],
                             cache_dir=None)
    assert len(records) == 2
    for rec in records:
        assert rec.outcome != "success" and math.isnan(rec.final_error)


def test_fitzhugh_nagumo_ladder():
    p = get_problem("fitzhugh-nagumo")
    specs = [SolverSpec.from_name("eks1", q=q) for q in (2, 3, 5)]
    records = work_precision(p, specs, tolerance_ladder(1e-4, 1e-13), cache_dir=None)
    assert len(records) == 30
    assert [(r.order, r.tau_abs) for r in records[:2]] == [(2, 1e-4), (2, 1e-5)]
    assert all(r.outcome == "success" for r in records)
    assert all(np.isfinite(r.chi2) for r in records)


def test_lotka_volterra_q5_slope():
    p = get_problem("lotka-volterra")
    records = work_precision(p, [SolverSpec.from_name("eks1", q=5)],
                             tolerance_ladder(1e-4, 1e-13), cache_dir=None)
    assert all(r.outcome == "success" for r in records)
    slope = np.polyfit(np.log([r.f_evals for r in records]),
                       np.log([r.final_error for r in records]), 1)[0]
    assert -7.5 <= slope <= -4


def test_records_are_reproducible():
    p = get_problem("brusselator")
    specs = [SolverSpec.from_name("ekf0", q=2), "dp5"]
    a = work_precision(p, specs, tolerance_ladder(1e-4, 1e-6), cache_dir=None)
    b = work_precision(p, specs, tolerance_ladder(1e-4, 1e-6), cache_dir=None)
    assert [dataclasses_without_wall(r) for r in a] == [dataclasses_without_wall(r) for r in b]


def test_parallel_sweep_matches_serial():
    p = get_problem("logistic")
    specs = [SolverSpec.from_name("ekf1", q=2), "dp5"]
    a = work_precision(p, specs, tolerance_ladder(1e-4, 1e-5), cache_dir=None)
    b = work_precision(p, specs, tolerance_ladder(1e-4, 1e-5), cache_dir=None, jobs=2)
    assert [dataclasses_without_wall(r) for r in a] == [dataclasses_without_wall(r) for r in b]


def dataclasses_without_wall(record):
    return repr(dataclasses.replace(record, wall_time=0.0))
