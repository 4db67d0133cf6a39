import types

import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import stats

from odefilter import get_problem
from odefilter.calibration import (
    DIFFUSION_FLOOR,
    CalibrationError,
    CalibrationState,
    DiffusionModel,
    accumulate,
    estimate_tv_diagonal,
    estimate_tv_scalar,
    finalize_fixed,
    log_likelihood,
    rescale_posterior,
)
from odefilter.filtering import LinearizationOrder, filter_step
from odefilter.gaussian import ResidualRecord
from odefilter.prior import iwp_transitions, taylor_initial_state

FIXED, FIXED_MV = DiffusionModel.FIXED, DiffusionModel.FIXED_DIAGONAL


def fake_record(z_hat, s_cov):
    z = np.asarray(z_hat, dtype=float)
    s_factor = np.linalg.cholesky(np.atleast_2d(s_cov))
    return types.SimpleNamespace(residual=ResidualRecord(z, s_factor, np.linalg.solve(s_factor, z)))


def central_gradient(fun, x, rel=1e-5):
    step = rel * max(abs(x), 1e-12)
    return (fun(x + step) - fun(x - step)) / (2 * step)


class TestAccumulate:
    def test_zero_residual(self):
        cal = accumulate(CalibrationState(FIXED, 2), fake_record([0.0, 0.0], np.eye(2)))
        assert cal.n == 1
        assert cal.running_scalar == 0.0
        np.testing.assert_array_equal(cal.running_diag, 0)

    def test_scalar_two_steps(self):
        cal = CalibrationState(FIXED, 1)
        for w in (1.0, 2.0):
            cal = accumulate(cal, fake_record([w], [[1.0]]))
        np.testing.assert_allclose(finalize_fixed(cal), [2.5])

    def test_scalar_matches_likelihood_grid(self):
        zs = [np.array([1.0]), np.array([2.0])]
        grid = np.linspace(0.5, 5.0, 4501)
        ll = [log_likelihood(zs, [[[g]], [[g]]]) for g in grid]
        assert grid[int(np.argmax(ll))] == pytest.approx(2.5, abs=1e-3)

    def test_diagonal_one_step(self):
        cal = accumulate(CalibrationState(FIXED_MV, 2), fake_record([3.0, 4.0], np.eye(2)))
        np.testing.assert_allclose(finalize_fixed(cal), [9.0, 16.0])

    def test_diagonal_two_steps(self):
        cal = CalibrationState(FIXED_MV, 2)
        for z in ([3.0, 4.0], [1.0, 2.0]):
            cal = accumulate(cal, fake_record(z, np.eye(2)))
        np.testing.assert_allclose(finalize_fixed(cal), [5.0, 10.0])

    def test_nonfinite(self):
        with pytest.raises(CalibrationError):
            accumulate(CalibrationState(FIXED, 1), fake_record([np.nan], [[1.0]]))

    def test_running_estimate_is_unit_before_data(self):
        np.testing.assert_array_equal(CalibrationState(FIXED, 3).estimate(), np.ones(3))


class TestFinalize:
    def test_no_data(self):
        with pytest.raises(CalibrationError):
            finalize_fixed(CalibrationState(FIXED, 1))

    def test_zero_residuals_floor(self):
        cal = accumulate(CalibrationState(FIXED, 1), fake_record([0.0], [[1.0]]))
        np.testing.assert_array_equal(finalize_fixed(cal), [DIFFUSION_FLOOR])

    def test_rejects_time_varying(self):
        cal = dataclass_with_data(DiffusionModel.TV)
        with pytest.raises(CalibrationError):
            finalize_fixed(cal)


def dataclass_with_data(model):
    return CalibrationState(model, 1, n=1, running_scalar=1.0)


class TestTimeVarying:
    def test_scalar_zero_residual(self):
        pair = iwp_transitions(1, 1.0)
        h_mat = np.array([[0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]])
        assert estimate_tv_scalar(np.zeros(2), pair, h_mat) == DIFFUSION_FLOOR

    def test_scalar_hand_value(self):
        pair = iwp_transitions(1, 1.0)
        h_mat = np.array([[0.0, 0.0, 1.0, 0.0], [0.0, 0.0, 0.0, 1.0]])
        assert estimate_tv_scalar(np.array([2.0, 0.0]), pair, h_mat) == pytest.approx(2.0)

    @given(c=st.floats(1e-3, 1e3), seed=st.integers(0, 2**32 - 1))
    def test_scalar_equivariance(self, c, seed):
        rng = np.random.default_rng(seed)
        pair = iwp_transitions(2, 0.3)
        h_mat = rng.normal(size=(2, 6))
        z = rng.normal(size=2)
        base = estimate_tv_scalar(z, pair, h_mat)
        assert estimate_tv_scalar(c * z, pair, h_mat) == pytest.approx(c**2 * base, rel=1e-10)

    def test_diagonal_zero_residual(self):
        np.testing.assert_array_equal(estimate_tv_diagonal(np.zeros(3), iwp_transitions(1, 1.0)),
                                      DIFFUSION_FLOOR)

    def test_diagonal_hand_values(self):
        np.testing.assert_allclose(estimate_tv_diagonal([2.0, 0.0], iwp_transitions(1, 1.0)),
                                   [4.0, DIFFUSION_FLOOR])
        np.testing.assert_allclose(estimate_tv_diagonal([1.0, 1.0], iwp_transitions(1, 0.5)),
                                   [2.0, 2.0])

    @given(c=st.floats(1e-3, 1e3), z=st.lists(st.floats(0.01, 10), min_size=3, max_size=3))
    def test_diagonal_equivariance(self, c, z):
        pair = iwp_transitions(3, 0.2)
        base = estimate_tv_diagonal(z, pair)
        np.testing.assert_allclose(estimate_tv_diagonal(c * np.array(z), pair), c**2 * base,
                                   rtol=1e-12)


def random_residual_set(rng, n_steps=6, d=3):
    """Residuals drawn from N(0, S_n) for random SPD S_n."""
    covs, zs = [], []
    for _ in range(n_steps):
        a = rng.normal(size=(d, d))
        s = a @ a.T + 0.5 * np.eye(d)
        covs.append(s)
        zs.append(rng.multivariate_normal(np.zeros(d), s))
    return zs, covs


@pytest.mark.parametrize("seed", range(50))
def test_estimators_zero_the_likelihood_gradient(seed):
    rng = np.random.default_rng(seed)
    d = 3
    zs, covs = random_residual_set(rng, d=d)

    cal = CalibrationState(FIXED, d)
    for z, s in zip(zs, covs):
        cal = accumulate(cal, fake_record(z, s))
    sigma2 = finalize_fixed(cal)[0]
    grad = central_gradient(lambda g: log_likelihood(zs, [g * s for s in covs]), sigma2)
    assert abs(grad) < 1e-6

    # diagonal models: S_n = s_n * Gamma with scalar s_n
    s_breve = rng.uniform(0.2, 3.0, size=len(zs))
    cal = CalibrationState(FIXED_MV, d)
    for z, sb in zip(zs, s_breve):
        cal = accumulate(cal, fake_record(z, sb * np.eye(d)))
    gamma = finalize_fixed(cal)
    for i in range(d):
        def ll_i(g, i=i):
            return sum(stats.norm.logpdf(z[i], scale=np.sqrt(sb * g)) for z, sb in zip(zs, s_breve))
        assert abs(central_gradient(ll_i, gamma[i])) < 1e-6

    pair = iwp_transitions(2, rng.uniform(0.05, 0.5))
    h_mat = rng.normal(size=(d, d * 3))
    local = h_mat @ np.kron(pair.q_small, np.eye(d)) @ h_mat.T
    z = zs[0]
    est = estimate_tv_scalar(z, pair, h_mat)
    assert abs(central_gradient(lambda g: log_likelihood([z], [g * local]), est)) < 1e-6

    est_diag = estimate_tv_diagonal(z, pair)
    q11 = pair.q_small[1, 1]
    for i in range(d):
        def ll_tv(g, i=i):
            return stats.norm.logpdf(z[i], scale=np.sqrt(g * q11))
        assert abs(central_gradient(ll_tv, est_diag[i])) < 1e-6


def test_log_likelihood_matches_scipy(rng):
    zs, covs = random_residual_set(rng, n_steps=3)
    expected = sum(stats.multivariate_normal(np.zeros(3), s).logpdf(z) for z, s in zip(zs, covs))
    assert log_likelihood(zs, covs) == pytest.approx(expected, rel=1e-12)


def unit_records(problem, q, order, steps=30, h=0.1, gamma=None):
    state = taylor_initial_state(problem, q)
    gamma = np.ones(problem.d) if gamma is None else np.asarray(gamma, dtype=float)
    records, t = [], 0.0
    for _ in range(steps):
        rec = filter_step(state, problem, t, h, gamma, order)
        records.append(rec)
        state, t = rec.filtered, t + h
    return records


class TestRescale:
    def test_unit_is_identity(self):
        recs = unit_records(get_problem("fitzhugh-nagumo"), 2, LinearizationOrder.FIRST, steps=5)
        out = rescale_posterior(recs, np.ones(2))
        for a, b in zip(recs, out):
            np.testing.assert_array_equal(a.filtered.mean, b.filtered.mean)
            np.testing.assert_array_equal(a.filtered.cov_factor, b.filtered.cov_factor)

    def test_factor_four_doubles_std(self):
        recs = unit_records(get_problem("fitzhugh-nagumo"), 2, LinearizationOrder.FIRST, steps=5)
        out = rescale_posterior(recs, np.full(2, 4.0))
        for a, b in zip(recs, out):
            np.testing.assert_array_equal(a.filtered.mean, b.filtered.mean)
            np.testing.assert_allclose(np.sqrt(np.diag(b.filtered.cov)),
                                       2 * np.sqrt(np.diag(a.filtered.cov)), rtol=1e-14)

    def test_zeroth_diagonal_equals_resolve(self):
        p = get_problem("lotka-volterra")
        gamma = np.array([0.3, 7.0])
        unit = rescale_posterior(unit_records(p, 3, LinearizationOrder.ZEROTH), gamma)
        direct = unit_records(p, 3, LinearizationOrder.ZEROTH, gamma=gamma)
        for a, b in zip(unit, direct):
            np.testing.assert_allclose(a.filtered.mean, b.filtered.mean, rtol=1e-9, atol=1e-12)
            np.testing.assert_allclose(a.filtered.cov, b.filtered.cov, rtol=1e-9, atol=1e-15)
            np.testing.assert_allclose(a.residual.s, b.residual.s, rtol=1e-9)


@given(c=st.floats(1e-4, 1e4))
def test_zeroth_means_invariant_to_diffusion_scale(c):
    p = get_problem("fitzhugh-nagumo")
    base = unit_records(p, 3, LinearizationOrder.ZEROTH, steps=20, gamma=[1.0, 2.0])
    scaled = unit_records(p, 3, LinearizationOrder.ZEROTH, steps=20, gamma=[c, 2.0 * c])
    for a, b in zip(base, scaled):
        np.testing.assert_allclose(a.filtered.mean, b.filtered.mean, rtol=1e-10, atol=1e-12)
