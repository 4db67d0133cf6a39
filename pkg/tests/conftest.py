import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "default", max_examples=40, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


def random_lower(rng, n, scale=1.0):
    return np.tril(rng.normal(size=(n, n))) * scale


def dense_kalman_update(mean, cov, h_mat, z_hat):
    """Dense noiseless update; the oracle for the factored path.

    Joseph form: ``cov - K S K^T`` amplifies rounding geometrically over
    repeated noiseless updates.
    """
    s = h_mat @ cov @ h_mat.T
    k = np.linalg.solve(s, h_mat @ cov).T
    ikh = np.eye(cov.shape[0]) - k @ h_mat
    return mean - k @ z_hat, ikh @ cov @ ikh.T, s


@pytest.fixture
def rng():
    return np.random.default_rng(20240613)


def pytest_terminal_summary(terminalreporter):
    lines = [value for reports in terminalreporter.stats.values() for rep in reports
             if getattr(rep, "when", None) == "call"
             for name, value in rep.user_properties if name == "acceptance"]
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: s.split()[1]):
            terminalreporter.write_line(line)
