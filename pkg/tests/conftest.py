import numpy as np
import pytest

from manifold_mcmc.targets import make_gaussian, make_logistic, make_quartic, synthetic_logistic_data
from manifold_mcmc.verification import OracleCache

RHO9_COV = [[1.0, 0.9], [0.9, 1.0]]


@pytest.fixture(scope="session")
def gauss2():
    return make_gaussian([0.0, 0.0], RHO9_COV)


@pytest.fixture(scope="session")
def gauss1():
    return make_gaussian([0.0], [[1.0]])


@pytest.fixture(scope="session")
def quartic():
    return make_quartic()


@pytest.fixture(scope="session")
def logistic_data():
    return synthetic_logistic_data(n=100, dim=5, seed=7)


@pytest.fixture(scope="session")
def logistic(logistic_data):
    return make_logistic(logistic_data)


@pytest.fixture(scope="session")
def oracle_cache(tmp_path_factory):
    return OracleCache(tmp_path_factory.mktemp("oracles"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def logistic_mode(logistic):
    from scipy.optimize import minimize

    res = minimize(lambda t: -logistic.log_density(t), np.zeros(logistic.dim),
                   jac=lambda t: -logistic.grad_log_density(t), method="BFGS", options={"gtol": 1e-10})
    return res.x


def posterior_points(model, mode, rng, n):
    """Draws from the Laplace approximation at ``mode``."""
    chol = model.metric(mode).chol
    return mode + np.linalg.solve(chol.T, rng.standard_normal((model.dim, n))).T


_CRITERIA: list[str] = []


@pytest.fixture(scope="session")
def criterion_report():
    """Record one pass/fail line per acceptance criterion; echoed in the terminal summary."""

    def report(number, ok, detail, seconds):
        line = f"CRITERION {number}: {'PASS' if ok else 'FAIL'} ({seconds:.1f}s) {detail}"
        _CRITERIA.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_CRITERIA, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
