import numpy as np
import pytest
from mpmath import mp, mpf

from qmoney.security import SecurityParams


def emin_oracle(eps, eta, mu, dps=50):
    """Direct high-precision evaluation of the e_min bound."""
    with mp.workdps(dps):
        eps, eta, mu = mpf(eps), mpf(eta), mpf(mu)
        pre = (mpf(1) / 6 - 3 * eps / (2 * eta)) / (1 - 3 * eps / eta)
        return pre * 4 * mu * mp.exp(-4 * mu) / (1 - mp.exp(-4 * mu))


def forge_oracle(l, eta, eps, delta, dps=50):
    with mp.workdps(dps):
        l, eta, eps, delta = mpf(l), mpf(eta), mpf(eps), mpf(delta)
        l_min = mp.ceil((eta - eps) * l)
        terms = (
            mp.exp(-2 * eps**2 / eta**2 * l),
            mp.exp(-2 * l * eps**2),
            mp.exp(-2 * l_min * delta**2),
        )
        return terms, min(mpf(1), sum(terms))


def binomial_sigma(p, n):
    return float(np.sqrt(p * (1 - p) / n))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def configured_params():
    """Operating point for the calibrated error rate beta = 0.033."""
    from qmoney.security import delta_from_gap, emin_lower_bound

    eps = 0.0018
    delta = delta_from_gap(emin_lower_bound(eps, 0.0336, 0.25), 0.033)
    return SecurityParams(eta=0.0336, beta=0.033, eps=eps, delta=delta)


@pytest.fixture
def strict_params():
    return SecurityParams(eta=0.0336, beta=0.0, eps=0.0015, delta=0.0335)


# -- acceptance reporting ------------------------------------------------------

_ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[_ACCEPTANCE_KEY] = []


@pytest.fixture
def criterion(request):
    """Record one PASS/FAIL line; the assertion itself stays in the test."""
    lines = request.config.stash[_ACCEPTANCE_KEY]

    def report(number, ok, detail):
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'} | {detail}"
        lines.append(line)
        print(line)
        return ok

    return report


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
