import numpy as np
import pytest

from zapfdr.model import BetaMixtureParams


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running statistical checks")


def random_params(rng, dim=1, gamma_range=(2.5, 8.0)):
    """Random working-model parameters with moderate coefficients."""
    return BetaMixtureParams(
        rng.normal(-1.5, 0.7, dim),
        rng.normal(-1.5, 0.7, dim),
        rng.normal(0.0, 1.0, dim),
        rng.normal(0.0, 1.0, dim),
        float(rng.uniform(*gamma_range)),
        float(rng.uniform(*gamma_range)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20240607)


def intercept_params(theta_l, theta_r, beta_l=0.0, beta_r=0.0, gammas=(4.0, 4.0)):
    return BetaMixtureParams([theta_l], [theta_r], [beta_l], [beta_r], *gammas)


# one line per acceptance criterion, echoed in the terminal summary
ACCEPTANCE_LINES = []


@pytest.fixture
def acceptance_report():
    def record(number, title, ok, detail):
        line = f"{'PASS' if ok else 'FAIL'} criterion {number} ({title}): {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[2])):
            terminalreporter.write_line(line)
