import pytest

from persuasive_design import CostSpec, PriorSpec, UtilitySpec, solve_boundaries

# lines appended by the acceptance module, echoed after the run
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def baseline():
    prior = PriorSpec(m0=0.0, varrho0=9.7344, sigma1=0.5, sigma0=0.5)
    util = UtilitySpec(alpha=1.0, B=1.0)
    cost = CostSpec.from_structural(41000, 46.3e6, 0.0, 300)
    return prior, util, cost


@pytest.fixture(scope="session")
def baseline_sol(baseline):
    prior, util, cost = baseline
    # close to the calibrated multiplier; fixed so tests do not depend on Monte Carlo
    return solve_boundaries(prior, util, 2.33, cost)
