import pytest

from loopsmith.lti import second_order_plant
from loopsmith.synthesis import build_generalized_plant, synthesize


@pytest.fixture(scope="session")
def quick_controller():
    """A synthesized controller for the default plant, on a reduced search budget."""
    gp = build_generalized_plant(second_order_plant())
    return synthesize(gp, multistarts=3, max_evals=3000, seed=1).controller.system


ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for key in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[key])
