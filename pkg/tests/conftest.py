import pytest

from adloco.config import RunConfig

ACCEPTANCE_FILE = "test_acceptance.py"


@pytest.fixture
def small_cfg() -> RunConfig:
    """A run small enough for unit tests (well under a second)."""
    return RunConfig(
        num_outer_steps=6, num_inner_steps=5, workers_per_trainer=2, num_init_trainers=3,
        n_samples=128, dim=4, eval_size=32, lr_inner=0.01,
    )


_outcomes: dict[str, str] = {}


def pytest_runtest_logreport(report):
    if ACCEPTANCE_FILE not in report.nodeid:
        return
    if report.when == "call" or report.outcome != "passed":
        name = report.nodeid.split("::")[-1]
        if report.when == "call" or name not in _outcomes:
            _outcomes[name] = "PASS" if report.passed else "FAIL"


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    terminalreporter.section("acceptance criteria")
    for name, verdict in _outcomes.items():
        terminalreporter.write_line(f"{verdict}  {name}")
