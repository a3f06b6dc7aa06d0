import pytest

from dcflex.config import load_facility_config
from dcflex.scenarios import run_scenario1, run_scenario2
from dcflex.workload import default_profile

# filled by test_acceptance.py, printed at the end of the run
ACCEPTANCE: dict[int, tuple[str, str]] = {}


@pytest.fixture(scope="session")
def cfg():
    return load_facility_config()


@pytest.fixture(scope="session")
def profile(cfg):
    return default_profile(cfg.time, cfg.it.tranche_delays_slots)


@pytest.fixture(scope="session")
def base(cfg, profile):
    return run_scenario1(cfg, profile)


@pytest.fixture(scope="session")
def baseline(cfg, profile):
    """Scenario 2 optimum, solved once per session."""
    return run_scenario2(cfg, profile)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(ACCEPTANCE):
        verdict, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k}: {verdict}  {detail}")
