import random

import pytest

from dppp.paillier import ThresholdConfig, deal_keys


@pytest.fixture(scope="session")
def small_config():
    return ThresholdConfig(5, 3)


@pytest.fixture(scope="session")
def small_keys(small_config):
    """512-bit (5, 3) key, dealt once per session from a fixed seed."""
    return deal_keys(512, small_config, random.Random("tests/small"))


@pytest.fixture(scope="session")
def ensemble_config():
    return ThresholdConfig(20, 13)


@pytest.fixture(scope="session")
def ensemble_keys(ensemble_config):
    return deal_keys(512, ensemble_config, random.Random("tests/ensemble"))


_ACCEPTANCE: dict[str, tuple[str, str]] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    if "test_acceptance" not in item.nodeid or not item.name.startswith("test_criterion"):
        return
    if report.when == "call" or (report.when == "setup" and report.failed):
        doc = (item.function.__doc__ or "").strip().splitlines()
        _ACCEPTANCE[item.name] = ("PASS" if report.passed else "FAIL", doc[0] if doc else "")


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE, key=lambda n: int(n.split("_")[2])):
        status, doc = _ACCEPTANCE[name]
        terminalreporter.write_line(f"{status}  {name}: {doc}")
