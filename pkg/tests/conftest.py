import warnings

import pytest

from optocool import fock
from optocool.params import QUANTUM_REGIME, SystemParams

_acceptance = []


@pytest.fixture
def quantum():
    return QUANTUM_REGIME


@pytest.fixture
def small_params():
    return SystemParams(kappa=0.3, gamma=0.05, g=0.08, n_b=0.4, n_c=0.3)


@pytest.fixture(autouse=True)
def _quiet_truncation():
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", fock.TruncationWarning)
        yield


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(label): exit criterion, summarized at the end of the run")


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    label = dict(report.user_properties).get("acceptance")
    if label:
        _acceptance.append((label, report.outcome))


def pytest_runtest_setup(item):
    marker = item.get_closest_marker("acceptance")
    if marker:
        label = marker.args[0]
        callspec = getattr(item, "callspec", None)
        if callspec is not None:
            label = f"{label} [{callspec.id}]"
        item.user_properties.append(("acceptance", label))


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    groups = {}
    for label, outcome in _acceptance:
        status = "PASS" if outcome == "passed" else "FAIL"
        terminalreporter.write_line(f"{status}  {label}")
        groups.setdefault(label.split()[0].split(".")[0], []).append(outcome == "passed")
    terminalreporter.write_line("")
    for crit, results in groups.items():
        status = "PASS" if all(results) else "FAIL"
        terminalreporter.write_line(f"{status}  {crit} ({sum(results)}/{len(results)} checks)")
