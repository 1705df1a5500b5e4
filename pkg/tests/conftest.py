import numpy as np
import pytest
from hypothesis import settings

settings.register_profile("default", max_examples=40, deadline=None, derandomize=True)
settings.load_profile("default")

_VERDICTS: dict[int, tuple[str, str, str]] = {}


def pytest_addoption(parser):
    parser.addoption("--run-long", action="store_true", default=False,
                     help="run the hours-long CIFAR-10 training criterion (needs HATFREQ_CIFAR_DIR)")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None:
        return
    n, title = marker.args
    if report.when == "call" or report.skipped or report.failed:
        verdict = "PASS" if report.passed else "SKIP" if report.skipped else "FAIL"
        detail = ""
        if report.skipped and isinstance(report.longrepr, tuple):
            detail = report.longrepr[2].removeprefix("Skipped: ")
        if verdict != "PASS" or n not in _VERDICTS:
            _VERDICTS[n] = (verdict, title, detail)


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(_VERDICTS):
        verdict, title, detail = _VERDICTS[n]
        line = f"criterion {n:>2} {verdict}  {title}"
        terminalreporter.write_line(line + (f"  ({detail})" if detail else ""))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
