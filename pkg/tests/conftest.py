from __future__ import annotations

import shutil
import sys
from pathlib import Path

import pytest

FIXTURES = Path(__file__).parent / "fixtures"
MINIPROJ = FIXTURES / "miniproj"
TEST_COMMAND = f"{sys.executable} -m pytest -q --junitxml={{results_file}} tests"


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion")


@pytest.fixture
def miniproj(tmp_path) -> Path:
    """A private copy of the bundled mini project."""
    dest = tmp_path / "miniproj"
    shutil.copytree(MINIPROJ, dest)
    shutil.copy(FIXTURES / "miniproj_coverage.json", tmp_path / "coverage.json")
    return dest


@pytest.fixture
def test_command() -> str:
    return TEST_COMMAND


_criteria: dict[int, list] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" and not (report.when == "setup" and report.outcome != "passed"):
        return
    marker = getattr(report, "criterion", None)
    if marker is not None:
        _criteria.setdefault(marker[0], [marker[1], True])
        if report.outcome != "passed":
            _criteria[marker[0]][1] = False


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is not None:
        report.criterion = mark.args


def pytest_terminal_summary(terminalreporter):
    if not _criteria:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_criteria):
        title, ok = _criteria[number]
        terminalreporter.write_line(f"criterion {number}: {'PASS' if ok else 'FAIL'}  {title}")
