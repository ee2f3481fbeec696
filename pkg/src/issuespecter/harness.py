"""Patch regression harness.

Each candidate fix is spliced into a private copy of the project, the test
suite is run there, and tests that passed on the untouched project but
fail (or error) on the patched copy are counted as regressions.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
import shlex
import shutil
import subprocess
import tempfile
import threading
import time
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

from ._io import atomic_write_text, dumps
from .coverage import UncoveredSegment, read_source, split_lines
from .errors import CommandNotFound, HarnessError, ResultParseError, TestTimeout
from .issues import IssueReport

log = logging.getLogger(__name__)

DEFAULT_TIMEOUT = 600.0
STATUSES = ("clean", "regressions", "apply-failed", "run-failed", "no-fix")
_IGNORED_DIRS = {".git", "__pycache__", ".pytest_cache", ".mypy_cache", ".tox", ".venv"}


@dataclass(frozen=True)
class TestRunResult:
    __test__ = False

    passed: frozenset[str] = frozenset()
    failed: frozenset[str] = frozenset()
    errored: frozenset[str] = frozenset()
    duration_seconds: float = 0.0
    exit_code: int = 0
    stdout: str = field(default="", compare=False, repr=False)
    stderr: str = field(default="", compare=False, repr=False)

    def __post_init__(self) -> None:
        if self.passed & self.failed:
            raise ValueError("a test cannot both pass and fail")

    def to_dict(self) -> dict:
        return {
            "passed": sorted(self.passed),
            "failed": sorted(self.failed),
            "errored": sorted(self.errored),
            "duration_seconds": self.duration_seconds,
            "exit_code": self.exit_code,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "TestRunResult":
        return cls(
            frozenset(data["passed"]), frozenset(data["failed"]), frozenset(data["errored"]),
            data["duration_seconds"], data["exit_code"],
        )


@dataclass(frozen=True)
class RegressionResult:
    issue_id: str
    applied: bool
    baseline: TestRunResult
    patched: Optional[TestRunResult]
    new_failures: frozenset[str]
    status: str
    detail: str = ""

    def __post_init__(self) -> None:
        if self.status not in STATUSES:
            raise ValueError(f"unknown status {self.status!r}")
        if not self.new_failures <= self.baseline.passed:
            raise ValueError("new failures must have passed at baseline")
        if self.status == "clean" and self.new_failures:
            raise ValueError("a clean result has no new failures")

    @property
    def failing_test_count(self) -> int:
        return len(self.new_failures)

    def to_dict(self) -> dict:
        return {
            "issue_id": self.issue_id,
            "applied": self.applied,
            "status": self.status,
            "failing_test_count": self.failing_test_count,
            "new_failures": sorted(self.new_failures),
            "detail": self.detail,
            "baseline": self.baseline.to_dict(),
            "patched": self.patched.to_dict() if self.patched else None,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RegressionResult":
        return cls(
            issue_id=data["issue_id"],
            applied=data["applied"],
            baseline=TestRunResult.from_dict(data["baseline"]),
            patched=TestRunResult.from_dict(data["patched"]) if data.get("patched") else None,
            new_failures=frozenset(data["new_failures"]),
            status=data["status"],
            detail=data.get("detail", ""),
        )


def new_failures(baseline: TestRunResult, patched: TestRunResult) -> frozenset[str]:
    return (patched.failed | patched.errored) & baseline.passed


# -- running tests -----------------------------------------------------------


def parse_junit(path: str | Path) -> tuple[set[str], set[str], set[str]]:
    """Read a JUnit-style XML file into (passed, failed, errored) id sets.

    Test ids are ``classname::name``.  Skipped tests are in no set.
    """
    try:
        root = ET.parse(path).getroot()
    except (ET.ParseError, OSError) as exc:
        raise ResultParseError(f"cannot parse results file {path}: {exc}") from exc
    passed: set[str] = set()
    failed: set[str] = set()
    errored: set[str] = set()
    for case in root.iter("testcase"):
        name = case.get("name")
        if name is None:
            raise ResultParseError(f"{path}: testcase without a name")
        classname = case.get("classname") or ""
        test_id = f"{classname}::{name}" if classname else name
        tags = {child.tag for child in case}
        if "error" in tags:
            errored.add(test_id)
        elif "failure" in tags:
            failed.add(test_id)
        elif "skipped" not in tags:
            passed.add(test_id)
    # a test id seen with several outcomes keeps the worst one
    passed -= failed | errored
    failed -= errored
    return passed, failed, errored


def build_command(template: str, project_dir: Path, results_file: Optional[Path]) -> list[str]:
    values = {"project_dir": str(project_dir), "results_file": str(results_file or "")}
    return [token.format(**values) for token in shlex.split(template)]


def run_tests(
    project_copy: str | Path,
    test_command: str,
    *,
    timeout: float = DEFAULT_TIMEOUT,
    env: Optional[dict[str, str]] = None,
) -> TestRunResult:
    """Run ``test_command`` inside ``project_copy``.

    When the template mentions ``{results_file}`` the JUnit XML written
    there gives per-test outcomes.  Otherwise the run is all-or-nothing:
    a single pseudo-test ``<suite>`` passes iff the exit code is 0.
    """
    project_copy = Path(project_copy).resolve()
    uses_results = "{results_file}" in test_command
    with tempfile.TemporaryDirectory(prefix="issuespecter-results-") as tmp:
        results_file = Path(tmp) / "results.xml" if uses_results else None
        argv = build_command(test_command, project_copy, results_file)
        if not argv:
            raise CommandNotFound("empty test command")
        run_env = {**os.environ, "PYTHONDONTWRITEBYTECODE": "1", **(env or {})}
        started = time.monotonic()
        try:
            proc = subprocess.run(
                argv, cwd=project_copy, env=run_env, capture_output=True, text=True, timeout=timeout
            )
        except FileNotFoundError as exc:
            raise CommandNotFound(f"test command not found: {argv[0]}") from exc
        except subprocess.TimeoutExpired as exc:
            raise TestTimeout(timeout, _text(exc.stdout), _text(exc.stderr)) from exc
        duration = time.monotonic() - started
        if results_file is not None:
            if not results_file.exists():
                raise ResultParseError(
                    f"results file was not written (exit code {proc.returncode}): {proc.stderr[-500:]}"
                )
            passed, failed, errored = parse_junit(results_file)
        else:
            passed, failed, errored = ({"<suite>"}, set(), set()) if proc.returncode == 0 else (set(), {"<suite>"}, set())
    return TestRunResult(
        frozenset(passed), frozenset(failed), frozenset(errored), duration, proc.returncode,
        proc.stdout, proc.stderr,
    )


def _text(value) -> str:
    if value is None:
        return ""
    return value.decode("utf-8", "replace") if isinstance(value, bytes) else value


# -- applying fixes ----------------------------------------------------------


def apply_fix(project_copy: str | Path, segment: UncoveredSegment, fixed_code: str) -> bool:
    """Replace the segment's lines in ``project_copy`` with ``fixed_code``.

    Returns False, leaving the file untouched, when the file no longer holds
    the segment body at the recorded lines.
    """
    path = Path(project_copy) / segment.path
    if not path.is_file():
        return False
    try:
        lines = split_lines(read_source(path))
    except UnicodeDecodeError:
        return False
    current = "".join(lines[segment.start_line - 1 : segment.end_line])
    if segment.end_line > len(lines) or current != segment.body:
        return False
    replacement = fixed_code
    if replacement and not replacement.endswith("\n") and segment.body.endswith("\n"):
        replacement += "\n"
    text = "".join(lines[: segment.start_line - 1]) + replacement + "".join(lines[segment.end_line :])
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    return True


# -- evaluation ----------------------------------------------------------------


def copy_project(project_root: str | Path, destination: str | Path) -> Path:
    destination = Path(destination)
    shutil.copytree(
        project_root, destination, symlinks=True,
        ignore=lambda _dir, names: [n for n in names if n in _IGNORED_DIRS],
    )
    return destination


def tree_checksum(root: str | Path) -> str:
    """Digest of every file path and content under ``root``."""
    root = Path(root)
    digest = hashlib.sha256()
    for path in sorted(p for p in root.rglob("*") if p.is_file() or p.is_symlink()):
        rel = path.relative_to(root).as_posix()
        digest.update(rel.encode() + b"\0")
        if path.is_symlink():
            digest.update(b"L" + os.readlink(path).encode())
        else:
            digest.update(path.read_bytes())
        digest.update(b"\0")
    return digest.hexdigest()


class PatchHarness:
    """Evaluates candidate fixes against one project.

    The baseline run happens once, in its own copy, and is cached.
    """

    def __init__(
        self,
        project_root: str | Path,
        test_command: str,
        *,
        timeout: float = DEFAULT_TIMEOUT,
        keep_artifacts: bool = False,
        work_dir: str | Path | None = None,
    ):
        self.project_root = Path(project_root)
        self.test_command = test_command
        self.timeout = timeout
        self.keep_artifacts = keep_artifacts
        self.work_dir = Path(work_dir) if work_dir else None
        self._baseline: Optional[TestRunResult] = None
        self._baseline_error: Optional[HarnessError] = None
        self._lock = threading.Lock()

    def _fresh_copy(self, label: str) -> Path:
        parent = tempfile.mkdtemp(prefix=f"issuespecter-{label}-", dir=self.work_dir)
        return copy_project(self.project_root, Path(parent) / "project")

    def _discard(self, copy: Path) -> None:
        if not self.keep_artifacts:
            shutil.rmtree(copy.parent, ignore_errors=True)

    @property
    def baseline(self) -> TestRunResult:
        with self._lock:
            if self._baseline_error is not None:
                raise self._baseline_error
            if self._baseline is None:
                copy = self._fresh_copy("baseline")
                try:
                    self._baseline = run_tests(copy, self.test_command, timeout=self.timeout)
                except HarnessError as exc:
                    self._baseline_error = exc
                    raise
                finally:
                    self._discard(copy)
            return self._baseline

    def evaluate(self, segment: UncoveredSegment, issue: IssueReport) -> RegressionResult:
        try:
            baseline = self.baseline
        except HarnessError as exc:
            empty = TestRunResult(exit_code=-1)
            return RegressionResult(issue.issue_id, False, empty, None, frozenset(), "run-failed",
                                    f"baseline run failed: {exc}")
        if issue.fixed_code is None:
            return RegressionResult(issue.issue_id, False, baseline, None, frozenset(), "no-fix")
        copy = self._fresh_copy("patch")
        try:
            if not apply_fix(copy, segment, issue.fixed_code):
                return RegressionResult(
                    issue.issue_id, False, baseline, None, frozenset(), "apply-failed",
                    "segment body no longer matches the file",
                )
            try:
                patched = run_tests(copy, self.test_command, timeout=self.timeout)
            except HarnessError as exc:
                return RegressionResult(issue.issue_id, True, baseline, None, frozenset(), "run-failed", str(exc))
            broken = new_failures(baseline, patched)
            status = "regressions" if broken else "clean"
            return RegressionResult(issue.issue_id, True, baseline, patched, broken, status)
        finally:
            self._discard(copy)


def evaluate_patch(
    project_root: str | Path,
    segment: UncoveredSegment,
    issue: IssueReport,
    test_command: str,
    *,
    timeout: float = DEFAULT_TIMEOUT,
    keep_artifacts: bool = False,
    harness: Optional[PatchHarness] = None,
) -> RegressionResult:
    """Evaluate one fix.  Pass a shared ``harness`` to reuse its cached baseline."""
    if harness is None:
        harness = PatchHarness(project_root, test_command, timeout=timeout, keep_artifacts=keep_artifacts)
    return harness.evaluate(segment, issue)


def store_regression(path: str | Path, results: list[RegressionResult]) -> None:
    atomic_write_text(path, "".join(dumps(r.to_dict()) + "\n" for r in results))


def load_regression(path: str | Path) -> dict[str, RegressionResult]:
    out = {}
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                result = RegressionResult.from_dict(json.loads(line))
                out[result.issue_id] = result
    return out
