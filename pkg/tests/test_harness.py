import shlex
import sys
from pathlib import Path

import pytest

from issuespecter.coverage import UncoveredSegment, extract_segments, load_coverage, segment_id_for
from issuespecter.errors import CommandNotFound, ResultParseError, TestTimeout
from issuespecter.harness import (
    PatchHarness,
    RegressionResult,
    TestRunResult,
    apply_fix,
    evaluate_patch,
    load_regression,
    new_failures,
    parse_junit,
    run_tests,
    store_regression,
    tree_checksum,
)
from issuespecter.issues import IssueReport, OsImpact

OPS = "mathutils/ops.py"
BREAK_SAFE_DIV = "        return None\n    return a * b\n"
PY = shlex.quote(sys.executable)


def segments_of(project: Path) -> dict[int, UncoveredSegment]:
    report = load_coverage(project.parent / "coverage.json")
    return {s.start_line: s for s in extract_segments(report, project)}


def with_fix(fixed_code, issue_id="mini-1"):
    return IssueReport(
        issue_id=issue_id, project_name="miniproj", segment_ref="seg", title="t", summary="s",
        severity="high", os_impact=OsImpact("all"), body="b", inconsistent_documentation=False,
        fixed_code=fixed_code, word_count=1, created_at="1970-01-01T00:00:00+00:00",
    )


def write_junit(path: Path, cases: str) -> Path:
    path.write_text(f'<?xml version="1.0"?><testsuites><testsuite name="s">{cases}</testsuite></testsuites>')
    return path


def test_fixture_segments(miniproj):
    spans = {(s.start_line, s.end_line) for s in segments_of(miniproj).values()}
    assert spans == {(12, 12), (19, 19), (24, 30)}


def test_baseline_run_passes_every_test(miniproj, test_command):
    result = run_tests(miniproj, test_command)
    assert result.exit_code == 0
    assert {t.split("::")[1] for t in result.passed} == {"test_add", "test_clamp_low", "test_clamp_inside", "test_safe_div"}
    assert not result.failed and not result.errored


def test_breaking_fix_counts_one_regression(miniproj, test_command):
    before = tree_checksum(miniproj)
    seg = segments_of(miniproj)[19]
    result = evaluate_patch(miniproj, seg, with_fix(BREAK_SAFE_DIV), test_command)
    assert result.status == "regressions"
    assert result.failing_test_count == 1
    assert [t.split("::")[1] for t in result.new_failures] == ["test_safe_div"]
    assert tree_checksum(miniproj) == before


def test_no_op_fix_is_clean(miniproj, test_command):
    seg = segments_of(miniproj)[19]
    result = evaluate_patch(miniproj, seg, with_fix(seg.body), test_command)
    assert (result.status, result.failing_test_count, result.applied) == ("clean", 0, True)


def test_stale_segment_is_apply_failed(miniproj, test_command):
    seg = segments_of(miniproj)[12]
    ops = miniproj / OPS
    ops.write_text(ops.read_text().replace("        return high\n", "        return high  # edited\n"))
    before = tree_checksum(miniproj)
    result = evaluate_patch(miniproj, seg, with_fix("        return low\n"), test_command)
    assert result.status == "apply-failed" and not result.applied and result.patched is None
    assert tree_checksum(miniproj) == before


def test_issue_without_fix(miniproj, test_command):
    seg = segments_of(miniproj)[19]
    result = evaluate_patch(miniproj, seg, with_fix(None), test_command)
    assert result.status == "no-fix" and result.patched is None and result.failing_test_count == 0


def test_shared_harness_is_idempotent_and_leaves_project_alone(miniproj, test_command):
    before = tree_checksum(miniproj)
    harness = PatchHarness(miniproj, test_command)
    seg = segments_of(miniproj)[19]
    first = harness.evaluate(seg, with_fix(BREAK_SAFE_DIV))
    second = harness.evaluate(seg, with_fix(BREAK_SAFE_DIV))
    assert (first.status, first.new_failures) == (second.status, second.new_failures)
    assert first.baseline is second.baseline
    assert tree_checksum(miniproj) == before


def test_failing_baseline_becomes_run_failed(miniproj):
    harness = PatchHarness(miniproj, f"{PY} -c \"raise SystemExit(1)\" {{results_file}}")
    result = harness.evaluate(segments_of(miniproj)[19], with_fix(BREAK_SAFE_DIV))
    assert result.status == "run-failed"
    assert "results file" in result.detail


def test_keep_artifacts(miniproj, test_command, tmp_path):
    work = tmp_path / "work"
    work.mkdir()
    harness = PatchHarness(miniproj, test_command, keep_artifacts=True, work_dir=work)
    harness.evaluate(segments_of(miniproj)[19], with_fix(BREAK_SAFE_DIV))
    kept = sorted(p.name.split("-")[1] for p in work.iterdir())
    assert kept == ["baseline", "patch"]


def test_exit_code_only_mode(miniproj):
    ok = run_tests(miniproj, f"{PY} -m pytest -q tests")
    assert ok.passed == {"<suite>"} and not ok.failed
    bad = run_tests(miniproj, f"{PY} -m pytest -q tests -k nothing_matches_this")
    assert bad.failed == {"<suite>"}


def test_project_dir_placeholder(miniproj):
    result = run_tests(miniproj, f"{PY} -m pytest -q {{project_dir}}/tests")
    assert result.exit_code == 0


def test_timeout_keeps_partial_output(tmp_path):
    script = "import time; print('started', flush=True); time.sleep(30)"
    with pytest.raises(TestTimeout) as info:
        run_tests(tmp_path, f"{PY} -c {shlex.quote(script)}", timeout=1)
    assert "started" in info.value.stdout


def test_command_not_found(tmp_path):
    with pytest.raises(CommandNotFound):
        run_tests(tmp_path, "definitely-not-a-real-command-xyz {results_file}")


def test_missing_results_file(tmp_path):
    with pytest.raises(ResultParseError):
        run_tests(tmp_path, f"{PY} -c pass {{results_file}}")


def test_parse_junit(tmp_path):
    path = write_junit(tmp_path / "r.xml", (
        '<testcase classname="t.m" name="ok"/>'
        '<testcase classname="t.m" name="bad"><failure message="x"/></testcase>'
        '<testcase classname="t.m" name="boom"><error message="x"/></testcase>'
        '<testcase classname="t.m" name="skip"><skipped/></testcase>'
        '<testcase name="bare"/>'
    ))
    passed, failed, errored = parse_junit(path)
    assert passed == {"t.m::ok", "bare"}
    assert failed == {"t.m::bad"}
    assert errored == {"t.m::boom"}


def test_parse_junit_rejects_garbage(tmp_path):
    bad = tmp_path / "r.xml"
    bad.write_text("<testsuite><testcase")
    with pytest.raises(ResultParseError):
        parse_junit(bad)


def test_new_failures_definition():
    baseline = TestRunResult(passed=frozenset({"a", "b", "c"}), failed=frozenset({"d"}))
    patched = TestRunResult(passed=frozenset({"a"}), failed=frozenset({"b", "d"}), errored=frozenset({"c", "e"}))
    assert new_failures(baseline, patched) == {"b", "c"}


def test_result_invariants():
    with pytest.raises(ValueError):
        TestRunResult(passed=frozenset({"a"}), failed=frozenset({"a"}))
    base = TestRunResult(passed=frozenset({"a"}))
    with pytest.raises(ValueError):
        RegressionResult("i", True, base, base, frozenset({"zzz"}), "regressions")
    with pytest.raises(ValueError):
        RegressionResult("i", True, base, base, frozenset({"a"}), "clean")


def test_apply_fix_splice(tmp_path):
    (tmp_path / "m.py").write_text("a\nb\nc\nd\n")
    seg = UncoveredSegment(segment_id_for("m.py", 2, 3), "m.py", 2, 3, "b\nc\n")
    assert apply_fix(tmp_path, seg, "x\ny\nz\n")
    assert (tmp_path / "m.py").read_text() == "a\nx\ny\nz\nd\n"
    # the old range no longer matches, so a second attempt is refused
    assert not apply_fix(tmp_path, seg, "q\n")
    assert (tmp_path / "m.py").read_text() == "a\nx\ny\nz\nd\n"


def test_apply_fix_missing_file(tmp_path):
    seg = UncoveredSegment(segment_id_for("gone.py", 1, 1), "gone.py", 1, 1, "a\n")
    assert not apply_fix(tmp_path, seg, "b\n")


def test_apply_fix_terminates_last_line(tmp_path):
    (tmp_path / "m.py").write_text("a\nb\n")
    seg = UncoveredSegment(segment_id_for("m.py", 1, 1), "m.py", 1, 1, "a\n")
    assert apply_fix(tmp_path, seg, "z")
    assert (tmp_path / "m.py").read_text() == "z\nb\n"


def test_regression_store_round_trip(tmp_path, miniproj, test_command):
    seg = segments_of(miniproj)[19]
    results = [evaluate_patch(miniproj, seg, with_fix(BREAK_SAFE_DIV, "x"), test_command),
               RegressionResult("y", False, TestRunResult(), None, frozenset(), "no-fix")]
    store_regression(tmp_path / "r.jsonl", results)
    loaded = load_regression(tmp_path / "r.jsonl")
    assert loaded["x"] == results[0] and loaded["y"] == results[1]
