"""Markdown issue reports."""

from __future__ import annotations

from pathlib import Path
from typing import Mapping, Optional

from ._io import atomic_write_text
from .coverage import UncoveredSegment
from .harness import RegressionResult
from .issues import IssueReport
from .ranking import RankedIssueList

SEVERITY_LABELS = {"critical": "Critical", "high": "High", "medium": "Medium", "low": "Low", "very-low": "Very Low"}


def _fence(code: str) -> str:
    longest = 0
    run = 0
    for ch in code:
        run = run + 1 if ch == "`" else 0
        longest = max(longest, run)
    return "`" * max(3, longest + 1)


def _os_text(issue: IssueReport) -> str:
    return "all" if issue.os_impact.kind == "all" else ", ".join(issue.os_impact.labels)


def render_issue(
    issue: IssueReport,
    *,
    position: int,
    rule_rank: int,
    llm_rank: Optional[int],
    segment: Optional[UncoveredSegment],
    regression: Optional[RegressionResult],
    validity_report: Optional[str] = None,
) -> str:
    location = (
        f"`{segment.path}` lines {segment.start_line}-{segment.end_line}" if segment else f"segment `{issue.segment_ref}`"
    )
    if regression is not None and regression.status in ("clean", "regressions"):
        failing = str(regression.failing_test_count)
    else:
        failing = "not verifiable"
        if regression is not None:
            failing += f" ({regression.status})"
    lines = [
        f"# {issue.title}",
        "",
        f"- **Issue id:** `{issue.issue_id}`",
        f"- **Project:** {issue.project_name}",
        f"- **Severity:** {SEVERITY_LABELS[issue.severity]}",
        f"- **Operating systems:** {_os_text(issue)}",
        f"- **Location:** {location}",
        f"- **Priority:** {position} (rule rank {rule_rank}, LLM rank {llm_rank if llm_rank is not None else 'n/a'})",
        f"- **Failing tests with proposed fix:** {failing}",
        f"- **Inconsistent documentation:** {'yes' if issue.inconsistent_documentation else 'no'}",
    ]
    if issue.taxonomy_label:
        lines.append(f"- **Category:** {issue.taxonomy_label}")
    lines += ["", "## Summary", "", issue.summary, "", "## Description", "", issue.body.rstrip("\n"), "",
              "## Proposed fix", ""]
    if issue.fixed_code:
        fence = _fence(issue.fixed_code)
        code = issue.fixed_code if issue.fixed_code.endswith("\n") else issue.fixed_code + "\n"
        lines += [f"{fence}python", code.rstrip("\n"), fence]
    else:
        lines.append("none proposed")
    if validity_report:
        lines += ["", "## Validity assessment", "", validity_report.rstrip("\n")]
    return "\n".join(lines) + "\n"


def write_reports(
    output_dir: str | Path,
    ranked: RankedIssueList,
    issues: Mapping[str, IssueReport],
    segments: Mapping[str, UncoveredSegment],
    regression: Mapping[str, RegressionResult],
) -> list[Path]:
    """One Markdown file per selected issue plus ``index.md``, ordered by
    LLM rank when available, else rule rank.  Returns the written paths."""
    out = Path(output_dir)
    out.mkdir(parents=True, exist_ok=True)
    for stale in out.glob("*.md"):
        stale.unlink()
    entries = {e.issue_id: e for e in ranked.entries}
    written = []
    index = [
        f"# Ranked issues: {ranked.project_name}",
        "",
        f"Ordering: {'LLM ranking' if ranked.has_llm_ranks else 'rule-based ranking'}",
        "",
        "| # | Issue | Severity | OS | Rule rank | LLM rank | Failing tests |",
        "|---|-------|----------|----|-----------|----------|---------------|",
    ]
    for position, issue_id in enumerate(ranked.final_order(), 1):
        issue, entry = issues[issue_id], entries[issue_id]
        result = regression.get(issue_id)
        name = f"{position:02d}-{issue_id}.md"
        text = render_issue(
            issue, position=position, rule_rank=entry.rule_rank, llm_rank=entry.llm_rank,
            segment=segments.get(issue.segment_ref), regression=result, validity_report=entry.validity_report,
        )
        atomic_write_text(out / name, text)
        written.append(out / name)
        failing = str(entry.failing_test_count) if entry.failing_test_count is not None else "n/a"
        title = issue.title.replace("|", "\\|")
        index.append(
            f"| {position} | [{title}]({name}) | {SEVERITY_LABELS[issue.severity]} | {_os_text(issue)} "
            f"| {entry.rule_rank} | {entry.llm_rank if entry.llm_rank is not None else 'n/a'} | {failing} |"
        )
    atomic_write_text(out / "index.md", "\n".join(index) + "\n")
    written.append(out / "index.md")
    return written
