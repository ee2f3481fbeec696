"""Issue selection and ranking.

The rule ranker orders issues hierarchically: severity first, then OS
breadth, then description length, then generation order.  The LLM ranker
re-orders the selected top-k; an optional deterministic pass demotes
issues whose proposed fix breaks existing tests.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace
from typing import Mapping, Optional, Sequence

from .errors import RankingRejected, SchemaViolation
from .issues import IssueReport, OsImpact
from .llm.gateway import Gateway
from .llm.prompts import DEFAULT_MODEL_ID, NOT_VERIFIABLE, RankingInput, render_ranking_prompt
from .llm.schema import parse_ranking_response

log = logging.getLogger(__name__)

DEFAULT_TOP_K = 10
SEVERITY_RANK = {"critical": 4, "high": 3, "medium": 2, "low": 1, "very-low": 0}
ALL_OS_SCORE = 100


def os_score(impact: OsImpact) -> int:
    return ALL_OS_SCORE if impact.kind == "all" else len(impact.labels)


@dataclass(frozen=True, order=True)
class RuleScore:
    severity_rank: int
    os_score: int
    word_count: int
    tiebreak_seq: int

    @classmethod
    def of(cls, issue: IssueReport, seq: int) -> "RuleScore":
        return cls(SEVERITY_RANK[issue.severity], os_score(issue.os_impact), issue.word_count, seq)

    def sort_key(self) -> tuple[int, int, int, int]:
        return (-self.severity_rank, -self.os_score, -self.word_count, self.tiebreak_seq)


@dataclass(frozen=True)
class RankedEntry:
    issue_id: str
    rule_rank: int
    llm_rank: Optional[int] = None
    failing_test_count: Optional[int] = None
    validity_classification: Optional[bool] = None
    validity_report: Optional[str] = None
    reasoning: Optional[str] = None
    confidence_rating: object = None

    def to_dict(self) -> dict:
        return {
            "issue_id": self.issue_id,
            "rule_rank": self.rule_rank,
            "llm_rank": self.llm_rank,
            "failing_test_count": self.failing_test_count,
            "validity_classification": self.validity_classification,
            "validity_report": self.validity_report,
            "reasoning": self.reasoning,
            "confidence_rating": self.confidence_rating,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RankedEntry":
        fields = ("issue_id", "rule_rank", "llm_rank", "failing_test_count",
                  "validity_classification", "validity_report", "reasoning", "confidence_rating")
        return cls(**{k: data.get(k) for k in fields})


def _check_permutation(values: Sequence[int], what: str) -> None:
    if sorted(values) != list(range(1, len(values) + 1)):
        raise ValueError(f"{what} values {list(values)} are not a permutation of 1..{len(values)}")


@dataclass(frozen=True)
class RankedIssueList:
    """Top-k issues of one project.

    ``entries`` is kept in the *current* order: rule order after
    :func:`rule_rank`, LLM order once LLM ranks exist.
    """

    project_name: str
    entries: tuple[RankedEntry, ...] = ()
    llm_status: str = "absent"
    regression_penalty_applied: bool = False
    notes: tuple[str, ...] = field(default_factory=tuple)

    def __post_init__(self) -> None:
        _check_permutation([e.rule_rank for e in self.entries], "rule_rank")
        llm = [e.llm_rank for e in self.entries]
        if any(r is not None for r in llm):
            if any(r is None for r in llm):
                raise ValueError("llm_rank must be present on all entries or none")
            _check_permutation(llm, "llm_rank")

    @property
    def has_llm_ranks(self) -> bool:
        return bool(self.entries) and self.entries[0].llm_rank is not None

    def rule_order(self) -> list[str]:
        return [e.issue_id for e in sorted(self.entries, key=lambda e: e.rule_rank)]

    def llm_order(self) -> list[str]:
        if not self.has_llm_ranks:
            raise ValueError("list has no LLM ranks")
        return [e.issue_id for e in sorted(self.entries, key=lambda e: e.llm_rank)]

    def final_order(self) -> list[str]:
        return self.llm_order() if self.has_llm_ranks else self.rule_order()

    def to_dict(self) -> dict:
        return {
            "project": self.project_name,
            "llm_status": self.llm_status,
            "regression_penalty_applied": self.regression_penalty_applied,
            "notes": list(self.notes),
            "entries": [e.to_dict() for e in self.entries],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RankedIssueList":
        return cls(
            project_name=data["project"],
            entries=tuple(RankedEntry.from_dict(e) for e in data["entries"]),
            llm_status=data.get("llm_status", "absent"),
            regression_penalty_applied=data.get("regression_penalty_applied", False),
            notes=tuple(data.get("notes", ())),
        )


def rule_order(issues: Sequence[IssueReport]) -> list[IssueReport]:
    """Full hierarchical ordering; input position is the generation order."""
    scored = [(RuleScore.of(issue, seq).sort_key(), issue) for seq, issue in enumerate(issues)]
    scored.sort(key=lambda pair: pair[0])
    return [issue for _, issue in scored]


def rule_rank(issues: Sequence[IssueReport], k: int = DEFAULT_TOP_K, project_name: str | None = None) -> RankedIssueList:
    if k < 1:
        raise ValueError("k must be >= 1")
    if project_name is None:
        project_name = issues[0].project_name if issues else ""
    top = rule_order(issues)[:k]
    entries = tuple(RankedEntry(issue.issue_id, rank) for rank, issue in enumerate(top, 1))
    return RankedIssueList(project_name, entries)


def failing_count_attribute(result) -> int | str:
    """Value shown to the ranking LLM for a patch evaluation result."""
    if result is None or result.status not in ("clean", "regressions"):
        return NOT_VERIFIABLE
    return result.failing_test_count


def ranking_inputs(
    selected: RankedIssueList, issues: Mapping[str, IssueReport], regression: Mapping[str, object]
) -> list[RankingInput]:
    out = []
    for entry in sorted(selected.entries, key=lambda e: e.rule_rank):
        issue = issues[entry.issue_id]
        out.append(
            RankingInput(
                issue_id=issue.issue_id,
                title=issue.title,
                generated_issue=issue.body,
                bug_severity=issue.severity,
                os=issue.os_impact.to_json(),
                failing_test_count=failing_count_attribute(regression.get(issue.issue_id)),
                word_count=issue.word_count,
            )
        )
    return out


def _with_failing_counts(selected: RankedIssueList, regression: Mapping[str, object]) -> list[RankedEntry]:
    out = []
    for entry in selected.entries:
        count = failing_count_attribute(regression.get(entry.issue_id))
        out.append(replace(entry, failing_test_count=count if isinstance(count, int) else None))
    return out


def llm_rank(
    selected: RankedIssueList,
    issues: Mapping[str, IssueReport],
    regression: Mapping[str, object],
    gateway: Gateway,
    *,
    model_id: str = DEFAULT_MODEL_ID,
) -> RankedIssueList:
    """Ask the LLM to re-rank the selected issues.

    If the answer is still unusable after the gateway's JSON re-prompt, the
    list comes back without LLM ranks and ``llm_status == "rejected"``.
    """
    entries = _with_failing_counts(selected, regression)
    if not entries:
        return replace(selected, entries=tuple(entries))
    request = render_ranking_prompt(
        ranking_inputs(selected, issues, regression), project_name=selected.project_name, model_id=model_id
    )
    ids = [e.issue_id for e in entries]
    try:
        parsed = gateway.complete_parsed(request, lambda raw: parse_ranking_response(raw, ids))
    except SchemaViolation as exc:
        log.warning("LLM ranking rejected for %s: %s", selected.project_name, exc)
        rejected = RankingRejected(str(exc))
        return replace(
            selected,
            entries=tuple(replace(e, llm_rank=None) for e in entries),
            llm_status="rejected",
            notes=selected.notes + (f"llm ranking rejected: {rejected}",),
        )
    by_id = parsed.by_id()
    ranked = []
    for entry in entries:
        item = by_id[entry.issue_id]
        ranked.append(
            replace(
                entry,
                llm_rank=item.rank,
                validity_classification=item.validity_classification,
                validity_report=item.validity_report,
                reasoning=item.reasoning,
                confidence_rating=item.confidence_rating,
            )
        )
    ranked.sort(key=lambda e: e.llm_rank)
    return replace(selected, entries=tuple(ranked), llm_status="ranked")


def apply_regression_penalty(selected: RankedIssueList, regression: Mapping[str, object]) -> RankedIssueList:
    """Stable re-sort of the current order by ascending failing-test count.

    Unverifiable patches count as 0.  The active rank field (LLM rank when
    present, else rule rank) is renumbered to the new order.
    """
    def failing(entry: RankedEntry) -> int:
        count = failing_count_attribute(regression.get(entry.issue_id))
        return count if isinstance(count, int) else 0

    use_llm = selected.has_llm_ranks
    current = sorted(selected.entries, key=lambda e: e.llm_rank if use_llm else e.rule_rank)
    reordered = sorted(current, key=failing)
    entries = []
    for position, entry in enumerate(reordered, 1):
        entry = replace(entry, llm_rank=position) if use_llm else replace(entry, rule_rank=position)
        entries.append(entry)
    return replace(selected, entries=tuple(entries), regression_penalty_applied=True)
