"""Tolerant parsing and validation of LLM responses."""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional, Union

from ..errors import RankNotPermutation, SchemaViolation, UnknownIssueId

SEVERITIES = ("critical", "high", "medium", "low", "very-low")
BUG_ENTRIES = 3

_FENCE_RE = re.compile(r"```[A-Za-z0-9_-]*[ \t]*\n(.*?)```", re.DOTALL)

_BUG_KEYS = {
    "bug_found": "bug_found",
    "bug_present": "bug_found",
    "has_bug": "bug_found",
    "is_bug": "bug_found",
    "title": "title",
    "summary": "summary",
    "bug_severity": "bug_severity",
    "severity": "bug_severity",
    "os": "os",
    "affected_os": "os",
    "operating_system": "os",
    "operating_systems": "os",
    "generated_issue": "generated_issue",
    "issue": "generated_issue",
    "issue_body": "generated_issue",
    "inconsistent_documentation": "inconsistent_documentation",
    "documentation_inconsistency": "inconsistent_documentation",
    "fixed_code": "fixed_code",
    "fix": "fixed_code",
    "suggested_fix": "fixed_code",
}
_BUG_REQUIRED = ("title", "summary", "bug_severity", "os", "generated_issue")

_RANK_KEYS = {
    "issue_id": "issue_id",
    "id": "issue_id",
    "rank": "rank",
    "ranking": "rank",
    "priority": "rank",
    "reasoning": "reasoning",
    "validity_classification": "validity_classification",
    "valid": "validity_classification",
    "is_valid": "validity_classification",
    "confidence_rating": "confidence_rating",
    "confidence": "confidence_rating",
    "validity_report": "validity_report",
    "report": "validity_report",
}
_RANK_CONTAINERS = ("rankings", "ranking", "ranked_issues", "issues", "items", "results")


@dataclass(frozen=True)
class BugEntry:
    bug_found: bool
    title: Optional[str] = None
    summary: Optional[str] = None
    bug_severity: Optional[str] = None
    os: Union[str, tuple[str, ...], None] = None
    generated_issue: Optional[str] = None
    inconsistent_documentation: Optional[bool] = None
    fixed_code: Optional[str] = None

    def __post_init__(self) -> None:
        if not self.bug_found:
            defect = (self.title, self.summary, self.bug_severity, self.os,
                      self.generated_issue, self.inconsistent_documentation, self.fixed_code)
            if any(v is not None for v in defect):
                raise ValueError("a no-bug entry carries no defect fields")
        elif self.bug_severity not in SEVERITIES:
            raise ValueError(f"invalid severity {self.bug_severity!r}")

    @classmethod
    def no_bug(cls) -> "BugEntry":
        return cls(bug_found=False)

    def to_dict(self) -> dict:
        if not self.bug_found:
            return {"bug_found": False}
        return {
            "bug_found": True,
            "title": self.title,
            "summary": self.summary,
            "bug_severity": self.bug_severity,
            "os": self.os if isinstance(self.os, str) else list(self.os or ()),
            "generated_issue": self.generated_issue,
            "inconsistent_documentation": self.inconsistent_documentation,
            "fixed_code": self.fixed_code,
        }


@dataclass(frozen=True)
class RawBugResponse:
    entries: tuple[BugEntry, ...]
    warnings: tuple[str, ...] = ()
    padded: int = 0

    def __post_init__(self) -> None:
        if len(self.entries) != BUG_ENTRIES:
            raise ValueError(f"expected exactly {BUG_ENTRIES} entries")


@dataclass(frozen=True)
class RankingItem:
    issue_id: str
    rank: int
    reasoning: str = ""
    validity_classification: Optional[bool] = None
    confidence_rating: Union[str, float, int, None] = None
    validity_report: str = ""


@dataclass(frozen=True)
class RawRankingResponse:
    items: tuple[RankingItem, ...] = field(default_factory=tuple)

    def ordered_ids(self) -> list[str]:
        return [i.issue_id for i in sorted(self.items, key=lambda i: i.rank)]

    def by_id(self) -> dict[str, RankingItem]:
        return {i.issue_id: i for i in self.items}


# -- extraction --------------------------------------------------------------


def _candidates(raw: str) -> Iterable[str]:
    for match in _FENCE_RE.finditer(raw):
        yield match.group(1)
    yield raw


def extract_json(raw: str, opener: str) -> Any:
    """Return the first JSON value starting with one of ``opener``'s chars.

    Fenced blocks are tried before the bare text.
    """
    decoder = json.JSONDecoder()
    for text in _candidates(raw):
        for i, ch in enumerate(text):
            if ch in opener:
                try:
                    value, _ = decoder.raw_decode(text, i)
                except json.JSONDecodeError:
                    continue
                return value
    raise SchemaViolation(f"no parseable JSON {'/'.join(opener)} found in response")


def _normalize_keys(obj: dict, aliases: dict[str, str]) -> dict:
    out: dict = {}
    for key, value in obj.items():
        norm = re.sub(r"[\s\-]+", "_", str(key).strip().lower())
        target = aliases.get(norm)
        if target is not None and target not in out:
            out[target] = value
    return out


def _as_bool(value: Any, what: str, index: int) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str) and value.strip().lower() in ("true", "yes", "false", "no"):
        return value.strip().lower() in ("true", "yes")
    raise SchemaViolation(f"{what} must be a boolean, got {value!r}", index)


def normalize_severity(value: Any) -> Optional[str]:
    if not isinstance(value, str):
        return None
    norm = re.sub(r"[\s_\-]+", "-", value.strip().lower())
    return norm if norm in SEVERITIES else None


def _as_os(value: Any, index: int) -> Union[str, tuple[str, ...]]:
    if isinstance(value, str):
        if value.strip().lower() == "all":
            return "all"
        return tuple(p.strip() for p in re.split(r"[,;]", value) if p.strip())
    if isinstance(value, list) and all(isinstance(v, str) for v in value):
        return tuple(v.strip() for v in value if v.strip())
    raise SchemaViolation(f"os must be a list of names or 'all', got {value!r}", index)


def _bug_entry(obj: Any, index: int) -> BugEntry:
    if not isinstance(obj, dict):
        raise SchemaViolation("entry is not an object", index)
    data = _normalize_keys(obj, _BUG_KEYS)
    if "bug_found" not in data:
        raise SchemaViolation("missing bug_found", index)
    if not _as_bool(data["bug_found"], "bug_found", index):
        return BugEntry.no_bug()
    for key in _BUG_REQUIRED:
        if data.get(key) is None:
            raise SchemaViolation(f"bug_found is true but {key} is missing", index)
    for key in ("title", "summary", "generated_issue"):
        if not isinstance(data[key], str):
            raise SchemaViolation(f"{key} must be text", index)
    if not data["title"].strip() or not data["generated_issue"].strip():
        raise SchemaViolation("title and generated_issue must be non-empty", index)
    severity = normalize_severity(data["bug_severity"])
    if severity is None:
        raise SchemaViolation(f"invalid bug_severity {data['bug_severity']!r}", index)
    inconsistent = data.get("inconsistent_documentation")
    inconsistent = False if inconsistent is None else _as_bool(inconsistent, "inconsistent_documentation", index)
    fixed = data.get("fixed_code")
    if fixed is not None and not isinstance(fixed, str):
        raise SchemaViolation("fixed_code must be text or null", index)
    return BugEntry(
        bug_found=True,
        title=data["title"],
        summary=data["summary"],
        bug_severity=severity,
        os=_as_os(data["os"], index),
        generated_issue=data["generated_issue"],
        inconsistent_documentation=inconsistent,
        fixed_code=fixed or None,
    )


def parse_bug_response(raw: str) -> RawBugResponse:
    """Parse a bug-identification answer into exactly three entries.

    Short arrays are padded with no-bug entries; extra entries are dropped
    with a warning.
    """
    value = extract_json(raw, "[")
    warnings: list[str] = []
    if len(value) > BUG_ENTRIES:
        warnings.append(f"response had {len(value)} entries; kept the first {BUG_ENTRIES}")
        value = value[:BUG_ENTRIES]
    entries = [_bug_entry(obj, i) for i, obj in enumerate(value)]
    padded = BUG_ENTRIES - len(entries)
    entries.extend(BugEntry.no_bug() for _ in range(padded))
    return RawBugResponse(tuple(entries), tuple(warnings), padded)


def _ranking_list(value: Any) -> list:
    if isinstance(value, list):
        return value
    if isinstance(value, dict):
        for key in _RANK_CONTAINERS:
            if isinstance(value.get(key), list):
                return value[key]
        lists = [v for v in value.values() if isinstance(v, list)]
        if len(lists) == 1:
            return lists[0]
    raise SchemaViolation("response does not contain a list of ranked issues")


def _rank_value(value: Any, index: int) -> int:
    if isinstance(value, bool):
        raise SchemaViolation("rank must be an integer", index)
    if isinstance(value, int):
        return value
    if isinstance(value, float) and value.is_integer():
        return int(value)
    if isinstance(value, str) and value.strip().isdigit():
        return int(value.strip())
    raise SchemaViolation(f"rank must be an integer, got {value!r}", index)


def _validity(value: Any, index: int) -> Optional[bool]:
    if value is None:
        return None
    if isinstance(value, str) and value.strip().lower() in ("valid", "invalid"):
        return value.strip().lower() == "valid"
    return _as_bool(value, "validity_classification", index)


def parse_ranking_response(raw: str, expected_ids: Iterable[str]) -> RawRankingResponse:
    expected = {str(i) for i in expected_ids}
    if not expected:
        raise ValueError("expected_ids must be non-empty")
    rows = _ranking_list(extract_json(raw, "{["))
    items: list[RankingItem] = []
    seen: set[str] = set()
    for index, obj in enumerate(rows):
        if not isinstance(obj, dict):
            raise SchemaViolation("ranked item is not an object", index)
        data = _normalize_keys(obj, _RANK_KEYS)
        if data.get("issue_id") is None or data.get("rank") is None:
            raise SchemaViolation("ranked item needs issue_id and rank", index)
        issue_id = str(data["issue_id"])
        if issue_id not in expected:
            raise UnknownIssueId(f"unknown issue id {issue_id!r}", index)
        if issue_id in seen:
            raise SchemaViolation(f"issue id {issue_id!r} ranked twice", index)
        seen.add(issue_id)
        confidence = data.get("confidence_rating")
        if confidence is not None and not isinstance(confidence, (str, int, float)):
            confidence = json.dumps(confidence)
        items.append(
            RankingItem(
                issue_id=issue_id,
                rank=_rank_value(data["rank"], index),
                reasoning=str(data.get("reasoning") or ""),
                validity_classification=_validity(data.get("validity_classification"), index),
                confidence_rating=confidence,
                validity_report=str(data.get("validity_report") or ""),
            )
        )
    ranks = sorted(i.rank for i in items)
    if ranks != list(range(1, len(expected) + 1)):
        raise RankNotPermutation(
            f"ranks {ranks} are not a permutation of 1..{len(expected)}"
        )
    return RawRankingResponse(tuple(items))
