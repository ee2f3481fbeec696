"""Issue generation: one bug-identification prompt per uncovered segment,
normalized into persistent :class:`IssueReport` records."""

from __future__ import annotations

import json
import logging
import re
import threading
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence

from ._io import atomic_write_json, atomic_write_jsonl, dumps
from .coverage import UncoveredSegment
from .errors import CorruptRecord, EmptySegment, SchemaViolation, StorageError
from .llm.gateway import Gateway, utc_now
from .llm.prompts import DEFAULT_MODEL_ID, render_bug_prompt
from .llm.schema import SEVERITIES, BugEntry, RawBugResponse, parse_bug_response

log = logging.getLogger(__name__)

OS_SYNONYMS = {
    "osx": "macos",
    "os x": "macos",
    "mac os": "macos",
    "mac os x": "macos",
    "macosx": "macos",
    "mac": "macos",
    "darwin": "macos",
    "macos": "macos",
    "win": "windows",
    "win32": "windows",
    "win64": "windows",
    "windows": "windows",
    "linux": "linux",
    "gnu/linux": "linux",
}


@dataclass(frozen=True)
class OsImpact:
    kind: str
    labels: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        if self.kind == "all":
            if self.labels:
                raise ValueError("an 'all' OS impact carries no labels")
        elif self.kind == "listed":
            if not self.labels:
                raise ValueError("a listed OS impact needs at least one label")
            object.__setattr__(self, "labels", tuple(sorted(set(self.labels))))
        else:
            raise ValueError(f"unknown OS impact kind {self.kind!r}")

    @classmethod
    def from_labels(cls, raw: str | Iterable[str] | None) -> "OsImpact":
        """Canonicalize raw labels: case-fold, map synonyms, keep unknown
        labels verbatim; any literal ``all`` makes the impact universal."""
        if raw is None:
            raw = ()
        if isinstance(raw, str):
            raw = (raw,)
        labels = []
        for label in raw:
            folded = " ".join(label.strip().lower().split())
            if not folded:
                continue
            if folded == "all":
                return cls("all")
            labels.append(OS_SYNONYMS.get(folded, label.strip()))
        if not labels:
            labels = ["unspecified"]
        return cls("listed", tuple(labels))

    def to_json(self) -> str | list[str]:
        return "all" if self.kind == "all" else list(self.labels)

    @classmethod
    def from_json(cls, value: str | list[str]) -> "OsImpact":
        if value == "all":
            return cls("all")
        return cls("listed", tuple(value))


@dataclass(frozen=True)
class IssueReport:
    issue_id: str
    project_name: str
    segment_ref: str
    title: str
    summary: str
    severity: str
    os_impact: OsImpact
    body: str
    inconsistent_documentation: bool
    fixed_code: Optional[str]
    word_count: int
    created_at: str
    taxonomy_label: Optional[str] = None

    def __post_init__(self) -> None:
        if self.severity not in SEVERITIES:
            raise ValueError(f"invalid severity {self.severity!r}")
        if self.word_count != word_count(self.body):
            raise ValueError("word_count does not match body")

    def to_dict(self) -> dict:
        data = asdict(self)
        data["os_impact"] = self.os_impact.to_json()
        return data

    @classmethod
    def from_dict(cls, data: dict) -> "IssueReport":
        data = dict(data)
        data["os_impact"] = OsImpact.from_json(data["os_impact"])
        return cls(**data)


@dataclass
class GenerationRunSummary:
    segments_processed: int = 0
    segments_skipped: int = 0
    issues_generated: int = 0
    issues_with_bug: int = 0
    no_bug_entries: int = 0
    padded_entries: int = 0
    schema_failures: int = 0
    warnings: int = 0
    per_severity: dict[str, int] = field(default_factory=lambda: {s: 0 for s in SEVERITIES})

    def to_dict(self) -> dict:
        return asdict(self)


def word_count(body: str) -> int:
    return len(body.split())


def issue_id_for(segment_id: str, entry_index: int) -> str:
    return f"{segment_id}-{entry_index}"


def report_from_entry(
    entry: BugEntry, segment: UncoveredSegment, project_name: str, entry_index: int, created_at: str
) -> IssueReport:
    return IssueReport(
        issue_id=issue_id_for(segment.segment_id, entry_index),
        project_name=project_name,
        segment_ref=segment.segment_id,
        title=entry.title or "",
        summary=entry.summary or "",
        severity=entry.bug_severity,
        os_impact=OsImpact.from_labels(entry.os),
        body=entry.generated_issue or "",
        inconsistent_documentation=bool(entry.inconsistent_documentation),
        fixed_code=entry.fixed_code,
        word_count=word_count(entry.generated_issue or ""),
        created_at=created_at,
    )


# -- persistence -------------------------------------------------------------


def store_issues(path: str | Path, reports: Iterable[IssueReport]) -> None:
    try:
        atomic_write_jsonl(path, (r.to_dict() for r in reports))
    except OSError as exc:
        raise StorageError(f"cannot write issue store {path}: {exc}") from exc


def load_issues(path: str | Path) -> list[IssueReport]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise StorageError(f"cannot read issue store {path}: {exc}") from exc
    reports = []
    for lineno, line in enumerate(text.split("\n"), 1):
        if not line.strip():
            continue
        try:
            reports.append(IssueReport.from_dict(json.loads(line)))
        except (ValueError, TypeError, KeyError) as exc:
            raise CorruptRecord(str(path), lineno, str(exc)) from exc
    return reports


class _Journal:
    """Per-segment progress of a generation run, used to resume after a
    crash.  A torn final line (crash mid-append) is ignored."""

    def __init__(self, path: Path):
        self.path = path
        self._lock = threading.Lock()

    def load(self) -> dict[str, dict]:
        if not self.path.exists():
            return {}
        done: dict[str, dict] = {}
        text = self.path.read_text(encoding="utf-8")
        complete, _, torn = text.rpartition("\n")
        if torn:
            # crash mid-append: drop the partial line so new records start clean
            log.warning("dropping torn journal record at end of %s", self.path)
            with open(self.path, "w", encoding="utf-8") as fh:
                fh.write(complete + "\n" if complete else "")
        for lineno, line in enumerate(complete.split("\n"), 1):
            if not line.strip():
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError:
                raise CorruptRecord(str(self.path), lineno, "invalid JSON") from None
            done[record["segment_id"]] = record
        return done

    def append(self, record: dict) -> None:
        with self._lock:
            try:
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(dumps(record) + "\n")
            except OSError as exc:
                raise StorageError(f"cannot append to journal {self.path}: {exc}") from exc


def journal_path(store_path: str | Path) -> Path:
    store_path = Path(store_path)
    return store_path.with_name(store_path.name + ".journal")


def _process(
    segment: UncoveredSegment,
    project_name: str,
    gateway: Gateway,
    model_id: str,
    clock: Callable[[], datetime],
) -> dict:
    try:
        request = render_bug_prompt(project_name, segment, model_id=model_id)
    except EmptySegment as exc:
        return {"segment_id": segment.segment_id, "status": "skipped", "reason": str(exc)}
    try:
        parsed: RawBugResponse = gateway.complete_parsed(request, parse_bug_response)
    except SchemaViolation as exc:
        log.warning("segment %s: %s", segment.segment_id, exc)
        return {"segment_id": segment.segment_id, "status": "schema-failure", "reason": str(exc)}
    return {
        "segment_id": segment.segment_id,
        "status": "ok",
        "created_at": clock().isoformat(),
        "entries": [e.to_dict() for e in parsed.entries],
        "padded": parsed.padded,
        "warnings": list(parsed.warnings),
    }


def _entry_from_dict(data: dict) -> BugEntry:
    if not data.get("bug_found"):
        return BugEntry.no_bug()
    os_value = data["os"]
    return BugEntry(**{**data, "os": os_value if isinstance(os_value, str) else tuple(os_value)})


def generate_issues(
    segments: Sequence[UncoveredSegment],
    project_name: str,
    gateway: Gateway,
    *,
    store_path: str | Path | None = None,
    summary_path: str | Path | None = None,
    model_id: str = DEFAULT_MODEL_ID,
    concurrency: int = 1,
    clock: Callable[[], datetime] = utc_now,
) -> tuple[list[IssueReport], GenerationRunSummary]:
    """Prompt once per segment and materialize every reported bug.

    When ``store_path`` is given, progress is journaled next to it and a
    re-run after a crash only prompts for the segments not yet answered.
    """
    if not segments:
        raise ValueError("no segments to process")
    journal = _Journal(journal_path(store_path)) if store_path is not None else None
    done = journal.load() if journal is not None else {}
    pending = [s for s in segments if s.segment_id not in done]
    if done:
        log.info("resuming: %d of %d segments already answered", len(segments) - len(pending), len(segments))

    def work(segment: UncoveredSegment) -> dict:
        record = _process(segment, project_name, gateway, model_id, clock)
        if journal is not None:
            journal.append(record)
        return record

    if concurrency > 1:
        with ThreadPoolExecutor(max_workers=concurrency) as pool:
            results = list(pool.map(work, pending))
    else:
        results = [work(s) for s in pending]
    done.update((r["segment_id"], r) for r in results)

    summary = GenerationRunSummary()
    reports: list[IssueReport] = []
    for segment in sorted(segments, key=lambda s: (s.path, s.start_line)):
        record = done[segment.segment_id]
        if record["status"] == "skipped":
            summary.segments_skipped += 1
            continue
        summary.segments_processed += 1
        if record["status"] == "schema-failure":
            summary.schema_failures += 1
            continue
        summary.padded_entries += record["padded"]
        summary.warnings += len(record["warnings"])
        for index, raw in enumerate(record["entries"]):
            entry = _entry_from_dict(raw)
            if not entry.bug_found:
                summary.no_bug_entries += 1
                continue
            report = report_from_entry(entry, segment, project_name, index, record["created_at"])
            reports.append(report)
            summary.issues_generated += 1
            summary.issues_with_bug += 1
            summary.per_severity[report.severity] += 1

    if store_path is not None:
        store_issues(store_path, reports)
        if summary_path is not None:
            atomic_write_json(summary_path, summary.to_dict())
        # the store is complete; the journal is only needed until then
        journal.path.unlink(missing_ok=True)
    elif summary_path is not None:
        atomic_write_json(summary_path, summary.to_dict())
    return reports, summary
