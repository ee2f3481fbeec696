"""Coverage ingestion and uncovered-segment extraction.

Coverage reports are normalized into :class:`CoverageReport` (per-file
executable and missing line sets).  Segments are maximal runs of missing
lines; two missing lines belong to the same run when only non-executable
lines (blank lines, comments, anything absent from ``executable_lines``)
sit between them.
"""

from __future__ import annotations

import hashlib
import json
import re
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import IO, Iterable, Sequence

from .errors import LineOutOfRange, MissingSourceFile, ParseError, UnsupportedFormat

DEFAULT_CONTEXT_LINES = 10
FORMATS = ("canonical-json", "lcov", "slipcover-json")

_LINE_RE = re.compile(r"[^\n]*\n|[^\n]+\Z")


@dataclass(frozen=True)
class FileCoverage:
    path: str
    executable_lines: tuple[int, ...]
    missing_lines: tuple[int, ...]

    def __post_init__(self) -> None:
        for name in ("executable_lines", "missing_lines"):
            lines = getattr(self, name)
            if any(b <= a for a, b in zip(lines, lines[1:])):
                raise ParseError(f"{self.path}: {name} must be strictly ascending")
            if lines and lines[0] < 1:
                raise ParseError(f"{self.path}: line numbers must be >= 1")
        extra = set(self.missing_lines).difference(self.executable_lines)
        if extra:
            raise ParseError(
                f"{self.path}: missing lines not executable: {sorted(extra)[:5]}"
            )


@dataclass(frozen=True)
class CoverageReport:
    project_name: str
    files: tuple[FileCoverage, ...] = ()

    def __post_init__(self) -> None:
        seen: set[str] = set()
        for fc in self.files:
            if fc.path in seen:
                raise ParseError(f"duplicate file entry: {fc.path}")
            seen.add(fc.path)

    def to_dict(self) -> dict:
        return {
            "project": self.project_name,
            "files": [
                {
                    "path": f.path,
                    "executable_lines": list(f.executable_lines),
                    "missing_lines": list(f.missing_lines),
                }
                for f in self.files
            ],
        }


@dataclass(frozen=True)
class UncoveredSegment:
    segment_id: str
    path: str
    start_line: int
    end_line: int
    body: str
    context_before: str = ""
    context_after: str = ""
    line_count: int = field(default=0)

    def __post_init__(self) -> None:
        if self.start_line > self.end_line:
            raise ValueError(f"start_line {self.start_line} > end_line {self.end_line}")
        expected = self.end_line - self.start_line + 1
        if self.line_count == 0:
            object.__setattr__(self, "line_count", expected)
        if self.line_count != expected:
            raise ValueError("line_count disagrees with start/end lines")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "UncoveredSegment":
        return cls(**data)


@dataclass(frozen=True)
class SegmentStats:
    segment_count: int
    max_lines: int
    min_lines: int
    mean_lines: float

    def to_dict(self) -> dict:
        return asdict(self)


def segment_id_for(path: str, start_line: int, end_line: int) -> str:
    digest = hashlib.sha1(f"{path}\0{start_line}\0{end_line}".encode()).hexdigest()
    return f"seg-{digest[:12]}"


def split_lines(text: str) -> list[str]:
    """Split on ``\\n`` only, keeping line endings (``str.splitlines`` also
    breaks on form feeds and other separators that coverage tools ignore)."""
    return _LINE_RE.findall(text)


# -- parsing -----------------------------------------------------------------


def _as_text(stream: IO | bytes | str) -> str:
    data = stream if isinstance(stream, (bytes, str)) else stream.read()
    if isinstance(data, bytes):
        try:
            data = data.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError(f"coverage file is not UTF-8: {exc}") from exc
    return data


def _int_list(value, where: str) -> tuple[int, ...]:
    if not isinstance(value, list) or not all(
        isinstance(v, int) and not isinstance(v, bool) for v in value
    ):
        raise ParseError(f"{where}: expected a list of integers")
    return tuple(value)


def _parse_canonical(text: str, project_name: str | None) -> CoverageReport:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("files"), list):
        raise ParseError("expected an object with a 'files' array")
    files = []
    for i, entry in enumerate(doc["files"]):
        if not isinstance(entry, dict) or not isinstance(entry.get("path"), str):
            raise ParseError(f"files[{i}]: expected an object with a string 'path'")
        files.append(
            FileCoverage(
                path=entry["path"],
                executable_lines=_int_list(entry.get("executable_lines"), f"files[{i}]"),
                missing_lines=_int_list(entry.get("missing_lines"), f"files[{i}]"),
            )
        )
    name = project_name if project_name is not None else doc.get("project", "")
    return CoverageReport(str(name), tuple(files))


def _parse_lcov(text: str, project_name: str | None) -> CoverageReport:
    hits_by_file: dict[str, dict[int, int]] = {}
    current: dict[int, int] | None = None
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.strip()
        if not line:
            continue
        if line.startswith("SF:"):
            if current is not None:
                raise ParseError(f"line {lineno}: SF before end_of_record")
            current = hits_by_file.setdefault(line[3:], {})
        elif line.startswith("DA:"):
            if current is None:
                raise ParseError(f"line {lineno}: DA outside of a record")
            parts = line[3:].split(",")
            try:
                number, hits = int(parts[0]), int(parts[1])
            except (IndexError, ValueError) as exc:
                raise ParseError(f"line {lineno}: malformed DA record {raw!r}") from exc
            if number < 1:
                raise ParseError(f"line {lineno}: line numbers must be >= 1")
            current[number] = current.get(number, 0) + max(hits, 0)
        elif line == "end_of_record":
            if current is None:
                raise ParseError(f"line {lineno}: end_of_record without SF")
            current = None
        # other record types (TN, FN, BRDA, LF, LH, ...) carry nothing we use
    if current is not None:
        raise ParseError("unterminated record at end of file")
    files = tuple(
        FileCoverage(
            path=path,
            executable_lines=tuple(sorted(hits)),
            missing_lines=tuple(sorted(n for n, h in hits.items() if h == 0)),
        )
        for path, hits in sorted(hits_by_file.items())
    )
    return CoverageReport(project_name or "", files)


def _parse_slipcover(text: str, project_name: str | None) -> CoverageReport:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ParseError(f"invalid JSON: {exc}") from exc
    if not isinstance(doc, dict) or not isinstance(doc.get("files"), dict):
        raise ParseError("expected an object with a 'files' mapping")
    files = []
    for path, entry in sorted(doc["files"].items()):
        if not isinstance(entry, dict):
            raise ParseError(f"{path}: expected an object")
        executed = _int_list(entry.get("executed_lines", []), path)
        missing = _int_list(entry.get("missing_lines", []), path)
        files.append(
            FileCoverage(
                path=path,
                executable_lines=tuple(sorted(set(executed) | set(missing))),
                missing_lines=tuple(sorted(set(missing))),
            )
        )
    return CoverageReport(project_name or "", tuple(files))


_PARSERS = {
    "canonical-json": _parse_canonical,
    "lcov": _parse_lcov,
    "slipcover-json": _parse_slipcover,
}


def parse_coverage(
    report_file: IO | bytes | str, format: str = "canonical-json", project_name: str | None = None
) -> CoverageReport:
    """Parse a coverage report into a :class:`CoverageReport`.

    ``project_name`` overrides the name stored in the report (lcov has none).
    """
    try:
        parser = _PARSERS[format]
    except KeyError:
        raise UnsupportedFormat(f"unsupported coverage format {format!r}; use one of {FORMATS}")
    return parser(_as_text(report_file), project_name)


def load_coverage(path: str | Path, format: str = "canonical-json", project_name: str | None = None) -> CoverageReport:
    with open(path, "rb") as fh:
        return parse_coverage(fh, format, project_name)


# -- extraction --------------------------------------------------------------


def missing_runs(executable_lines: Sequence[int], missing_lines: Sequence[int]) -> list[tuple[int, int]]:
    """Maximal runs of missing lines with non-executable gaps bridged.

    Two consecutive missing lines join the same run exactly when no
    executable line lies strictly between them, i.e. they are neighbours in
    the sorted executable list.
    """
    position = {line: i for i, line in enumerate(executable_lines)}
    runs: list[tuple[int, int]] = []
    start = prev = None
    for line in missing_lines:
        if prev is not None and position[line] == position[prev] + 1:
            prev = line
            continue
        if start is not None:
            runs.append((start, prev))
        start = prev = line
    if start is not None:
        runs.append((start, prev))
    return runs


def read_source(path: Path) -> str:
    with open(path, encoding="utf-8", newline="") as fh:
        return fh.read()


def _file_segments(fc: FileCoverage, source_root: Path, context_lines: int) -> list[UncoveredSegment]:
    if not fc.missing_lines:
        return []
    file_path = source_root / fc.path
    if not file_path.is_file():
        raise MissingSourceFile(fc.path)
    lines = split_lines(read_source(file_path))
    last = max(fc.executable_lines[-1], fc.missing_lines[-1])
    if last > len(lines):
        raise LineOutOfRange(fc.path, last, len(lines))
    out = []
    for start, end in missing_runs(fc.executable_lines, fc.missing_lines):
        out.append(
            UncoveredSegment(
                segment_id=segment_id_for(fc.path, start, end),
                path=fc.path,
                start_line=start,
                end_line=end,
                body="".join(lines[start - 1 : end]),
                context_before="".join(lines[max(0, start - 1 - context_lines) : start - 1]),
                context_after="".join(lines[end : end + context_lines]),
                line_count=end - start + 1,
            )
        )
    return out


def extract_segments(
    report: CoverageReport,
    source_root: str | Path,
    context_lines: int = DEFAULT_CONTEXT_LINES,
    workers: int = 1,
) -> list[UncoveredSegment]:
    """Extract uncovered segments for every file in ``report``.

    Output is sorted by ``(path, start_line)`` regardless of ``workers``.
    """
    if context_lines < 0:
        raise ValueError("context_lines must be non-negative")
    root = Path(source_root)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(lambda fc: _file_segments(fc, root, context_lines), report.files))
    else:
        chunks = [_file_segments(fc, root, context_lines) for fc in report.files]
    segments = [s for chunk in chunks for s in chunk]
    segments.sort(key=lambda s: (s.path, s.start_line))
    return segments


def extract_segments_per_file(
    report: CoverageReport, source_root: str | Path, context_lines: int = DEFAULT_CONTEXT_LINES
) -> tuple[list[UncoveredSegment], dict[str, str]]:
    """Like :func:`extract_segments` but collects per-file failures instead
    of stopping at the first one.  Returns ``(segments, {path: error})``."""
    root = Path(source_root)
    segments: list[UncoveredSegment] = []
    errors: dict[str, str] = {}
    for fc in report.files:
        try:
            segments.extend(_file_segments(fc, root, context_lines))
        except (MissingSourceFile, LineOutOfRange, UnicodeDecodeError) as exc:
            errors[fc.path] = str(exc)
    segments.sort(key=lambda s: (s.path, s.start_line))
    return segments, errors


def segment_stats(segments: Iterable[UncoveredSegment]) -> SegmentStats:
    counts = [s.line_count for s in segments]
    if not counts:
        return SegmentStats(0, 0, 0, 0.0)
    return SegmentStats(len(counts), max(counts), min(counts), sum(counts) / len(counts))


def segments_to_json(segments: Iterable[UncoveredSegment]) -> list[dict]:
    return [s.to_dict() for s in segments]


def segments_from_json(data: list[dict]) -> list[UncoveredSegment]:
    return [UncoveredSegment.from_dict(d) for d in data]
