"""Pipeline phases over an output directory.

Each phase reads the previous phase's files from ``config.output_dir`` and
writes its own, so phases can run one by one or chained by :func:`run`.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime, timezone
from pathlib import Path
from typing import Callable, Optional

from ._io import atomic_write_json, atomic_write_text
from .config import PipelineConfig
from .coverage import (
    SegmentStats,
    UncoveredSegment,
    extract_segments,
    load_coverage,
    segment_stats,
    segments_from_json,
    segments_to_json,
)
from .errors import InputError
from .harness import PatchHarness, RegressionResult, load_regression, store_regression
from .issues import GenerationRunSummary, IssueReport, generate_issues, load_issues
from .llm.backends import LiveBackend, LlmBackend, MockBackend, load_fixtures
from .llm.gateway import AuditLog, Gateway, RetryPolicy
from .metrics import MetricsReport, evaluate_project, load_golden
from .ranking import RankedIssueList, apply_regression_penalty, llm_rank, rule_rank
from .report import write_reports

log = logging.getLogger(__name__)

SEGMENTS = "segments.json"
STATS = "segment_stats.json"
ISSUES = "issues.jsonl"
GEN_SUMMARY = "generation_summary.json"
REGRESSION = "regression.jsonl"
RANKING = "ranking.json"
REPORTS = "reports"
METRICS_JSON = "metrics.json"
METRICS_CSV = "metrics.csv"
AUDIT = "audit.jsonl"
MANIFEST = "manifest.json"


def make_clock(config: PipelineConfig) -> Callable[[], datetime]:
    """Timestamps are pinned for the mock backend (or when
    ``SOURCE_DATE_EPOCH`` is set) so that runs are reproducible."""
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    if epoch is None and config.backend == "mock":
        epoch = "0"
    if epoch is not None:
        fixed = datetime.fromtimestamp(int(epoch), tz=timezone.utc)
        return lambda: fixed
    return lambda: datetime.now(timezone.utc)


def make_backend(config: PipelineConfig) -> LlmBackend:
    if config.backend == "live":
        return LiveBackend(config.endpoint, timeout=config.llm_timeout, sampling=config.sampling)
    fixtures = load_fixtures(config.mock_fixtures) if config.mock_fixtures else None
    return MockBackend(config.seed, fixtures, ranking=config.mock_ranking)


def make_gateway(config: PipelineConfig, backend: Optional[LlmBackend] = None) -> Gateway:
    out = Path(config.output_dir)
    return Gateway(
        backend or make_backend(config),
        audit_log=AuditLog(out / AUDIT, clock=make_clock(config)),
        retry=RetryPolicy(max_attempts=config.max_attempts),
        max_in_flight=config.max_in_flight,
        byte_budget=config.byte_budget,
    )


def _read_json(path: Path, what: str):
    try:
        return json.loads(path.read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise InputError(f"{what} not found at {path}; run the earlier phase first") from None
    except json.JSONDecodeError as exc:
        raise InputError(f"{what} at {path} is not valid JSON: {exc}") from exc


def load_segments(out: Path) -> list[UncoveredSegment]:
    return segments_from_json(_read_json(out / SEGMENTS, "segment bundle"))


def load_ranking(out: Path) -> RankedIssueList:
    return RankedIssueList.from_dict(_read_json(out / RANKING, "ranking"))


def _load_issue_store(out: Path) -> list[IssueReport]:
    if not (out / ISSUES).exists():
        raise InputError(f"issue store not found at {out / ISSUES}; run generate first")
    return load_issues(out / ISSUES)


# -- phases ------------------------------------------------------------------


def analyze(config: PipelineConfig) -> tuple[list[UncoveredSegment], SegmentStats]:
    config.validate(need=("coverage_file", "source_root"))
    report = load_coverage(config.coverage_file, config.coverage_format, config.project_name or None)
    if not config.project_name:
        config.project_name = report.project_name
    segments = extract_segments(report, config.source_root, config.context_lines)
    stats = segment_stats(segments)
    out = Path(config.output_dir)
    atomic_write_json(out / SEGMENTS, segments_to_json(segments))
    atomic_write_json(out / STATS, {"project": config.project_name, **stats.to_dict()})
    return segments, stats


def generate(config: PipelineConfig, gateway: Optional[Gateway] = None) -> tuple[list[IssueReport], GenerationRunSummary]:
    config.validate()
    out = Path(config.output_dir)
    segments = load_segments(out)
    if not segments:
        summary = GenerationRunSummary()
        atomic_write_text(out / ISSUES, "")
        atomic_write_json(out / GEN_SUMMARY, summary.to_dict())
        return [], summary
    return generate_issues(
        segments,
        config.project_name,
        gateway or make_gateway(config),
        store_path=out / ISSUES,
        summary_path=out / GEN_SUMMARY,
        model_id=config.model_id,
        concurrency=config.generation_concurrency,
        clock=make_clock(config),
    )


def harness(config: PipelineConfig, issue_ids: Optional[list[str]] = None) -> dict[str, RegressionResult]:
    """Evaluate proposed fixes of the rule-selected top-k (or ``issue_ids``)."""
    config.validate(need=("test_command",))
    if config.test_root is None or not Path(config.test_root).is_dir():
        raise InputError("project_root/source_root must point to the project checkout")
    out = Path(config.output_dir)
    issues = _load_issue_store(out)
    segments = {s.segment_id: s for s in load_segments(out)}
    by_id = {i.issue_id: i for i in issues}
    if issue_ids is None:
        issue_ids = rule_rank(issues, config.top_k, config.project_name).rule_order() if issues else []
    patch_harness = PatchHarness(
        config.test_root, config.test_command, timeout=config.test_timeout, keep_artifacts=config.keep_artifacts
    )

    def one(issue_id: str) -> RegressionResult:
        issue = by_id[issue_id]
        segment = segments.get(issue.segment_ref)
        if segment is None:
            raise InputError(f"issue {issue_id} refers to unknown segment {issue.segment_ref}")
        return patch_harness.evaluate(segment, issue)

    if config.harness_concurrency > 1:
        with ThreadPoolExecutor(max_workers=config.harness_concurrency) as pool:
            results = list(pool.map(one, issue_ids))
    else:
        results = [one(i) for i in issue_ids]
    store_regression(out / REGRESSION, results)
    return {r.issue_id: r for r in results}


def rank(config: PipelineConfig, gateway: Optional[Gateway] = None) -> RankedIssueList:
    config.validate()
    out = Path(config.output_dir)
    issues = _load_issue_store(out)
    selected = rule_rank(issues, config.top_k, config.project_name)
    regression: dict[str, RegressionResult] = {}
    if config.enable_harness:
        wanted = selected.rule_order()
        if (out / REGRESSION).exists():
            regression = load_regression(out / REGRESSION)
        if not set(wanted) <= set(regression):
            regression = harness(config, wanted)
    ranked = selected
    if selected.entries:
        by_id = {i.issue_id: i for i in issues}
        ranked = llm_rank(selected, by_id, regression, gateway or make_gateway(config), model_id=config.model_id)
    if config.enable_regression_penalty:
        ranked = apply_regression_penalty(ranked, regression)
    atomic_write_json(out / RANKING, ranked.to_dict())
    return ranked


def evaluate(config: PipelineConfig, golden_file: Optional[Path] = None) -> MetricsReport:
    golden_file = golden_file or config.golden_file
    if golden_file is None:
        raise InputError("no golden annotation file given")
    out = Path(config.output_dir)
    ranked = load_ranking(out)
    goldens = {g.project_name: g for g in load_golden(golden_file)}
    golden = goldens.get(ranked.project_name)
    if golden is None:
        if len(goldens) != 1:
            raise InputError(f"golden file has no annotation for project {ranked.project_name!r}")
        golden = next(iter(goldens.values()))
    report = MetricsReport(config.relevance_mode)
    report.rows.append(evaluate_project(ranked, golden, "rule", config.relevance_mode))
    if ranked.has_llm_ranks:
        report.rows.append(evaluate_project(ranked, golden, "llm", config.relevance_mode))
    atomic_write_json(out / METRICS_JSON, report.to_dict())
    atomic_write_text(out / METRICS_CSV, report.to_csv())
    return report


def report(config: PipelineConfig) -> list[Path]:
    out = Path(config.output_dir)
    ranked = load_ranking(out)
    issues = {i.issue_id: i for i in _load_issue_store(out)}
    segments = {s.segment_id: s for s in load_segments(out)}
    regression = load_regression(out / REGRESSION) if (out / REGRESSION).exists() else {}
    return write_reports(out / REPORTS, ranked, issues, segments, regression)


# -- full run ------------------------------------------------------------------

PHASE_OUTPUTS = {
    "analyze": (SEGMENTS, STATS),
    "generate": (ISSUES, GEN_SUMMARY),
    "rank": (RANKING,),
    "report": (REPORTS,),
}


def _digest(path: Path) -> str:
    digest = hashlib.sha256()
    if path.is_dir():
        for child in sorted(path.rglob("*")):
            if child.is_file():
                digest.update(child.relative_to(path).as_posix().encode() + b"\0" + child.read_bytes())
    else:
        digest.update(path.read_bytes())
    return digest.hexdigest()


def _manifest(out: Path) -> dict:
    path = out / MANIFEST
    if path.exists():
        try:
            return json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError:
            log.warning("ignoring unreadable manifest %s", path)
    return {}


def _phase_done(manifest: dict, fingerprint: str, phase: str, out: Path) -> bool:
    if manifest.get("config_fingerprint") != fingerprint:
        return False
    entry = manifest.get("phases", {}).get(phase)
    if not entry or entry.get("status") != "done":
        return False
    return all((out / name).exists() and _digest(out / name) == digest for name, digest in entry["outputs"].items())


def run(config: PipelineConfig, gateway: Optional[Gateway] = None) -> dict:
    """analyze -> generate -> rank -> report, skipping phases a previous
    (interrupted) run with the same configuration already completed."""
    config.validate(need=("coverage_file", "source_root"))
    out = Path(config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    fingerprint = config.fingerprint()
    previous = _manifest(out)
    manifest = {
        "config_fingerprint": fingerprint,
        "project": config.project_name,
        "backend": config.backend,
        "seed": config.seed,
        "phases": {},
    }
    if previous.get("config_fingerprint") == fingerprint:
        manifest["phases"] = dict(previous.get("phases", {}))
    phases = {
        "analyze": lambda: analyze(config),
        "generate": lambda: generate(config, gateway),
        "rank": lambda: rank(config, gateway),
        "report": lambda: report(config),
    }
    invalidate = False
    for name, step in phases.items():
        if not invalidate and _phase_done(previous, fingerprint, name, out):
            log.info("phase %s already complete; skipping", name)
            if name == "analyze" and not config.project_name:
                config.project_name = _read_json(out / STATS, "segment stats")["project"]
            continue
        # everything downstream of a re-run phase is recomputed
        invalidate = True
        manifest["phases"].pop(name, None)
        step()
        manifest["project"] = config.project_name
        manifest["phases"][name] = {
            "status": "done",
            "outputs": {n: _digest(out / n) for n in PHASE_OUTPUTS[name]},
        }
        atomic_write_json(out / MANIFEST, manifest)
    manifest["project"] = config.project_name
    atomic_write_json(out / MANIFEST, manifest)
    return manifest
