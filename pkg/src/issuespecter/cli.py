"""Command-line entry point.

Exit codes: 0 success, 2 input/validation error, 3 environment or backend
error, 4 internal error.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path
from typing import Optional, Sequence

from . import pipeline
from .config import load_config
from .errors import EnvironmentFailure, InputError, IssueSpecterError, StorageError

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_ENV = 3
EXIT_INTERNAL = 4

log = logging.getLogger("issuespecter")


def _global_options(parser: argparse.ArgumentParser, suppress: bool) -> None:
    default = argparse.SUPPRESS if suppress else None
    parser.add_argument("--config", type=Path, default=default, help="TOML configuration file")
    parser.add_argument("--output-dir", type=Path, default=default, help="directory for all outputs")
    parser.add_argument("--backend", choices=("live", "mock"), default=default)
    parser.add_argument("--seed", type=int, default=default, help="mock backend seed")
    parser.add_argument(
        "--set", action="append", metavar="KEY=VALUE", default=argparse.SUPPRESS if suppress else [],
        help="override any configuration key (repeatable)",
    )
    parser.add_argument("-v", "--verbose", action="count", default=argparse.SUPPRESS if suppress else 0)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="issuespecter", description="Coverage-guided LLM issue triage.")
    _global_options(parser, suppress=False)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name: str, help: str) -> argparse.ArgumentParser:
        p = sub.add_parser(name, help=help)
        _global_options(p, suppress=True)
        return p

    p = add("analyze", "extract uncovered segments from a coverage report")
    p.add_argument("--coverage", dest="coverage_file", type=Path)
    p.add_argument("--format", dest="coverage_format", choices=("canonical-json", "lcov", "slipcover-json"))
    p.add_argument("--source-root", dest="source_root", type=Path)
    p.add_argument("--project", dest="project_name")
    p.add_argument("--context-lines", dest="context_lines", type=int)

    p = add("generate", "prompt the LLM for bugs in every segment")
    p.add_argument("--project", dest="project_name")

    p = add("rank", "rule-based selection plus LLM re-ranking")
    p.add_argument("--top-k", dest="top_k", type=int)
    p.add_argument("--harness", dest="enable_harness", action="store_true", default=None)
    p.add_argument("--regression-penalty", dest="enable_regression_penalty", action="store_true", default=None)

    p = add("harness", "run the test suite against each proposed fix")
    p.add_argument("--top-k", dest="top_k", type=int)
    p.add_argument("--test-command", dest="test_command")
    p.add_argument("--project-root", dest="project_root", type=Path)

    p = add("eval", "score rankings against golden annotations")
    p.add_argument("--golden", dest="golden_file", type=Path)
    p.add_argument("--relevance-mode", dest="relevance_mode", choices=("binary", "graded"))

    add("report", "write Markdown issue reports and a ranked index")

    p = add("run", "analyze, generate, rank and report in one go")
    p.add_argument("--coverage", dest="coverage_file", type=Path)
    p.add_argument("--format", dest="coverage_format", choices=("canonical-json", "lcov", "slipcover-json"))
    p.add_argument("--source-root", dest="source_root", type=Path)
    p.add_argument("--project", dest="project_name")
    return parser


_NOT_SETTINGS = {"command", "config", "set", "verbose"}


def _overrides(args: argparse.Namespace) -> dict:
    overrides = {k: v for k, v in vars(args).items() if k not in _NOT_SETTINGS and v is not None}
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise InputError(f"--set expects KEY=VALUE, got {item!r}")
        overrides[key.strip().replace("-", "_")] = value
    return overrides


def _print_stats(stats) -> None:
    print(f"segments: {stats.segment_count}  max lines: {stats.max_lines}  "
          f"min lines: {stats.min_lines}  mean lines: {stats.mean_lines:.2f}")


def _print_metrics(report) -> None:
    print(report.to_csv(), end="")


def dispatch(args: argparse.Namespace) -> int:
    config = load_config(args.config, _overrides(args))
    command = args.command
    if command == "analyze":
        _, stats = pipeline.analyze(config)
        _print_stats(stats)
    elif command == "generate":
        _, summary = pipeline.generate(config)
        print(f"segments processed: {summary.segments_processed}  issues: {summary.issues_generated}  "
              f"schema failures: {summary.schema_failures}")
        if summary.schema_failures:
            log.warning("%d segment(s) had unusable LLM output", summary.schema_failures)
    elif command == "rank":
        ranked = pipeline.rank(config)
        for issue_id in ranked.final_order():
            print(issue_id)
        if ranked.llm_status == "rejected":
            log.warning("LLM ranking was rejected; rule ranking only")
    elif command == "harness":
        results = pipeline.harness(config)
        for issue_id, result in results.items():
            print(f"{issue_id}\t{result.status}\t{result.failing_test_count}")
    elif command == "eval":
        _print_metrics(pipeline.evaluate(config))
    elif command == "report":
        paths = pipeline.report(config)
        print(f"wrote {len(paths)} files to {Path(config.output_dir) / pipeline.REPORTS}")
    elif command == "run":
        manifest = pipeline.run(config)
        print(f"done: {', '.join(manifest['phases'])} -> {config.output_dir}")
    return EXIT_OK


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return dispatch(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (EnvironmentFailure, StorageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ENV
    except IssueSpecterError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001
        log.exception("internal error")
        print(f"internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
