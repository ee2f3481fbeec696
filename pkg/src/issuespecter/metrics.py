"""Ranking-quality metrics against golden annotations.

Binary relevance: issues assessed ``valid`` or ``investigate`` count as 1,
``invalid`` as 0.  Graded gains (NDCG and ERR only) come from the golden
rank: ``(n + 1 - golden_rank) / n`` for a project of ``n`` issues.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import GoldenMismatch, InputError, UnknownId
from .ranking import RankedIssueList

ASSESSMENTS = {"valid": 1, "investigate": 1, "invalid": 0}
P_CUTOFFS = (1, 3, 5)
NDCG_CUTOFFS = (1, 3, 5, 10)
RELEVANCE_MODES = ("binary", "graded")


def _check_ids(ranking: Sequence[str], judged: Mapping[str, float]) -> None:
    unknown = [i for i in ranking if i not in judged]
    if unknown:
        raise UnknownId(f"ranked ids without judgement: {unknown}")


def precision_at_k(ranking: Sequence[str], relevance: Mapping[str, int], k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    _check_ids(ranking, relevance)
    return sum(1 for i in ranking[:k] if relevance[i]) / k


def dcg(gains: Iterable[float]) -> float:
    return sum(g / math.log2(i + 1) for i, g in enumerate(gains, 1))


def ndcg_at_k(ranking: Sequence[str], gains: Mapping[str, float], k: int) -> float:
    """DCG@k over IDCG@k; the ideal ordering sorts every judged gain
    descending.  Zero when nothing has positive gain."""
    if k < 1:
        raise ValueError("k must be >= 1")
    _check_ids(ranking, gains)
    if any(g < 0 for g in gains.values()):
        raise ValueError("gains must be non-negative")
    ideal = dcg(sorted(gains.values(), reverse=True)[:k])
    if ideal == 0:
        return 0.0
    return dcg(gains[i] for i in ranking[:k]) / ideal


def reciprocal_rank(ranking: Sequence[str], relevance: Mapping[str, int]) -> float:
    _check_ids(ranking, relevance)
    for position, issue_id in enumerate(ranking, 1):
        if relevance[issue_id]:
            return 1.0 / position
    return 0.0


def mrr(rankings: Sequence[tuple[Sequence[str], Mapping[str, int]]]) -> float:
    if not rankings:
        return 0.0
    return sum(reciprocal_rank(r, rel) for r, rel in rankings) / len(rankings)


def stop_probability(gain: float, max_gain: float = 1.0) -> float:
    return (2.0 ** gain - 1.0) / 2.0 ** max_gain


def err(ranking: Sequence[str], gains: Mapping[str, float], max_gain: float = 1.0) -> float:
    """Expected reciprocal rank under the cascade model."""
    if max_gain <= 0:
        raise ValueError("max_gain must be positive")
    _check_ids(ranking, gains)
    total = 0.0
    still_looking = 1.0
    for position, issue_id in enumerate(ranking, 1):
        g = gains[issue_id]
        if not 0 <= g <= max_gain:
            raise ValueError(f"gain {g} outside [0, {max_gain}]")
        stop = stop_probability(g, max_gain)
        total += still_looking * stop / position
        still_looking *= 1.0 - stop
    return total


def average_precision(ranking: Sequence[str], relevance: Mapping[str, int]) -> float:
    """AP over the ranked list; R is the number of relevant judged items."""
    _check_ids(ranking, relevance)
    total_relevant = sum(1 for v in relevance.values() if v)
    if total_relevant == 0:
        return 0.0
    hits = 0
    acc = 0.0
    for position, issue_id in enumerate(ranking, 1):
        if relevance[issue_id]:
            hits += 1
            acc += hits / position
    return acc / total_relevant


def mean_average_precision(rankings: Sequence[tuple[Sequence[str], Mapping[str, int]]]) -> float:
    if not rankings:
        return 0.0
    return sum(average_precision(r, rel) for r, rel in rankings) / len(rankings)


# -- golden annotations ------------------------------------------------------


@dataclass(frozen=True)
class GoldenIssue:
    issue_id: str
    assessment: str
    golden_rank: int
    taxonomy_label: str | None = None

    def __post_init__(self) -> None:
        if self.assessment not in ASSESSMENTS:
            raise InputError(f"{self.issue_id}: unknown assessment {self.assessment!r}")

    @property
    def relevance(self) -> int:
        return ASSESSMENTS[self.assessment]


@dataclass(frozen=True)
class GoldenAnnotation:
    project_name: str
    issues: tuple[GoldenIssue, ...]

    def __post_init__(self) -> None:
        ranks = sorted(i.golden_rank for i in self.issues)
        if ranks != list(range(1, len(self.issues) + 1)):
            raise InputError(f"{self.project_name}: golden ranks are not a permutation of 1..{len(self.issues)}")
        ids = [i.issue_id for i in self.issues]
        if len(set(ids)) != len(ids):
            raise InputError(f"{self.project_name}: duplicate issue ids in golden annotation")

    def relevance(self) -> dict[str, int]:
        return {i.issue_id: i.relevance for i in self.issues}

    def graded_gains(self) -> dict[str, float]:
        n = len(self.issues)
        return {i.issue_id: (n + 1 - i.golden_rank) / n for i in self.issues}

    def golden_order(self) -> list[str]:
        return [i.issue_id for i in sorted(self.issues, key=lambda i: i.golden_rank)]

    @classmethod
    def from_dict(cls, data: dict) -> "GoldenAnnotation":
        try:
            issues = tuple(
                GoldenIssue(str(i["issue_id"]), i["assessment"], int(i["golden_rank"]), i.get("taxonomy_label"))
                for i in data["issues"]
            )
            return cls(data["project"], issues)
        except (KeyError, TypeError, ValueError) as exc:
            raise InputError(f"malformed golden annotation: {exc}") from exc


def load_golden(path: str | Path) -> list[GoldenAnnotation]:
    """A golden file holds one project object or a list of them."""
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as exc:
        raise InputError(f"cannot read golden file {path}: {exc}") from exc
    items = data if isinstance(data, list) else [data]
    return [GoldenAnnotation.from_dict(d) for d in items]


# -- evaluation --------------------------------------------------------------


@dataclass(frozen=True)
class MetricsRow:
    project: str
    strategy: str
    relevance_mode: str
    p_at: dict[int, float]
    ndcg_at: dict[int, float]
    mrr: float
    err: float
    map: float

    def flat(self) -> dict[str, float | str]:
        row: dict[str, float | str] = {"project": self.project, "strategy": self.strategy}
        row.update({f"p@{k}": v for k, v in self.p_at.items()})
        row.update({f"ndcg@{k}": v for k, v in self.ndcg_at.items()})
        row.update({"mrr": self.mrr, "err": self.err, "map": self.map})
        return row


def evaluate_ordering(
    project: str,
    ordering: Sequence[str],
    golden: GoldenAnnotation,
    *,
    strategy: str,
    relevance_mode: str = "binary",
) -> MetricsRow:
    if relevance_mode not in RELEVANCE_MODES:
        raise ValueError(f"unknown relevance mode {relevance_mode!r}")
    relevance = golden.relevance()
    missing = [i for i in ordering if i not in relevance]
    if missing:
        raise GoldenMismatch(f"{project}: golden annotation lacks {missing}")
    gains = golden.graded_gains() if relevance_mode == "graded" else {k: float(v) for k, v in relevance.items()}
    return MetricsRow(
        project=project,
        strategy=strategy,
        relevance_mode=relevance_mode,
        p_at={k: precision_at_k(ordering, relevance, k) for k in P_CUTOFFS},
        ndcg_at={k: ndcg_at_k(ordering, gains, k) for k in NDCG_CUTOFFS},
        mrr=reciprocal_rank(ordering, relevance),
        err=err(ordering, gains, 1.0),
        map=average_precision(ordering, relevance),
    )


def evaluate_project(
    ranked: RankedIssueList, golden: GoldenAnnotation, strategy: str = "rule", relevance_mode: str = "binary"
) -> MetricsRow:
    if strategy == "rule":
        ordering = ranked.rule_order()
    elif strategy == "llm":
        if not ranked.has_llm_ranks:
            raise InputError(f"{ranked.project_name}: ranking has no LLM ranks")
        ordering = ranked.llm_order()
    else:
        raise ValueError(f"unknown strategy {strategy!r}")
    return evaluate_ordering(ranked.project_name, ordering, golden, strategy=strategy, relevance_mode=relevance_mode)


@dataclass
class MetricsReport:
    relevance_mode: str
    rows: list[MetricsRow] = field(default_factory=list)

    def totals(self, strategy: str) -> dict[str, float]:
        """Column sums over projects, like a "Total" row."""
        out: dict[str, float] = {}
        for row in self.rows:
            if row.strategy != strategy:
                continue
            for key, value in row.flat().items():
                if key not in ("project", "strategy"):
                    out[key] = out.get(key, 0.0) + value
        return out

    def strategies(self) -> list[str]:
        return sorted({r.strategy for r in self.rows}, key=["rule", "llm"].index)

    def to_dict(self) -> dict:
        return {
            "relevance_mode": self.relevance_mode,
            "rows": [r.flat() for r in self.rows],
            "totals": {s: self.totals(s) for s in self.strategies()},
        }

    def to_csv(self) -> str:
        buf = io.StringIO()
        columns = (["project", "strategy"] + [f"p@{k}" for k in P_CUTOFFS]
                   + [f"ndcg@{k}" for k in NDCG_CUTOFFS] + ["mrr", "err", "map"])
        writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
        writer.writeheader()
        for row in self.rows:
            writer.writerow({k: (f"{v:.4f}" if isinstance(v, float) else v) for k, v in row.flat().items()})
        for strategy in self.strategies():
            total = {k: f"{v:.4f}" for k, v in self.totals(strategy).items()}
            writer.writerow({"project": "Total", "strategy": strategy, **total})
        return buf.getvalue()
