import json
import math

import pytest
from hypothesis import given, strategies as st

import oracles
from issuespecter.errors import GoldenMismatch, InputError, UnknownId
from issuespecter.metrics import (
    GoldenAnnotation,
    GoldenIssue,
    MetricsReport,
    average_precision,
    err,
    evaluate_ordering,
    evaluate_project,
    load_golden,
    mean_average_precision,
    mrr,
    ndcg_at_k,
    precision_at_k,
    reciprocal_rank,
    stop_probability,
)
from issuespecter.ranking import RankedEntry, RankedIssueList


def ids(n):
    return [f"i{k}" for k in range(n)]


def judged(pattern):
    return ids(len(pattern)), dict(zip(ids(len(pattern)), pattern))


def golden(project, assessments):
    issues = tuple(GoldenIssue(f"i{k}", a, k + 1) for k, a in enumerate(assessments))
    return GoldenAnnotation(project, issues)


def test_precision_examples():
    order, rel = judged([1, 0, 1])
    assert precision_at_k(order, rel, 3) == pytest.approx(2 / 3)
    assert precision_at_k(*judged([1, 1, 1]), 3) == 1.0
    assert precision_at_k(*judged([0, 0, 0]), 2) == 0.0
    # short lists still divide by k
    assert precision_at_k(*judged([1]), 5) == pytest.approx(0.2)


def test_ndcg_examples():
    order, gains = judged([0, 1, 1])
    assert ndcg_at_k(order, gains, 3) == pytest.approx(0.6934, abs=5e-5)
    order, gains = judged([1, 1, 0])
    assert ndcg_at_k(order, gains, 3) == 1.0
    assert ndcg_at_k(*judged([0.4, 1.0]), 1) == pytest.approx(0.4)
    assert ndcg_at_k(*judged([0, 0]), 2) == 0.0


def test_ndcg_ideal_uses_all_judged_gains():
    # a relevant item outside the ranked list still raises the ideal
    gains = {"a": 0, "b": 1}
    assert ndcg_at_k(["a"], gains, 1) == 0.0


def test_mrr_examples():
    assert reciprocal_rank(*judged([0] * 6 + [1, 0, 0, 0])) == pytest.approx(0.1429, abs=5e-5)
    assert reciprocal_rank(*judged([1, 0])) == 1.0
    assert reciprocal_rank(*judged([0, 0])) == 0.0
    assert mrr([judged([1]), judged([0, 1])]) == pytest.approx(0.75)
    assert mrr([]) == 0.0


def test_err_examples():
    assert stop_probability(1) == 0.5
    assert err(*judged([1])) == 0.5
    assert err(*judged([1, 0, 1])) == pytest.approx(0.5833, abs=5e-5)
    assert err(*judged([0, 0, 0])) == 0.0


def test_err_rejects_out_of_range_gain():
    with pytest.raises(ValueError):
        err(*judged([2.0]))
    with pytest.raises(ValueError):
        err(*judged([1]), max_gain=0)


def test_err_with_larger_gain_scale():
    order, gains = judged([3, 0])
    assert err(order, gains, max_gain=3) == pytest.approx(7 / 8)


def test_average_precision_examples():
    assert average_precision(*judged([1, 0, 1])) == pytest.approx(0.8333, abs=5e-5)
    assert average_precision(*judged([1, 1, 0, 0])) == 1.0
    assert average_precision(*judged([0, 0, 0, 1])) == pytest.approx(0.25)
    assert average_precision(*judged([0, 0])) == 0.0
    assert mean_average_precision([judged([1]), judged([0, 1])]) == pytest.approx(0.75)


def test_unknown_ids_rejected():
    for metric in (lambda: precision_at_k(["x"], {}, 1), lambda: ndcg_at_k(["x"], {}, 1),
                   lambda: reciprocal_rank(["x"], {}), lambda: err(["x"], {}),
                   lambda: average_precision(["x"], {})):
        with pytest.raises(UnknownId):
            metric()


def test_k_must_be_positive():
    with pytest.raises(ValueError):
        precision_at_k(*judged([1]), 0)
    with pytest.raises(ValueError):
        ndcg_at_k(*judged([1]), 0)


gains_lists = st.lists(st.sampled_from([0.0, 0.25, 0.5, 1.0]), min_size=1, max_size=8)


@given(gains_lists, st.randoms(use_true_random=False), st.integers(1, 10))
def test_metrics_are_in_unit_range(gains, rnd, k):
    order = ids(len(gains))
    rnd.shuffle(order)
    g = dict(zip(ids(len(gains)), gains))
    rel = {key: int(v > 0) for key, v in g.items()}
    for value in (precision_at_k(order, rel, k), ndcg_at_k(order, g, k), reciprocal_rank(order, rel),
                  err(order, g), average_precision(order, rel)):
        assert 0.0 <= value <= 1.0 + 1e-12


@given(gains_lists, st.randoms(use_true_random=False))
def test_ndcg_is_one_iff_gain_non_increasing(gains, rnd):
    order = ids(len(gains))
    rnd.shuffle(order)
    g = dict(zip(ids(len(gains)), gains))
    if not any(gains):
        return
    value = ndcg_at_k(order, g, len(order))
    in_order = [g[i] for i in order]
    non_increasing = all(a >= b for a, b in zip(in_order, in_order[1:]))
    assert value <= 1.0 + 1e-12
    assert math.isclose(value, 1.0, rel_tol=0, abs_tol=1e-12) == non_increasing


@given(st.lists(st.sampled_from([0, 1]), min_size=2, max_size=8), st.data())
def test_moving_relevant_item_earlier_never_hurts(pattern, data):
    order, rel = judged(pattern)
    relevant = [i for i, r in enumerate(pattern) if r]
    if not relevant:
        return
    src = data.draw(st.sampled_from(relevant))
    if src == 0:
        return
    dst = data.draw(st.integers(0, src - 1))
    moved = list(order)
    moved.insert(dst, moved.pop(src))
    assert reciprocal_rank(moved, rel) >= reciprocal_rank(order, rel)
    assert average_precision(moved, rel) >= average_precision(order, rel) - 1e-12


def test_oracles_agree_on_examples():
    rels = [1, 0, 1]
    assert oracles.precision(rels, 3) == pytest.approx(precision_at_k(*judged(rels), 3))
    assert oracles.err(rels) == pytest.approx(err(*judged(rels)))


# -- golden annotations and evaluation ---------------------------------------


def test_golden_validation():
    with pytest.raises(InputError):
        GoldenIssue("a", "maybe", 1)
    with pytest.raises(InputError):
        GoldenAnnotation("p", (GoldenIssue("a", "valid", 1), GoldenIssue("b", "valid", 3)))
    with pytest.raises(InputError):
        GoldenAnnotation("p", (GoldenIssue("a", "valid", 1), GoldenIssue("a", "valid", 2)))
    with pytest.raises(InputError):
        GoldenAnnotation.from_dict({"project": "p", "issues": [{"issue_id": "a"}]})


def test_golden_relevance_and_gains():
    g = golden("p", ["valid", "investigate", "invalid", "valid"])
    assert g.relevance() == {"i0": 1, "i1": 1, "i2": 0, "i3": 1}
    assert g.graded_gains() == {"i0": 1.0, "i1": 0.75, "i2": 0.5, "i3": 0.25}
    assert g.golden_order() == ids(4)


def test_load_golden_single_and_list(tmp_path):
    one = {"project": "p", "issues": [{"issue_id": "a", "assessment": "valid", "golden_rank": 1}]}
    (tmp_path / "one.json").write_text(json.dumps(one))
    (tmp_path / "many.json").write_text(json.dumps([one, {**one, "project": "q"}]))
    assert [g.project_name for g in load_golden(tmp_path / "one.json")] == ["p"]
    assert [g.project_name for g in load_golden(tmp_path / "many.json")] == ["p", "q"]
    (tmp_path / "bad.json").write_text("{")
    with pytest.raises(InputError):
        load_golden(tmp_path / "bad.json")


def test_golden_equal_to_ranking_gives_all_ones():
    g = golden("p", ["valid"] * 10)
    for mode in ("binary", "graded"):
        row = evaluate_ordering("p", g.golden_order(), g, strategy="rule", relevance_mode=mode)
        # ERR stays below 1 because each stop probability is at most one half
        values = [v for k, v in row.flat().items() if k not in ("project", "strategy", "err")]
        assert all(v == pytest.approx(1.0) for v in values), (mode, row)


def test_rule_versus_llm_mrr_fixture():
    assessments = ["invalid"] * 6 + ["valid"] + ["invalid"] * 3
    issues = tuple(GoldenIssue(f"i{k}", a, k + 1) for k, a in enumerate(assessments))
    g = GoldenAnnotation("httpie", issues)
    rule_entries = [RankedEntry(f"i{k}", k + 1, llm_rank=(1 if k == 6 else k + 2 if k < 6 else k + 1))
                    for k in range(10)]
    ranked = RankedIssueList("httpie", tuple(rule_entries))
    assert evaluate_project(ranked, g, "rule").mrr == pytest.approx(0.14, abs=0.005)
    assert evaluate_project(ranked, g, "llm").mrr == pytest.approx(1.00, abs=0.005)


def test_one_issue_project():
    for assessment, rel in (("valid", 1), ("invalid", 0)):
        g = golden("p", [assessment])
        row = evaluate_ordering("p", ["i0"], g, strategy="rule")
        assert row.p_at[1] == rel and row.mrr == rel and row.ndcg_at[1] in (0.0, 1.0)


def test_golden_mismatch():
    g = golden("p", ["valid"])
    with pytest.raises(GoldenMismatch):
        evaluate_ordering("p", ["i0", "nope"], g, strategy="rule")


def test_llm_strategy_requires_llm_ranks():
    ranked = RankedIssueList("p", (RankedEntry("i0", 1),))
    with pytest.raises(InputError):
        evaluate_project(ranked, golden("p", ["valid"]), "llm")


def test_report_totals_and_csv():
    g1, g2 = golden("a", ["valid", "invalid"]), golden("b", ["invalid", "valid"])
    report = MetricsReport("binary", [
        evaluate_ordering("a", ["i0", "i1"], g1, strategy="rule"),
        evaluate_ordering("b", ["i0", "i1"], g2, strategy="rule"),
    ])
    assert report.totals("rule")["p@1"] == 1.0
    assert report.totals("rule")["mrr"] == 1.5
    lines = report.to_csv().splitlines()
    assert lines[0].startswith("project,strategy,p@1")
    assert lines[-1].startswith("Total,rule,1.0000")
    assert json.loads(json.dumps(report.to_dict()))["totals"]["rule"]["map"] == 1.5
