import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sparql_silhouette.errors import EmptyDataset
from sparql_silhouette.metrics import (
    EvalReport,
    QuestionResult,
    answer_match,
    macro_metrics,
    prf1,
    wholeset_f1,
)

answer_set = st.sets(st.sampled_from("abcdefgh"), max_size=5)


def test_prf1_perfect():
    assert prf1({"a", "b"}, {"a", "b"}) == (1.0, 1.0, 1.0)


def test_prf1_both_empty():
    assert prf1(set(), set()) == (1.0, 1.0, 1.0)


def test_prf1_gold_empty_only():
    p, r, f = prf1(set(), {"a"})
    assert (p, r, f) == (0.0, 0.0, 0.0)


def test_prf1_prediction_empty_only():
    p, r, f = prf1({"a"}, set())
    assert (p, r, f) == (0.0, 0.0, 0.0)


def test_prf1_partial_overlap():
    p, r, f = prf1({"a", "b", "c", "d"}, {"a", "b", "e"})
    assert p == pytest.approx(2 / 3)
    assert r == pytest.approx(1 / 2)
    assert f == pytest.approx(4 / 7)


@settings(max_examples=200, deadline=None)
@given(answer_set, answer_set)
def test_prf1_bounds_and_am_implies_f1(gold, pred):
    p, r, f = prf1(gold, pred)
    assert 0.0 <= p <= 1.0 and 0.0 <= r <= 1.0 and 0.0 <= f <= 1.0
    if answer_match(gold, pred):
        assert f == 1.0


def test_answer_match():
    assert answer_match({"a"}, {"a"}) == 1
    assert answer_match({"a", "b"}, {"a"}) == 0
    assert answer_match(set(), set()) == 1


def make_results(rows):
    return [QuestionResult.compute(f"q{i}", g, p) for i, (g, p) in enumerate(rows)]


def test_macro_metrics_all_perfect():
    results = make_results([({"a"}, {"a"}), ({"b"}, {"b"})])
    assert macro_metrics(results, False) == (1.0, 1.0, 1.0)
    assert macro_metrics(results, True) == (1.0, 1.0, 1.0)


def test_macro_metrics_qald_empty_prediction():
    results = make_results([({"a"}, {"a"}), ({"b"}, {"b"}), ({"c"}, set())])
    p_plain, _, f_plain = macro_metrics(results, False)
    p_qald, _, f_qald = macro_metrics(results, True)
    assert p_plain == pytest.approx(2 / 3)
    assert p_qald == pytest.approx(1.0)
    assert f_plain == f_qald == pytest.approx(2 / 3)


def test_macro_metrics_empty_dataset():
    with pytest.raises(EmptyDataset):
        macro_metrics([], False)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(answer_set, answer_set), min_size=1, max_size=8))
def test_qald_macro_f1_dominates(rows):
    results = make_results(rows)
    _, _, f_plain = macro_metrics(results, False)
    p_plain, _, _ = macro_metrics(results, False)
    p_qald, _, f_qald = macro_metrics(results, True)
    assert f_qald >= f_plain - 1e-12
    assert p_qald >= p_plain - 1e-12


def test_wholeset_f1():
    assert wholeset_f1(1.0, 1.0) == 1.0
    assert wholeset_f1(0.5, 0.5) == 0.5
    assert wholeset_f1(0.0, 0.0) == 0.0


def test_wholeset_f1_published_consistency():
    # harmonic mean of the table's own P/R columns reproduces its F1
    assert wholeset_f1(0.8311, 0.8304) == pytest.approx(0.8308, abs=5e-4)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1))
def test_wholeset_f1_bounded_by_max(p, r):
    assert wholeset_f1(p, r) <= max(p, r) + 1e-12


def test_eval_report_aggregates():
    results = make_results([({"a"}, {"a"}), ({"b"}, set()), (set(), set())])
    report = EvalReport.compute(results)
    assert report.n_questions == 3
    assert report.n_empty_predictions == 2
    assert report.am_rate == pytest.approx(2 / 3)
    assert report.macro_precision == pytest.approx((1 + 0 + 1) / 3)
    assert report.macro_precision_qald == pytest.approx(1.0)
    assert report.wholeset_f1 == pytest.approx(
        wholeset_f1(report.macro_precision, report.macro_recall)
    )
    payload = report.to_dict()
    assert len(payload["per_question"]) == 3
    assert payload["macro_f1"] == report.macro_f1
