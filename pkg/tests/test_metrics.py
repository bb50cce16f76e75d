import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import check_aggregate_fixture, load_published_fixture
from skillseq.metrics import (
    MetricReport,
    RawScoreTable,
    bleu,
    normalize,
    rouge_l,
    rouge_n,
    text_tokens,
    token_f1,
)


def toks(s):
    return s.split()


def test_rouge1_hand_count():
    f = rouge_n(toks("the cat sat"), toks("the cat ran"), 1)
    assert f == pytest.approx(2 / 3, abs=1e-4)


def test_rouge2_hand_count():
    assert rouge_n(toks("a b c"), toks("a b d"), 2) == pytest.approx(0.5)


def test_rouge_identical():
    assert rouge_n(toks("x y z"), toks("x y z"), 1) == 1.0
    assert rouge_l(toks("x y z"), toks("x y z")) == 1.0


def test_rouge_no_ngrams():
    assert rouge_n([], toks("a"), 1) == 0.0
    assert rouge_n(toks("a"), toks("a b"), 2) == 0.0


def test_rouge_l_hand_lcs():
    assert rouge_l(toks("a b c d"), toks("a c b d")) == pytest.approx(0.75)


def test_rouge_l_disjoint():
    assert rouge_l(toks("a b"), toks("c d")) == 0.0


def test_bleu_identical_corpus():
    cands = [toks("the cat sat on the mat"), toks("a b c d e")]
    assert bleu(cands, [list(c) for c in cands]) == pytest.approx(1.0)


def test_bleu_empty_candidate():
    assert bleu([[]], [toks("a b")]) == 0.0


def test_bleu_clipped_unigram():
    # "the the the" vs "the cat": count of "the" clips to 1, so p1 = 1/3
    import math

    cand, ref = toks("the the the"), toks("the cat")
    score = bleu([cand], [ref])
    # n=1: 1/3. n=2: cand bigrams (the,the)x2, ref has none -> 0 -> smoothed 1/3.
    # n=3: 1 cand trigram, 0 matches -> smoothed 1/2. n=4: none -> smoothed 1/1.
    expect = math.exp((math.log(1 / 3) + math.log(1 / 3) + math.log(1 / 2) + math.log(1)) / 4)
    expect *= 1.0  # len(cand)=3 > len(ref)=2, no brevity penalty
    assert score == pytest.approx(expect)


def test_bleu_rejects_mismatched_or_empty():
    with pytest.raises(ValueError):
        bleu([toks("a")], [])
    with pytest.raises(ValueError):
        bleu([], [])


def test_token_f1_hand_value():
    assert token_f1(toks("the answer"), toks("answer")) == pytest.approx(2 / 3, abs=1e-4)


def test_token_f1_edges():
    assert token_f1(toks("a b"), toks("a b")) == 1.0
    assert token_f1(toks("a"), toks("b")) == 0.0
    assert token_f1([], []) == 1.0
    assert token_f1([], toks("a")) == 0.0


def test_text_tokens_convention():
    assert text_tokens("Hello, world!") == ["hello", ",", "world", "!"]
    assert text_tokens("A  b\tC") == ["a", "b", "c"]


@settings(max_examples=60, deadline=None)
@given(st.lists(st.sampled_from("abcde"), max_size=8), st.lists(st.sampled_from("abcde"), max_size=8))
def test_metric_bounds_and_pr_swap(cand, ref):
    for n in (1, 2):
        f_cr = rouge_n(cand, ref, n)
        assert 0.0 <= f_cr <= 1.0
        assert f_cr == pytest.approx(rouge_n(ref, cand, n))  # swapping flips P/R, not F
    assert token_f1(cand, ref) == pytest.approx(token_f1(ref, cand))
    assert 0.0 <= rouge_l(cand, ref) <= 1.0


def test_order_sensitivity_counterexample():
    a, b = toks("a b c"), toks("c b a")
    assert token_f1(a, b) == 1.0  # bag-based: permutation invariant
    assert rouge_n(a, b, 2) == 0.0  # bigrams: order sensitive


def test_normalize_single_model_all_hundred():
    table = RawScoreTable()
    table.add("m", "single", "t1", "rouge1", 40.0)
    table.add("m", "single", "t1", "bleu", 10.0)
    report = normalize(table)
    assert report.per_task[("m", "single", "t1")] == pytest.approx(100.0)


def test_normalize_gigaword_anchor_values():
    table = RawScoreTable()
    raw = {"rouge1": 45.80, "rouge2": 22.56, "rougel": 43.15, "bleu": 19.20}
    best = {"rouge1": 50.14, "rouge2": 26.56, "rougel": 47.28, "bleu": 23.20}
    for met, v in raw.items():
        table.add("full", "multi", "gigaword", met, v)
        table.add("best", "single", "gigaword", met, best[met])
    report = normalize(table)
    assert report.per_task[("full", "multi", "gigaword")] == pytest.approx(87.57, abs=0.05)

    table2 = RawScoreTable()
    raw2 = {"rouge1": 40.96, "rouge2": 18.28, "rougel": 38.79, "bleu": 14.93}
    for met, v in raw2.items():
        table2.add("nodataset", "multi", "gigaword", met, v)
        table2.add("best", "single", "gigaword", met, best[met])
    report2 = normalize(table2)
    assert report2.per_task[("nodataset", "multi", "gigaword")] == pytest.approx(74.23, abs=0.05)


def test_normalize_scale_invariance():
    table = RawScoreTable()
    table.add("a", "multi", "t", "rouge1", 30.0)
    table.add("b", "multi", "t", "rouge1", 15.0)
    table.add("a", "multi", "t", "bleu", 8.0)
    table.add("b", "multi", "t", "bleu", 4.0)
    before = normalize(table)
    table.add("a", "multi", "t", "bleu", 8.0 * 7)
    table.add("b", "multi", "t", "bleu", 4.0 * 7)
    after = normalize(table)
    assert before.per_task == after.per_task


def test_normalize_rejects_zero_maximum():
    table = RawScoreTable()
    table.add("a", "multi", "t", "rouge1", 0.0)
    with pytest.raises(ValueError, match=r"\('t', 'rouge1'\)"):
        normalize(table)


def test_normalize_rejects_empty():
    with pytest.raises(ValueError):
        normalize(RawScoreTable())


def test_published_tables_reproduce_aggregates():
    report, failures = check_aggregate_fixture()
    assert not failures, f"aggregate cells off: {failures}"


def test_fixture_groups_detected():
    table, maxima, _ = load_published_fixture()
    report = normalize(table, maxima=maxima)
    assert report.task_groups["gigaword"] == "summ"
    assert report.task_groups["squad"] == "qa"


def test_report_csv_layout(tmp_path):
    table, maxima, _ = load_published_fixture()
    report = normalize(table, maxima=maxima)
    out = tmp_path / "report.csv"
    report.to_csv(out)
    lines = out.read_text().strip().splitlines()
    header = lines[0].split(",")
    assert header[0] == "task"
    assert "full_single" in header and "full_multi" in header
    assert lines[-1].startswith("average_all")
    assert len(lines) == 1 + 9 + 3


def test_raw_table_csv_round_trip(tmp_path):
    table, _, _ = load_published_fixture()
    path = tmp_path / "raw.csv"
    table.to_csv(path)
    again = RawScoreTable.from_csv(path)
    assert set(again.entries) == set(table.entries)
    for k, v in table.entries.items():
        assert again.entries[k] == pytest.approx(v)
