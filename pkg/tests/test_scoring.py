"""Edit-distance alignment, WER arithmetic, per-word measures."""

import numpy as np
import pytest
from hypothesis import given, strategies as st

from avsr.errors import DataError
from avsr.scoring import (
    EditOps,
    align,
    check_count_identities,
    normalize_words,
    per_word_prf,
    read_transcripts,
    wer,
    wer_percent,
)

word_lists = st.lists(st.sampled_from(["the", "cat", "sat", "on", "a", "mat"]), min_size=1, max_size=8)


def edit_distance(a, b):
    """Independent plain Wagner-Fischer distance (no backtrace)."""
    prev = list(range(len(b) + 1))
    for i, x in enumerate(a, 1):
        cur = [i]
        for j, y in enumerate(b, 1):
            cur.append(min(prev[j - 1] + (x != y), prev[j] + 1, cur[-1] + 1))
        prev = cur
    return prev[-1]


def test_identical_texts_have_no_errors():
    ops = align("the cat sat", "the cat sat")
    assert (ops.s, ops.d, ops.i) == (0, 0, 0)
    assert wer(ops) == 0.0


@pytest.mark.parametrize(
    "ref,hyp,expected",
    [
        ("your job needs to be challenging", "job is to be challenging", 33),
        ("your job needs to be challenging", "your child needs to be challenging", 16),
        ("I mean I thought poetry was just self expression", "I mean I thought poetry would just suffer as pressure", 44),
        ("I mean I thought poetry was just self expression", "I mean not thought poetry was just self expression", 11),
        ("cluster bombs left behind", "unless you perhaps have blind", 125),
        ("I was the first non family investor in amazon", "I was the first not family of us are absurd", 55),
        ("I was the first non family investor in amazon", "I was the first non family in bester and amazon", 33),
    ],
)
def test_worked_wer_examples(ref, hyp, expected):
    assert wer_percent(align(ref, hyp)) == expected


def test_wer_can_exceed_100():
    assert wer(align("cluster bombs left behind", "unless you perhaps have blind")) == 125.0


def test_empty_hypothesis_is_all_deletions():
    ops = align("one two three", "")
    assert (ops.s, ops.d, ops.i) == (0, 3, 0)
    assert wer(ops) == 100.0


def test_empty_reference_rejected():
    with pytest.raises(DataError, match="empty reference"):
        align("", "anything")


def test_normalization_folds_case_and_punctuation():
    assert normalize_words("The CAT, sat!") == ["the", "cat", "sat"]
    assert normalize_words("don't stop") == ["don't", "stop"]


@given(word_lists, word_lists)
def test_distance_is_symmetric_in_cost(a, b):
    assert align(a, b).distance == align(b, a).distance if a and b else True


@given(word_lists, word_lists, word_lists)
def test_triangle_inequality(a, b, c):
    ab = align(a, b).distance
    bc = edit_distance(b, c)
    ac = align(a, c).distance
    assert ac <= ab + bc


@given(word_lists, word_lists)
def test_distance_matches_independent_implementation(ref, hyp):
    assert align(ref, hyp).distance == edit_distance(ref, hyp)


def test_per_word_substitution_seen_from_both_sides():
    ops = align("a b", "a c")
    measures = per_word_prf(ops)
    assert measures["b"].tp == 0 and measures["b"].fn == 1 and measures["b"].recall == 0.0
    assert measures["c"].tp == 0 and measures["c"].fp == 1 and measures["c"].precision == 0.0
    assert measures["a"].precision == 1.0 and measures["a"].recall == 1.0


def test_perfect_corpus_gives_unit_measures():
    total = EditOps()
    for text in ["the cat", "sat on", "a mat"]:
        total.merge(align(text, text))
    for m in per_word_prf(total).values():
        assert m.precision == 1.0 and m.recall == 1.0 and m.f1 == 1.0


def test_undefined_measures_stay_undefined():
    ops = align("a", "b")
    measures = per_word_prf(ops)
    assert measures["a"].precision is None  # "a" never appears in a hypothesis
    assert measures["b"].recall is None  # "b" never appears in a reference


def test_ten_sentence_corpus_matches_operation_recount():
    rng = np.random.default_rng(5)
    vocab = ["alpha", "beta", "gamma", "delta"]
    total = EditOps()
    pair_count = 0
    for _ in range(10):
        ref = [vocab[i] for i in rng.integers(0, 4, rng.integers(1, 7))]
        hyp = [vocab[i] for i in rng.integers(0, 4, rng.integers(0, 7))]
        ops = align(ref, hyp)
        # recount: operation counts must reproduce the DP distance and the word totals
        assert ops.s + ops.d + ops.i == edit_distance(ref, hyp)
        assert sum(ops.matches.values()) + ops.s + ops.d == len(ref)
        assert sum(ops.matches.values()) + ops.s + ops.i == len(hyp)
        total.merge(ops)
        pair_count += 1
    measures = per_word_prf(total)
    check_count_identities(total, measures)


@given(st.lists(st.tuples(word_lists, word_lists), min_size=1, max_size=6))
def test_aggregate_count_identities(pairs):
    total = EditOps()
    for ref, hyp in pairs:
        total.merge(align(ref, hyp))
    measures = per_word_prf(total)
    tp = sum(m.tp for m in measures.values())
    fp = sum(m.fp for m in measures.values())
    fn = sum(m.fn for m in measures.values())
    assert tp + fp == total.hyp_words
    assert tp + fn == total.ref_words
    check_count_identities(total, measures)


def test_backtrace_prefers_match_over_substitution():
    ops = align("a a", "a")
    assert ops.matches["a"] == 1 and ops.deletions["a"] == 1 and ops.s == 0


def test_read_transcripts(tmp_path):
    p = tmp_path / "refs.tsv"
    p.write_text("u1\thello there\nu2\tbye\n", encoding="utf-8")
    assert read_transcripts(p) == {"u1": "hello there", "u2": "bye"}
    p.write_text("u1 no tab\n", encoding="utf-8")
    with pytest.raises(DataError, match="tab-separated"):
        read_transcripts(p)
    p.write_text("u1\ta\nu1\tb\n", encoding="utf-8")
    with pytest.raises(DataError, match="duplicate"):
        read_transcripts(p)
