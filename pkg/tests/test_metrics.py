import math

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sitcode.trainer.metrics import EmptyReference, bleu, ngram_stats, rouge_l

from conftest import load_fixture

WORKSHEET = load_fixture("metric_worksheet.json")["pairs"]


@pytest.mark.parametrize("pair", WORKSHEET, ids=[p["hyps"][0] for p in WORKSHEET])
def test_worksheet_values(pair):
    assert bleu(pair["hyps"], pair["refs"]) == pytest.approx(eval(pair["bleu"], {"math": math}), abs=1e-9)
    assert rouge_l(pair["hyps"], pair["refs"]) == pytest.approx(eval(pair["rouge_l"], {"math": math}), abs=1e-9)


@pytest.mark.parametrize("pair", WORKSHEET, ids=[p["hyps"][0] for p in WORKSHEET])
def test_worksheet_counts(pair):
    matches = [0] * 4
    totals = [0] * 4
    for h, r in zip(pair["hyps"], pair["refs"]):
        for n in range(1, 5):
            m, t = ngram_stats(h.split(), r.split(), n)
            matches[n - 1] += m
            totals[n - 1] += t
    assert matches == pair["counts"]["matches"]
    assert totals == pair["counts"]["totals"]


def test_identity_scores_one():
    refs = ["returns scaled alpha", "rename foo to bar", "x"]
    assert bleu(refs, refs) == pytest.approx(1.0, abs=1e-12)
    assert rouge_l(refs, refs) == pytest.approx(1.0, abs=1e-12)


def test_disjoint_rouge_is_zero():
    assert rouge_l(["a b c"], ["d e f"]) == 0.0
    assert bleu(["a b c"], ["d e f"]) == 0.0


def test_empty_reference():
    with pytest.raises(EmptyReference):
        bleu(["a"], [""])
    with pytest.raises(EmptyReference):
        rouge_l([], [])
    with pytest.raises(ValueError):
        bleu(["a", "b"], ["a"])


def test_empty_hypothesis_scores_zero():
    assert bleu([""], ["a b"]) == 0.0
    assert rouge_l([""], ["a b"]) == 0.0


words = st.lists(st.sampled_from("abcdef"), min_size=1, max_size=8)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(words, words), min_size=1, max_size=5))
def test_scores_bounded(pairs):
    hyps = [h for h, _ in pairs]
    refs = [r for _, r in pairs]
    assert 0.0 <= bleu(hyps, refs) <= 1.0 + 1e-12
    assert 0.0 <= rouge_l(hyps, refs) <= 1.0 + 1e-12
