import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from deidjoint.corpus import Span
from deidjoint.evaluation import (DEFAULT_PERMUTATIONS, exact_f1, exact_permutation_p, f1_from_counts,
                                  paired_permutation_test, unit_counts)

PAT = Span(0, 2, "PAT")


def test_perfect_prediction():
    r = exact_f1([[PAT], [Span(1, 3, "AGE")]], [[PAT], [Span(1, 3, "AGE")]])
    assert (r.precision, r.recall, r.f1) == (1.0, 1.0, 1.0)


def test_boundary_mismatch_counts_twice():
    r = exact_f1([[PAT]], [[Span(0, 1, "PAT")]])
    assert (r.tp, r.fp, r.fn, r.f1) == (0, 1, 1, 0.0)


def test_two_thirds_case():
    r = exact_f1([[PAT]], [[PAT, Span(3, 4, "AGE")]])
    assert r.precision == 0.5 and r.recall == 1.0
    assert r.f1 == pytest.approx(2 / 3, abs=1e-15)


def test_duplicate_predictions_are_false_positives():
    r = exact_f1([[PAT]], [[PAT, PAT]])
    assert (r.tp, r.fp, r.fn) == (1, 1, 0)


def test_empty_inputs():
    r = exact_f1([[]], [[]])
    assert r.f1 == 0.0 and r.tp == r.fp == r.fn == 0
    with pytest.raises(ValueError):
        exact_f1([[]], [])


def test_report_layout():
    text = exact_f1([[PAT]], [[PAT]]).report()
    lines = text.splitlines()
    assert lines[1].split() == ["micro", "1", "0", "0", "1.0000", "1.0000", "1.0000"]
    assert lines[2].startswith("PAT")


spans = st.builds(lambda s, n, c: Span(s, s + n, c), st.integers(0, 6), st.integers(1, 3),
                  st.sampled_from(["A", "B"]))
corpora = st.lists(st.tuples(st.lists(spans, max_size=4), st.lists(spans, max_size=4)), min_size=1, max_size=5)


@settings(max_examples=200, deadline=None)
@given(corpora)
def test_precision_recall_swap_and_micro_consistency(pairs):
    a = [p for p, _ in pairs]
    b = [q for _, q in pairs]
    ab, ba = exact_f1(a, b), exact_f1(b, a)
    assert ab.tp == ba.tp
    assert ab.precision == pytest.approx(ba.recall, abs=1e-15)
    tp = sum(c.tp for c in ab.per_class.values())
    fp = sum(c.fp for c in ab.per_class.values())
    fn = sum(c.fn for c in ab.per_class.values())
    assert ab.f1 == pytest.approx(f1_from_counts(np.array([tp, fp, fn], dtype=float)), abs=1e-15)


def _docs(n_docs, rng, k=3):
    return [[[Span(i, i + 1, "X") for i in range(0, 10, 2) if rng.random() < 0.7] for _ in range(k)]
            for _ in range(n_docs)]


def _noisy(gold, rng, p):
    return [[[s for s in sent if rng.random() > p] for sent in doc] for doc in gold]


def test_default_permutations():
    assert DEFAULT_PERMUTATIONS == 1_048_576
    rng = np.random.default_rng(0)
    gold = _docs(3, rng)
    assert paired_permutation_test(gold, gold, gold).n_permutations == 2**20


def test_identical_predictions_give_p_one():
    rng = np.random.default_rng(1)
    gold = _docs(5, rng)
    pred = _noisy(gold, rng, 0.3)
    r = paired_permutation_test(gold, pred, pred, n=10_000)
    assert r.observed_diff == 0.0 and r.p_value == 1.0 and not r.significant


def test_monte_carlo_matches_enumeration_two_documents():
    rng = np.random.default_rng(2)
    for _ in range(5):
        gold = _docs(2, rng)
        a, b = _noisy(gold, rng, 0.2), _noisy(gold, rng, 0.6)
        exact = exact_permutation_p(gold, a, b)
        mc = paired_permutation_test(gold, a, b, seed=3).p_value
        assert abs(mc - exact) < 0.01


def test_two_document_enumeration_by_hand():
    # Document 1 is found only by A, document 2 by neither; swapping document 2
    # never changes anything, so half the patterns reach the observed gap
    gold = [[[PAT]], [[Span(0, 1, "AGE")]]]
    a = [[[PAT]], [[]]]
    b = [[[]], [[]]]
    assert exact_permutation_p(gold, a, b) == 1.0
    gold = [[[PAT]], [[Span(0, 1, "AGE")]]]
    a = [[[PAT]], [[Span(0, 1, "AGE")]]]
    b = [[[]], [[]]]
    # Patterns: none swapped / both swapped keep |F1 diff| = 1; one swapped gives 0
    assert exact_permutation_p(gold, a, b) == 0.5


def test_perfect_versus_empty_is_significant():
    rng = np.random.default_rng(4)
    gold = _docs(20, rng)
    empty = [[[] for _ in doc] for doc in gold]
    r = paired_permutation_test(gold, gold, empty, seed=1)
    assert r.p_value <= 0.01 and r.significant


def test_p_value_symmetric_and_seeded():
    rng = np.random.default_rng(5)
    gold = _docs(8, rng)
    a, b = _noisy(gold, rng, 0.2), _noisy(gold, rng, 0.5)
    assert paired_permutation_test(gold, a, b, n=20_000).p_value == \
        paired_permutation_test(gold, b, a, n=20_000).p_value
    assert paired_permutation_test(gold, a, b, n=5000, seed=9).p_value == \
        paired_permutation_test(gold, a, b, n=5000, seed=9).p_value


def test_unit_counts_shape():
    gold = [[[PAT]], [[]]]
    assert unit_counts(gold, gold).tolist() == [[1, 0, 0], [0, 0, 0]]
    with pytest.raises(ValueError):
        unit_counts(gold, gold[:1])
