import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from entityfusion.metrics import auprc, auroc, f1, midranks


def brute_auroc(scores, labels):
    """Pair counting over every positive/negative pair, ties worth a half."""
    pos = [s for s, y in zip(scores, labels) if y == 1]
    neg = [s for s, y in zip(scores, labels) if y == 0]
    wins = sum((p > n) + 0.5 * (p == n) for p in pos for n in neg)
    return wins / (len(pos) * len(neg))


def brute_average_precision(scores, labels):
    """Walk the stable descending order and average precision at each hit."""
    order = sorted(range(len(scores)), key=lambda i: -scores[i])
    hits, total = 0, 0.0
    for rank, i in enumerate(order, start=1):
        if labels[i]:
            hits += 1
            total += hits / rank
    return total / hits


def confusion_f1(scores, labels, threshold=0.5):
    tp = sum(s >= threshold and y == 1 for s, y in zip(scores, labels))
    fp = sum(s >= threshold and y == 0 for s, y in zip(scores, labels))
    fn = sum(s < threshold and y == 1 for s, y in zip(scores, labels))
    return 0.0 if tp == 0 else 2 * tp / (2 * tp + fp + fn)


# ----------------------------------------------------------------------- AUROC

def test_auroc_worked_example():
    assert auroc([0.1, 0.4, 0.35, 0.8], [0, 0, 1, 1]) == 0.75


def test_auroc_perfect_and_tied():
    assert auroc([0.1, 0.2, 0.8, 0.9], [0, 0, 1, 1]) == 1.0
    assert auroc([0.3] * 6, [0, 1, 0, 1, 1, 0]) == 0.5


def test_auroc_rejects_single_class():
    with pytest.raises(ValueError, match="both"):
        auroc([0.1, 0.2], [1, 1])
    with pytest.raises(ValueError, match="both"):
        auroc([0.1, 0.2], [0, 0])


def test_metric_inputs_validated():
    with pytest.raises(ValueError, match="differ"):
        auroc([0.1, 0.2, 0.3], [0, 1])
    with pytest.raises(ValueError, match="0 or 1"):
        auroc([0.1, 0.2], [0, 2])


scored = st.integers(2, 60).flatmap(lambda n: st.tuples(
    st.lists(st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]) | st.floats(0, 1), min_size=n, max_size=n),
    st.lists(st.integers(0, 1), min_size=n, max_size=n)))


@settings(max_examples=200, deadline=None)
@given(scored)
def test_auroc_matches_pair_counting(case):
    scores, labels = case
    if len(set(labels)) < 2:
        return
    assert auroc(scores, labels) == pytest.approx(brute_auroc(scores, labels), abs=1e-12)


def test_auroc_invariant_under_monotone_transform():
    rng = np.random.default_rng(0)
    s = rng.normal(size=200)
    y = rng.integers(0, 2, 200)
    base = auroc(s, y)
    assert auroc(np.exp(s), y) == base
    assert auroc(3 * s + 7, y) == base
    assert auroc(np.tanh(s), y) == base


def test_midranks_share_tied_ranks():
    np.testing.assert_array_equal(midranks(np.array([3.0, 1.0, 3.0, 2.0])), [3.5, 1.0, 3.5, 2.0])


# ----------------------------------------------------------------------- AUPRC

def test_auprc_worked_example():
    assert auprc([0.9, 0.8, 0.7], [1, 0, 1]) == pytest.approx((1 + 2 / 3) / 2, abs=1e-15)


def test_auprc_perfect_ranking():
    assert auprc([0.9, 0.8, 0.2, 0.1], [1, 1, 0, 0]) == 1.0


def test_auprc_random_scores_approach_prevalence():
    rng = np.random.default_rng(1)
    y = (rng.random(20000) < 0.2).astype(int)
    assert auprc(rng.random(20000), y) == pytest.approx(y.mean(), abs=0.01)


def test_auprc_ties_keep_input_order():
    # stable order puts the positive first among the tied scores
    assert auprc([0.5, 0.5], [1, 0]) == 1.0
    assert auprc([0.5, 0.5], [0, 1]) == 0.5


def test_auprc_rejects_no_positives():
    with pytest.raises(ValueError, match="positive"):
        auprc([0.2, 0.3], [0, 0])


@settings(max_examples=200, deadline=None)
@given(scored)
def test_auprc_matches_rank_walk(case):
    scores, labels = case
    if not any(labels):
        return
    assert auprc(scores, labels) == pytest.approx(brute_average_precision(scores, labels), abs=1e-12)


# -------------------------------------------------------------------------- F1

def test_f1_confusion_example():
    # TP=2, FP=1, FN=1
    assert f1([0.9, 0.8, 0.7, 0.2, 0.1], [1, 1, 0, 1, 0]) == pytest.approx(2 / 3, abs=1e-15)


def test_f1_perfect_and_degenerate():
    assert f1([0.9, 0.1], [1, 0]) == 1.0
    assert f1([0.1, 0.2, 0.3], [1, 0, 1]) == 0.0
    assert f1([0.1, 0.2], [0, 0]) == 0.0


def test_f1_threshold_is_inclusive():
    assert f1([0.5], [1]) == 1.0
    assert f1([0.5], [1], threshold=0.6) == 0.0


@settings(max_examples=200, deadline=None)
@given(scored)
def test_f1_matches_confusion_arithmetic(case):
    scores, labels = case
    assert f1(scores, labels) == pytest.approx(confusion_f1(scores, labels), abs=1e-12)


def test_f1_invariant_under_boundary_preserving_transform():
    rng = np.random.default_rng(2)
    s = rng.random(300)
    y = rng.integers(0, 2, 300)
    # monotone, fixes 0.5, keeps every score on its side
    moved = 0.5 + np.sign(s - 0.5) * np.abs(s - 0.5) ** 2
    assert f1(moved, y) == f1(s, y)
