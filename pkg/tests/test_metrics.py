"""Confusion matrix bookkeeping and macro precision/recall/Jaccard."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gazemae.metrics import ConfusionMatrix, macro_scores


def scalar_reference(counts: np.ndarray):
    """Independent per-class implementation using plain Python scalars."""
    n = counts.shape[0]
    ps, rs, js = [], [], []
    for k in range(n):
        tp = int(counts[k][k])
        fn = sum(int(counts[k][j]) for j in range(n)) - tp
        fp = sum(int(counts[i][k]) for i in range(n)) - tp
        if tp + fn == 0:
            continue
        ps.append(tp / (tp + fp) if tp + fp else 0.0)
        rs.append(tp / (tp + fn))
        js.append(tp / (tp + fp + fn))
    return sum(ps) / len(ps), sum(rs) / len(rs), sum(js) / len(js)


class TestConfusionMatrix:
    def test_accumulate_and_support(self):
        cm = ConfusionMatrix(3)
        cm.accumulate(0, 0).accumulate(0, 1).accumulate(2, 2)
        assert cm.n_samples == 3
        np.testing.assert_array_equal(cm.support(), [2, 0, 1])
        assert cm.counts[0, 1] == 1

    def test_accumulate_many_strict_lengths(self):
        cm = ConfusionMatrix(3)
        with pytest.raises(ValueError):
            cm.accumulate_many([0, 1], [0])

    def test_rejects_out_of_range_labels(self):
        cm = ConfusionMatrix(3)
        with pytest.raises(ValueError, match="labels"):
            cm.accumulate(3, 0)
        with pytest.raises(ValueError, match="labels"):
            cm.accumulate(0, -1)

    def test_merge_adds_counts(self):
        a = ConfusionMatrix(2).accumulate(0, 0)
        b = ConfusionMatrix(2).accumulate(0, 1).accumulate(1, 1)
        merged = a.merge(b)
        np.testing.assert_array_equal(merged.counts, [[1, 1], [0, 1]])
        # inputs untouched
        assert a.n_samples == 1 and b.n_samples == 2

    def test_merge_rejects_size_mismatch(self):
        with pytest.raises(ValueError, match="merge"):
            ConfusionMatrix(2).merge(ConfusionMatrix(3))

    def test_counts_shape_validated(self):
        with pytest.raises(ValueError, match="shape"):
            ConfusionMatrix(3, np.zeros((2, 2)))


class TestMacroScores:
    def test_worked_example(self):
        # class 0: TP=1 FN=1 FP=0 -> P=1,   R=1/2, J=1/2
        # class 1: TP=2 FN=0 FP=1 -> P=2/3, R=1,   J=2/3
        cm = ConfusionMatrix(2, np.array([[1, 1], [0, 2]]))
        scores = macro_scores(cm)
        assert scores.precision == pytest.approx(0.8333, abs=1e-4)
        assert scores.recall == pytest.approx(0.75, abs=1e-4)
        assert scores.jaccard == pytest.approx(0.5833, abs=1e-4)

    def test_perfect_predictions(self):
        cm = ConfusionMatrix(3, np.diag([5, 2, 1]))
        scores = macro_scores(cm)
        assert scores.precision == scores.recall == scores.jaccard == 1.0

    def test_never_predicted_class_scores_zero_precision(self):
        # class 1 present in ground truth but never predicted
        cm = ConfusionMatrix(2, np.array([[3, 0], [2, 0]]))
        scores = macro_scores(cm)
        assert scores.per_class[1] == (0.0, 0.0, 0.0)
        assert scores.precision == pytest.approx((3 / 5 + 0.0) / 2)

    def test_absent_class_excluded_from_average(self):
        # class 2 never occurs in ground truth: it must not drag the mean down
        cm = ConfusionMatrix(3, np.array([[2, 0, 0], [0, 2, 0], [0, 0, 0]]))
        scores = macro_scores(cm)
        assert set(scores.per_class) == {0, 1}
        assert scores.jaccard == 1.0

    def test_absent_class_absorbs_false_positives(self):
        # predictions into an absent class still count as FP for nobody's
        # recall but do lower the predicting side via the present classes
        cm = ConfusionMatrix(2, np.array([[1, 1], [0, 0]]))
        scores = macro_scores(cm)
        assert set(scores.per_class) == {0}
        assert scores.recall == pytest.approx(0.5)

    def test_empty_matrix_rejected(self):
        with pytest.raises(ValueError, match="empty"):
            macro_scores(ConfusionMatrix(4))

    def test_matches_scalar_reference_on_random_matrices(self):
        rng = np.random.default_rng(0)
        for _ in range(300):
            n = int(rng.integers(2, 8))
            counts = rng.integers(0, 15, size=(n, n))
            # randomly empty some ground-truth rows
            for k in range(n):
                if rng.random() < 0.3:
                    counts[k] = 0
            if counts.sum() == 0:
                continue
            cm = ConfusionMatrix(n, counts)
            scores = macro_scores(cm)
            ref_p, ref_r, ref_j = scalar_reference(counts)
            assert scores.precision == pytest.approx(ref_p, abs=1e-12)
            assert scores.recall == pytest.approx(ref_r, abs=1e-12)
            assert scores.jaccard == pytest.approx(ref_j, abs=1e-12)

    @settings(max_examples=80, deadline=None)
    @given(n=st.integers(2, 6), data=st.data())
    def test_scores_are_bounded_and_jaccard_is_smallest(self, n, data):
        cells = data.draw(
            st.lists(st.integers(0, 9), min_size=n * n, max_size=n * n)
        )
        counts = np.array(cells).reshape(n, n)
        if counts.sum() == 0:
            return
        scores = macro_scores(ConfusionMatrix(n, counts))
        for p, r, j in scores.per_class.values():
            assert 0.0 <= p <= 1.0 and 0.0 <= r <= 1.0 and 0.0 <= j <= 1.0
            assert j <= min(p, r) + 1e-12
        assert 0.0 <= scores.jaccard <= 1.0
