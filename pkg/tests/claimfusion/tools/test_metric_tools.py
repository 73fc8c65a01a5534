# SPDX-FileCopyrightText: Copyright 2023, Contributors to claimfusion
# SPDX-PackageHomePage: https://github.com/claimfusion/claimfusion
# SPDX-License-Identifier: Apache-2.0
from typing import Self

import numpy as np
import pytest

from claimfusion.core.exceptions import DimensionError, UndefinedMetricError, ValueOutOfRangeError
from claimfusion.tools.metric_tools import Confusion, MetricsReport, MetricTools, ScoredSet

_SCORES = [0.9, 0.8, 0.7, 0.6, 0.5, 0.4]
_LABELS = [1, 0, 1, 0, 0, 1]


class TestScoredSet:
    def test_counts(self: Self) -> None:
        s = ScoredSet.of(_SCORES, _LABELS)
        assert len(s) == 6
        assert s.n_positive == 3
        assert s.n_negative == 3
        assert s.prevalence == 0.5

    def test_invalid(self: Self) -> None:
        with pytest.raises(DimensionError):
            ScoredSet.of([0.1, 0.2], [1])
        with pytest.raises(DimensionError):
            ScoredSet.of([], [])
        with pytest.raises(ValueOutOfRangeError):
            ScoredSet.of([1.2], [1])
        with pytest.raises(ValueOutOfRangeError):
            ScoredSet.of([np.nan], [1])
        with pytest.raises(ValueOutOfRangeError):
            ScoredSet.of([0.3], [2])


class TestMetricTools:
    def test_confusion(self: Self) -> None:
        s = ScoredSet.of(_SCORES, _LABELS)
        assert MetricTools.confusion_at(s, 0.6) == Confusion(tp=2, fp=2, tn=2, fn=1)
        # the threshold is inclusive
        assert MetricTools.confusion_at(s, 0.9).tp == 1
        assert MetricTools.confusion_at(s, 1.0).tp == 0
        with pytest.raises(ValueOutOfRangeError):
            MetricTools.confusion_at(s, 1.5)

    def test_prf1(self: Self) -> None:
        counts = Confusion(tp=2, fp=2, tn=2, fn=1)
        fraud = MetricTools.prf1(counts, 1)
        assert fraud.precision == pytest.approx(0.5)
        assert fraud.recall == pytest.approx(2 / 3)
        assert fraud.f1 == pytest.approx(4 / 7)
        not_fraud = MetricTools.prf1(counts, 0)
        assert not_fraud.precision == pytest.approx(2 / 3)
        assert not_fraud.recall == pytest.approx(0.5)
        with pytest.raises(ValueOutOfRangeError):
            MetricTools.prf1(counts, 2)

    def test_zero_division(self: Self) -> None:
        # nothing predicted positive: precision and F1 are 0, not NaN
        m = MetricTools.prf1(Confusion(tp=0, fp=0, tn=5, fn=2), 1)
        assert (m.precision, m.recall, m.f1) == (0.0, 0.0, 0.0)

    def test_balanced_accuracy(self: Self) -> None:
        assert MetricTools.balanced_accuracy(Confusion(tp=2, fp=2, tn=2, fn=1)) == pytest.approx(7 / 12)
        with pytest.raises(UndefinedMetricError):
            MetricTools.balanced_accuracy(Confusion(tp=0, fp=1, tn=3, fn=0))

    def test_pr_auc(self: Self) -> None:
        s = ScoredSet.of(_SCORES, _LABELS)
        assert MetricTools.pr_auc(s) == pytest.approx((1 + 2 / 3 + 3 / 6) / 3)
        perfect = ScoredSet.of([0.9, 0.8, 0.1], [1, 1, 0])
        assert MetricTools.pr_auc(perfect) == pytest.approx(1.0)
        with pytest.raises(UndefinedMetricError):
            MetricTools.pr_auc(ScoredSet.of([0.3, 0.2], [0, 0]))

    def test_pr_auc_ties(self: Self) -> None:
        s = ScoredSet.of([0.5, 0.5, 0.2], [1, 0, 1])
        assert MetricTools.pr_auc(s) == pytest.approx((1 / 2 + 2 / 3) / 2)
        # order within a tie does not matter
        assert MetricTools.pr_auc(ScoredSet.of([0.5, 0.5, 0.2], [0, 1, 1])) == MetricTools.pr_auc(s)

    def test_pr_auc_constant_scores(self: Self) -> None:
        s = ScoredSet.of(np.full(10, 0.3), [1, 0, 0, 0, 1, 0, 0, 0, 0, 0])
        assert MetricTools.pr_auc(s) == pytest.approx(0.2)

    def test_brute_force_agreement(self: Self) -> None:
        rng = np.random.default_rng(0)
        for _ in range(1000):
            n = int(rng.integers(2, 21))
            labels = rng.integers(0, 2, size=n)
            labels[:2] = (1, 0)
            # coarse scores so that ties are common
            scores = np.round(rng.uniform(size=n), 1)
            s = ScoredSet.of(scores, labels)
            precisions = []
            for i in range(n):
                if labels[i] == 1:
                    above = [j for j in range(n) if scores[j] >= scores[i]]
                    precisions.append(sum(labels[j] for j in above) / len(above))
            assert MetricTools.pr_auc(s) == pytest.approx(sum(precisions) / len(precisions), abs=1e-12)
            assert MetricTools.pr_auc(ScoredSet.of(scores**3, labels)) == MetricTools.pr_auc(s)
            t = float(rng.choice(scores))
            tp = sum(1 for x, y in zip(scores, labels) if x >= t and y == 1)
            fp = sum(1 for x, y in zip(scores, labels) if x >= t and y == 0)
            fn = sum(1 for x, y in zip(scores, labels) if x < t and y == 1)
            tn = n - tp - fp - fn
            counts = MetricTools.confusion_at(s, t)
            assert counts == Confusion(tp=tp, fp=fp, tn=tn, fn=fn)
            p = tp / (tp + fp) if tp + fp else 0.0
            r = tp / (tp + fn)
            f1 = 2 * p * r / (p + r) if p + r else 0.0
            fraud = MetricTools.prf1(counts, 1)
            assert (fraud.precision, fraud.recall) == pytest.approx((p, r), abs=1e-12)
            assert fraud.f1 == pytest.approx(f1, abs=1e-12)
            balanced = (tp / (tp + fn) + tn / (tn + fp)) / 2
            assert MetricTools.balanced_accuracy(counts) == pytest.approx(balanced, abs=1e-12)

    def test_threshold_groups(self: Self) -> None:
        scores, predicted, tp = MetricTools.threshold_groups(ScoredSet.of([0.2, 0.5, 0.5, 0.9], [1, 1, 0, 0]))
        assert scores.tolist() == [0.9, 0.5, 0.2]
        assert predicted.tolist() == [1, 3, 4]
        assert tp.tolist() == [0, 1, 2]

    def test_tune_threshold(self: Self) -> None:
        s = ScoredSet.of(_SCORES, _LABELS)
        assert MetricTools.tune_threshold(s, 0.8) == 0.4
        assert MetricTools.tune_threshold(s, 0.5) == 0.7
        assert MetricTools.tune_threshold(s, 0.0) == 0.9
        t = MetricTools.tune_threshold(s)
        assert MetricTools.prf1(MetricTools.confusion_at(s, t)).recall >= 0.8
        with pytest.raises(UndefinedMetricError):
            MetricTools.tune_threshold(ScoredSet.of([0.3], [0]))
        with pytest.raises(ValueOutOfRangeError):
            MetricTools.tune_threshold(s, 1.2)

    def test_evaluate(self: Self) -> None:
        s = ScoredSet.of(_SCORES, _LABELS)
        report = MetricTools.evaluate(s, 0.6)
        row = report.to_row()
        assert row["threshold"] == 0.6
        assert row["fraud_f1"] == pytest.approx(4 / 7)
        assert row["balanced_accuracy"] == pytest.approx(7 / 12)
        assert set(row) == {
            "pr_auc",
            "balanced_accuracy",
            "threshold",
            "fraud_precision",
            "fraud_recall",
            "fraud_f1",
            "not_fraud_precision",
            "not_fraud_recall",
            "not_fraud_f1",
        }
        assert MetricsReport.from_row(row) == report


if __name__ == "__main__":
    pytest.main()
