# SPDX-FileCopyrightText: Copyright 2023, Contributors to claimfusion
# SPDX-PackageHomePage: https://github.com/claimfusion/claimfusion
# SPDX-License-Identifier: Apache-2.0
"""
Evaluation metrics for binary fraud scores.

Class 1 is fraudulent. A claim is predicted fraudulent iff its score is ≥ the threshold.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Self

import numpy as np
from numpy.typing import ArrayLike, NDArray

from claimfusion.core.exceptions import DimensionError, UndefinedMetricError, ValueOutOfRangeError

__all__ = ["ScoredSet", "Confusion", "ClassMetrics", "MetricsReport", "MetricUtils", "MetricTools"]

logger = logging.getLogger("claimfusion")


@dataclass(slots=True, frozen=True)
class ScoredSet:
    """
    Aligned fraud probabilities and labels.
    """

    scores: NDArray[np.float64]
    labels: NDArray[np.int64]

    def __post_init__(self: Self) -> None:
        scores = np.asarray(self.scores, dtype=np.float64).reshape(-1)
        labels = np.asarray(self.labels, dtype=np.int64).reshape(-1)
        if scores.shape != labels.shape or len(scores) == 0:
            msg = f"Need equally many scores and labels, at least one; got {len(scores)} and {len(labels)}"
            raise DimensionError(msg, shapes=(scores.shape, labels.shape))
        if np.any(~np.isfinite(scores)) or np.any((scores < 0) | (scores > 1)):
            msg = "Scores must be probabilities in [0, 1]"
            raise ValueOutOfRangeError(msg, minimum=0, maximum=1)
        if np.any((labels != 0) & (labels != 1)):
            msg = "Labels must be 0 or 1"
            raise ValueOutOfRangeError(msg, minimum=0, maximum=1)
        object.__setattr__(self, "scores", scores)
        object.__setattr__(self, "labels", labels)

    @classmethod
    def of(cls: type[Self], scores: ArrayLike, labels: ArrayLike) -> Self:
        return cls(np.asarray(scores), np.asarray(labels))

    def __len__(self: Self) -> int:
        return len(self.scores)

    @property
    def n_positive(self: Self) -> int:
        return int(self.labels.sum())

    @property
    def n_negative(self: Self) -> int:
        return len(self) - self.n_positive

    @property
    def prevalence(self: Self) -> float:
        return self.n_positive / len(self)


@dataclass(slots=True, frozen=True)
class Confusion:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self: Self) -> int:
        return self.tp + self.fp + self.tn + self.fn


@dataclass(slots=True, frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float


@dataclass(slots=True, frozen=True)
class MetricsReport:
    """
    Everything reported for one model at one threshold.
    """

    pr_auc: float
    balanced_accuracy: float
    threshold: float
    fraud: ClassMetrics
    not_fraud: ClassMetrics

    def to_row(self: Self) -> dict[str, float]:
        return {
            "pr_auc": self.pr_auc,
            "balanced_accuracy": self.balanced_accuracy,
            "threshold": self.threshold,
            "fraud_precision": self.fraud.precision,
            "fraud_recall": self.fraud.recall,
            "fraud_f1": self.fraud.f1,
            "not_fraud_precision": self.not_fraud.precision,
            "not_fraud_recall": self.not_fraud.recall,
            "not_fraud_f1": self.not_fraud.f1,
        }

    @classmethod
    def from_row(cls: type[Self], row: dict[str, float]) -> Self:
        return cls(
            pr_auc=row["pr_auc"],
            balanced_accuracy=row["balanced_accuracy"],
            threshold=row["threshold"],
            fraud=ClassMetrics(row["fraud_precision"], row["fraud_recall"], row["fraud_f1"]),
            not_fraud=ClassMetrics(row["not_fraud_precision"], row["not_fraud_recall"], row["not_fraud_f1"]),
        )


@dataclass(slots=True, frozen=True)
class MetricUtils:
    def confusion_at(self: Self, s: ScoredSet, threshold: float) -> Confusion:
        if not 0 <= threshold <= 1:
            msg = f"Threshold {threshold} is not in [0, 1]"
            raise ValueOutOfRangeError(msg, value=threshold, minimum=0, maximum=1)
        pred = s.scores >= threshold
        pos = s.labels == 1
        return Confusion(
            tp=int(np.sum(pred & pos)),
            fp=int(np.sum(pred & ~pos)),
            tn=int(np.sum(~pred & ~pos)),
            fn=int(np.sum(~pred & pos)),
        )

    def safe_div(self: Self, a: float, b: float) -> float:
        """`a / b`, or 0 when `b` is 0."""
        return 0.0 if b == 0 else a / b

    def f1(self: Self, precision: float, recall: float) -> float:
        return self.safe_div(2 * precision * recall, precision + recall)

    def prf1(self: Self, counts: Confusion, positive_class: int = 1) -> ClassMetrics:
        """
        Precision, recall and F1 for one class; any 0/0 is 0.
        """
        if positive_class == 1:
            hit, false_alarm, miss = counts.tp, counts.fp, counts.fn
        elif positive_class == 0:
            hit, false_alarm, miss = counts.tn, counts.fn, counts.fp
        else:
            msg = f"Class must be 0 or 1, not {positive_class}"
            raise ValueOutOfRangeError(msg, value=positive_class, minimum=0, maximum=1)
        p = self.safe_div(hit, hit + false_alarm)
        r = self.safe_div(hit, hit + miss)
        return ClassMetrics(p, r, self.f1(p, r))

    def balanced_accuracy(self: Self, counts: Confusion) -> float:
        """Mean of the two class recalls."""
        if counts.tp + counts.fn == 0 or counts.tn + counts.fp == 0:
            msg = "Balanced accuracy needs both classes present"
            raise UndefinedMetricError(msg, positives=counts.tp + counts.fn, negatives=counts.tn + counts.fp)
        return (counts.tp / (counts.tp + counts.fn) + counts.tn / (counts.tn + counts.fp)) / 2

    def threshold_groups(self: Self, s: ScoredSet) -> tuple[NDArray[np.float64], NDArray[np.int64], NDArray[np.int64]]:
        """
        Distinct scores in descending order, with cumulative predicted positives and true positives
        when thresholding at each.
        """
        order = np.argsort(-s.scores, kind="stable")
        scores = s.scores[order]
        hits = np.cumsum(s.labels[order])
        last = np.ones(len(scores), dtype=bool)
        last[:-1] = scores[:-1] != scores[1:]
        ends = np.flatnonzero(last)
        return scores[ends], ends + 1, hits[ends]

    def pr_auc(self: Self, s: ScoredSet) -> float:
        """
        Average precision: precision at each distinct threshold, weighted by the recall it adds.
        Equal scores form one threshold.
        """
        n_pos = s.n_positive
        if n_pos == 0:
            msg = "PR AUC is undefined without positives"
            raise UndefinedMetricError(msg)
        _, predicted, tp = self.threshold_groups(s)
        new_hits = np.diff(tp, prepend=0)
        return float(np.sum(tp / predicted * new_hits) / n_pos)

    def tune_threshold(self: Self, s: ScoredSet, min_recall: float = 0.80) -> float:
        """
        The largest distinct score at which fraud recall is at least `min_recall`.
        """
        if not 0 <= min_recall <= 1:
            msg = f"min_recall {min_recall} is not in [0, 1]"
            raise ValueOutOfRangeError(msg, value=min_recall, minimum=0, maximum=1)
        n_pos = s.n_positive
        if n_pos == 0:
            msg = "Cannot tune a recall threshold without positives"
            raise UndefinedMetricError(msg)
        thresholds, _, tp = self.threshold_groups(s)
        ok = np.flatnonzero(tp / n_pos >= min_recall)
        return float(thresholds[ok[0]])

    def evaluate(self: Self, s: ScoredSet, threshold: float) -> MetricsReport:
        counts = self.confusion_at(s, threshold)
        return MetricsReport(
            pr_auc=self.pr_auc(s),
            balanced_accuracy=self.balanced_accuracy(counts),
            threshold=threshold,
            fraud=self.prf1(counts, 1),
            not_fraud=self.prf1(counts, 0),
        )


MetricTools = MetricUtils()
