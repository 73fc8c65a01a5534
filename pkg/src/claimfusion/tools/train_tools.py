# SPDX-FileCopyrightText: Copyright 2023, Contributors to claimfusion
# SPDX-PackageHomePage: https://github.com/claimfusion/claimfusion
# SPDX-License-Identifier: Apache-2.0
"""
Training protocol: stratified splits, class-balanced mini-batches, Adam,
early stopping on a validation metric, and repeated runs over seeds.
"""

from __future__ import annotations

import dataclasses
import logging
import math
from collections.abc import Callable, Mapping, Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Self

import numpy as np
from numpy.typing import ArrayLike, NDArray

from claimfusion.core.exceptions import (
    ConfigInvalidError,
    NonFiniteError,
    NumericFailureError,
    ValueIllegalError,
)
from claimfusion.core.iterators import SeqIterator
from claimfusion.core.models import Model, ModelConfig, build_model, compute_loss, forward_batch, score
from claimfusion.core.records import ClaimBatch
from claimfusion.core.tensor import Parameters, backward
from claimfusion.tools.metric_tools import MetricsReport, MetricTools, ScoredSet

__all__ = [
    "MONITORS",
    "TrainConfig",
    "SplitIndices",
    "AdamState",
    "EarlyStopping",
    "EpochRecord",
    "TrainedModel",
    "SeedRun",
    "SeedSummary",
    "TrainUtils",
    "TrainTools",
]

logger = logging.getLogger("claimfusion")

MONITORS = (
    "pr_auc",
    "balanced_accuracy",
    "fraud_precision",
    "fraud_recall",
    "fraud_f1",
    "not_fraud_precision",
    "not_fraud_recall",
    "not_fraud_f1",
)


@dataclass(slots=True, frozen=True, kw_only=True)
class TrainConfig:
    """
    Training hyperparameters.

    Attributes:
        lr: Adam learning rate
        batch_size: Claims per batch; half from each class
        max_epochs: Epoch budget; one epoch is one pass over the majority class
        patience: Epochs without a strict improvement before stopping
        seeds: One run per seed
        monitor: Validation metric for early stopping (higher is better)
        betas: Adam decay rates
        eps: Adam denominator term
        ratios: Train/validation/test fractions
        split_seed: Seed for the shared split
        min_recall: Fraud recall the tuned threshold must reach on validation
        dtype: Parameter storage type
    """

    lr: float = 1e-3
    batch_size: int = 64
    max_epochs: int = 50
    patience: int = 3
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    monitor: str = "pr_auc"
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    ratios: tuple[float, float, float] = (0.8, 0.1, 0.1)
    split_seed: int = 0
    min_recall: float = 0.80
    dtype: str = "float32"

    def __post_init__(self: Self) -> None:
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "betas", tuple(float(b) for b in self.betas))
        object.__setattr__(self, "ratios", tuple(float(r) for r in self.ratios))
        checks = [
            (self.lr > 0, "lr", self.lr, "must be positive"),
            (self.batch_size >= 2 and self.batch_size % 2 == 0, "batch_size", self.batch_size, "must be even"),
            (self.max_epochs >= 1, "max_epochs", self.max_epochs, "must be at least 1"),
            (self.patience >= 1, "patience", self.patience, "must be at least 1"),
            (len(self.seeds) >= 1, "seeds", self.seeds, "needs at least one seed"),
            (self.monitor in MONITORS, "monitor", self.monitor, f"must be one of {MONITORS}"),
            (len(self.betas) == 2 and all(0 <= b < 1 for b in self.betas), "betas", self.betas, "must be in [0, 1)"),
            (self.eps > 0, "eps", self.eps, "must be positive"),
            (
                len(self.ratios) == 3 and min(self.ratios) > 0 and abs(sum(self.ratios) - 1) < 1e-9,
                "ratios",
                self.ratios,
                "must be three positive fractions summing to 1",
            ),
            (0 <= self.min_recall <= 1, "min_recall", self.min_recall, "must be in [0, 1]"),
            (self.dtype in ("float32", "float64"), "dtype", self.dtype, "must be float32 or float64"),
        ]
        for ok, key, value, problem in checks:
            if not ok:
                msg = f"{key} {problem}; got {value}"
                raise ConfigInvalidError(msg, key=key, value=value)

    def replace(self: Self, **kwargs: Any) -> TrainConfig:
        return dataclasses.replace(self, **kwargs)

    def to_dict(self: Self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        return {k: list(v) if isinstance(v, tuple) else v for k, v in d.items()}


@dataclass(slots=True, frozen=True)
class SplitIndices:
    """Sorted, disjoint row indices."""

    train: NDArray[np.int64]
    val: NDArray[np.int64]
    test: NDArray[np.int64]


@dataclass(slots=True)
class AdamState:
    m: dict[str, NDArray[np.float64]] = field(default_factory=dict)
    v: dict[str, NDArray[np.float64]] = field(default_factory=dict)
    t: int = 0


class EarlyStopping:
    """
    Tracks the best monitor value; stops after `patience` epochs without a strict increase.
    """

    def __init__(self: Self, patience: int) -> None:
        if patience < 1:
            msg = f"Patience must be at least 1, not {patience}"
            raise ConfigInvalidError(msg, key="patience", value=patience)
        self.patience = patience
        self.best_value = -math.inf
        self.best_epoch = 0
        self.best_state: dict[str, NDArray] | None = None
        self.bad_epochs = 0

    def update(self: Self, epoch: int, value: float, state: Callable[[], dict[str, NDArray]] | None = None) -> bool:
        """
        Records an epoch's monitor value; `state` is called only on improvement.

        Returns:
            Whether the epoch improved on the best so far
        """
        if value > self.best_value:
            self.best_value, self.best_epoch, self.bad_epochs = value, epoch, 0
            if state is not None:
                self.best_state = state()
            return True
        self.bad_epochs += 1
        return False

    @property
    def should_stop(self: Self) -> bool:
        return self.bad_epochs >= self.patience


@dataclass(slots=True, frozen=True)
class EpochRecord:
    epoch: int
    step: int
    train_loss: float
    monitor: str
    value: float
    best_epoch: int
    bad_epochs: int

    def to_dict(self: Self) -> dict[str, Any]:
        return dataclasses.asdict(self)


@dataclass(slots=True, frozen=True)
class TrainedModel:
    """
    Attributes:
        model: Parameters restored to the best epoch
        history: One record per epoch run
        best_epoch: Epoch whose parameters were restored
        threshold: Tuned on validation scores
        val_report: Validation metrics at that threshold
    """

    model: Model
    history: tuple[EpochRecord, ...]
    best_epoch: int
    threshold: float
    val_report: MetricsReport


@dataclass(slots=True, frozen=True)
class SeedRun:
    seed: int
    trained: TrainedModel
    test_report: MetricsReport


@dataclass(slots=True, frozen=True)
class SeedSummary:
    """Mean and sample standard deviation of every test metric over seeds."""

    runs: tuple[SeedRun, ...]
    mean: dict[str, float]
    std: dict[str, float]

    @property
    def n_params(self: Self) -> int:
        return self.runs[0].trained.model.n_params


@dataclass(slots=True, frozen=True)
class TrainUtils:
    def split_stratified(
        self: Self,
        labels: ArrayLike,
        ratios: Sequence[float] = (0.8, 0.1, 0.1),
        seed: int = 0,
    ) -> SplitIndices:
        """
        Shuffles each class, then cuts it proportionally.
        Validation and test get at least one claim per class.
        """
        y = np.asarray(labels, dtype=np.int64)
        if len(ratios) != 3 or min(ratios) <= 0 or abs(sum(ratios) - 1) > 1e-9:
            msg = f"Ratios must be three positive fractions summing to 1, not {ratios}"
            raise ConfigInvalidError(msg, key="ratios", value=list(ratios))
        rng = np.random.default_rng(seed)
        parts: list[list[NDArray[np.int64]]] = [[], [], []]
        for c in (0, 1):
            members = np.flatnonzero(y == c)
            if len(members) < 3:
                msg = f"Class {c} has {len(members)} claims; stratified splitting needs at least 3"
                raise ValueIllegalError(msg, value=len(members))
            members = rng.permutation(members)
            n = len(members)
            n_val = max(1, round(n * ratios[1]))
            n_test = max(1, round(n * ratios[2]))
            n_train = n - n_val - n_test
            if n_train < 1:
                msg = f"Ratios {tuple(ratios)} leave class {c} ({n} claims) with no training claims"
                raise ConfigInvalidError(msg, key="ratios", value=list(ratios))
            parts[0].append(members[:n_train])
            parts[1].append(members[n_train : n_train + n_val])
            parts[2].append(members[n_train + n_val :])
        train, val, test = (np.sort(np.concatenate(p)).astype(np.int64) for p in parts)
        logger.debug(f"Split {len(y)} claims into {len(train)}/{len(val)}/{len(test)}")
        return SplitIndices(train, val, test)

    def balanced_batches(
        self: Self,
        ids: ArrayLike,
        labels: ArrayLike,
        batch_size: int,
        rng: np.random.Generator,
    ) -> SeqIterator[NDArray[np.int64]]:
        """
        One epoch of batches, each exactly half fraud and half not fraud.
        The majority class is covered once (topped up at random to fill the last batch);
        the minority class is drawn with replacement.
        """
        ids = np.asarray(ids, dtype=np.int64)
        y = np.asarray(labels, dtype=np.int64)
        if batch_size < 2 or batch_size % 2 != 0:
            msg = f"Batch size must be even, not {batch_size}"
            raise ConfigInvalidError(msg, key="batch_size", value=batch_size)
        pos, neg = ids[y == 1], ids[y == 0]
        if len(pos) == 0 or len(neg) == 0:
            msg = f"Both classes must be present; got {len(pos)} fraud and {len(neg)} not fraud"
            raise ValueIllegalError(msg, value=(len(pos), len(neg)))
        major, minor = (neg, pos) if len(neg) >= len(pos) else (pos, neg)
        half = batch_size // 2
        n_batches = math.ceil(2 * len(major) / batch_size)
        needed = n_batches * half
        major_draw = rng.permutation(major)
        if needed > len(major):
            major_draw = np.concatenate([major_draw, rng.choice(major, size=needed - len(major), replace=True)])
        minor_draw = rng.choice(minor, size=needed, replace=True)
        batches = [
            rng.permutation(np.concatenate([major_draw[i * half : (i + 1) * half], minor_draw[i * half : (i + 1) * half]]))
            for i in range(n_batches)
        ]
        return SeqIterator(batches)

    def adam_step(
        self: Self,
        params: Parameters,
        grads: Mapping[str, NDArray],
        state: AdamState,
        cfg: TrainConfig,
    ) -> AdamState:
        """
        One bias-corrected Adam update, in place, in registry order.

        Raises:
            NumericFailureError: If any gradient is non-finite; nothing is updated
        """
        for name in params.trainable_names:
            if not np.all(np.isfinite(grads[name])):
                msg = f"Non-finite gradient for {name} at step {state.t + 1}"
                raise NumericFailureError(msg, step=state.t + 1, parameter=name)
        state.t += 1
        b1, b2 = cfg.betas
        bc1 = 1.0 - b1**state.t
        bc2 = 1.0 - b2**state.t
        for name in params.trainable_names:
            g = np.asarray(grads[name], dtype=np.float64)
            p = params[name]
            if p.shape != g.shape:
                msg = f"Gradient for {name} has shape {g.shape}, not {p.shape}"
                raise NumericFailureError(msg, step=state.t, parameter=name)
            m = state.m.setdefault(name, np.zeros(p.shape))
            v = state.v.setdefault(name, np.zeros(p.shape))
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            update = (cfg.lr / bc1) * m / (np.sqrt(v / bc2) + cfg.eps)
            p -= update.astype(p.dtype, copy=False)
        return state

    def evaluate(self: Self, model: Model, data: ClaimBatch, threshold: float) -> MetricsReport:
        return MetricTools.evaluate(ScoredSet.of(score(model, data), data.labels), threshold)

    def monitor_value(self: Self, model: Model, val: ClaimBatch, cfg: TrainConfig) -> float:
        s = ScoredSet.of(score(model, val), val.labels)
        if cfg.monitor == "pr_auc":
            return MetricTools.pr_auc(s)
        threshold = MetricTools.tune_threshold(s, cfg.min_recall)
        return MetricTools.evaluate(s, threshold).to_row()[cfg.monitor]

    def fit(
        self: Self,
        model: Model,
        data: ClaimBatch,
        split: SplitIndices,
        cfg: TrainConfig,
        *,
        seed: int = 0,
        on_epoch: Callable[[EpochRecord], None] | None = None,
    ) -> TrainedModel:
        """
        Trains in place and restores the parameters of the best validation epoch.

        Raises:
            NumericFailureError: On a non-finite loss or gradient
        """
        train, val = data.take(split.train), data.take(split.val)
        rng = np.random.default_rng([seed, 0x5EED])
        state = AdamState()
        stopper = EarlyStopping(cfg.patience)
        history: list[EpochRecord] = []
        label = model.config.label
        for epoch in range(1, cfg.max_epochs + 1):
            losses = []
            batches = self.balanced_batches(np.arange(len(train)), train.labels, cfg.batch_size, rng)
            for idx in batches:
                batch = train.take(idx)
                try:
                    out = forward_batch(model, batch, training=True, seed=seed, step=state.t)
                    loss = compute_loss(model, out, batch.labels)
                except NonFiniteError as e:
                    msg = f"{label}: non-finite value in {e.op} at step {state.t + 1}"
                    logger.error(msg)
                    raise NumericFailureError(msg, step=state.t + 1) from e
                self.adam_step(model.params, backward(out.graph, loss.total), state, cfg)
                losses.append(float(loss.total.value))
                logger.debug(f"{label}: step {state.t} loss {losses[-1]:.5f}")
            value = self.monitor_value(model, val, cfg)
            stopper.update(epoch, value, model.params.snapshot)
            record = EpochRecord(
                epoch=epoch,
                step=state.t,
                train_loss=float(np.mean(losses)),
                monitor=cfg.monitor,
                value=value,
                best_epoch=stopper.best_epoch,
                bad_epochs=stopper.bad_epochs,
            )
            history.append(record)
            if on_epoch is not None:
                on_epoch(record)
            logger.info(
                f"{label} seed {seed} epoch {epoch}: loss {record.train_loss:.4f}, "
                f"val {cfg.monitor} {value:.4f} (best epoch {stopper.best_epoch}, patience {stopper.bad_epochs}/{cfg.patience})"
            )
            if stopper.should_stop:
                break
        if stopper.best_state is not None:
            if stopper.best_epoch != history[-1].epoch:
                logger.warning(f"{label} seed {seed}: restoring epoch {stopper.best_epoch} of {history[-1].epoch}")
            model.params.assign(stopper.best_state)
        val_scores = ScoredSet.of(score(model, val), val.labels)
        threshold = MetricTools.tune_threshold(val_scores, cfg.min_recall)
        return TrainedModel(
            model=model,
            history=tuple(history),
            best_epoch=stopper.best_epoch,
            threshold=threshold,
            val_report=MetricTools.evaluate(val_scores, threshold),
        )

    def summarize(self: Self, values: Sequence[float]) -> tuple[float, float]:
        """Mean and sample standard deviation (0 for a single value)."""
        arr = np.asarray(values, dtype=np.float64)
        if len(arr) == 0:
            msg = "Nothing to summarize"
            raise ValueIllegalError(msg)
        std = float(np.std(arr, ddof=1)) if len(arr) > 1 else 0.0
        return float(np.mean(arr)), std

    def summarize_reports(self: Self, reports: Sequence[MetricsReport]) -> tuple[dict[str, float], dict[str, float]]:
        rows = [r.to_row() for r in reports]
        mean, std = {}, {}
        for key in rows[0]:
            mean[key], std[key] = self.summarize([r[key] for r in rows])
        return mean, std

    def run_seed(
        self: Self,
        config: ModelConfig,
        data: ClaimBatch,
        split: SplitIndices,
        cfg: TrainConfig,
        seed: int,
        on_epoch: Callable[[EpochRecord], None] | None = None,
    ) -> SeedRun:
        model = build_model(config, seed=seed, dtype=np.dtype(cfg.dtype))
        trained = self.fit(model, data, split, cfg, seed=seed, on_epoch=on_epoch)
        test_report = self.evaluate(trained.model, data.take(split.test), trained.threshold)
        return SeedRun(seed, trained, test_report)

    def multi_seed_run(
        self: Self,
        config: ModelConfig,
        data: ClaimBatch,
        cfg: TrainConfig,
        *,
        split: SplitIndices | None = None,
        threads: int = 1,
        on_epoch: Callable[[int, EpochRecord], None] | None = None,
    ) -> SeedSummary:
        """
        Trains once per seed on a shared split and summarizes the test metrics.
        Seeds may run on several threads; each run owns its own model.
        """
        if split is None:
            split = self.split_stratified(data.labels, cfg.ratios, cfg.split_seed)

        def _one(seed: int) -> SeedRun:
            sink = None if on_epoch is None else (lambda r: on_epoch(seed, r))
            return self.run_seed(config, data, split, cfg, seed, sink)

        if threads > 1 and len(cfg.seeds) > 1:
            with ThreadPoolExecutor(max_workers=threads) as pool:
                runs = tuple(pool.map(_one, cfg.seeds))
        else:
            runs = tuple(_one(s) for s in cfg.seeds)
        mean, std = self.summarize_reports([r.test_report for r in runs])
        logger.info(f"{config.label}: test PR AUC {mean['pr_auc']:.4f} ± {std['pr_auc']:.4f} over {len(runs)} seeds")
        return SeedSummary(runs, mean, std)


TrainTools = TrainUtils()
