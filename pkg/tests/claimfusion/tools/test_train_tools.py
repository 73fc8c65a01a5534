# SPDX-FileCopyrightText: Copyright 2023, Contributors to claimfusion
# SPDX-PackageHomePage: https://github.com/claimfusion/claimfusion
# SPDX-License-Identifier: Apache-2.0
from typing import Self

import numpy as np
import pytest

from claimfusion.core.exceptions import ConfigInvalidError, NumericFailureError, ValueIllegalError
from claimfusion.core.models import Dims, build_unimodal
from claimfusion.core.records import ClaimRecord
from claimfusion.core.tensor import Parameters
from claimfusion.tools.feature_tools import FeatureTools
from claimfusion.tools.train_tools import AdamState, EarlyStopping, TrainConfig, TrainTools


class TestTrainConfig:
    def test_defaults(self: Self) -> None:
        cfg = TrainConfig()
        assert cfg.lr == 1e-3
        assert cfg.batch_size == 64
        assert cfg.patience == 3
        assert cfg.seeds == (0, 1, 2, 3, 4)
        assert cfg.to_dict()["ratios"] == [0.8, 0.1, 0.1]

    @pytest.mark.parametrize(
        "kwargs",
        [
            {"batch_size": 63},
            {"lr": 0},
            {"patience": 0},
            {"seeds": ()},
            {"monitor": "accuracy"},
            {"ratios": (0.8, 0.1, 0.2)},
            {"dtype": "float16"},
            {"min_recall": 1.5},
        ],
    )
    def test_invalid(self: Self, kwargs: dict) -> None:
        with pytest.raises(ConfigInvalidError):
            TrainConfig(**kwargs)


class TestSplit:
    def test_counts(self: Self) -> None:
        labels = np.zeros(1000, dtype=np.int64)
        labels[np.random.default_rng(1).choice(1000, size=30, replace=False)] = 1
        split = TrainTools.split_stratified(labels, (0.8, 0.1, 0.1), seed=0)
        assert (len(split.train), len(split.val), len(split.test)) == (800, 100, 100)
        assert [int(labels[s].sum()) for s in (split.train, split.val, split.test)] == [24, 3, 3]
        union = np.concatenate([split.train, split.val, split.test])
        assert len(np.unique(union)) == 1000
        assert np.all(np.diff(split.val) > 0)

    def test_deterministic(self: Self) -> None:
        labels = np.array([0, 1] * 20)
        a = TrainTools.split_stratified(labels, seed=5)
        b = TrainTools.split_stratified(labels, seed=5)
        c = TrainTools.split_stratified(labels, seed=6)
        np.testing.assert_array_equal(a.test, b.test)
        assert not np.array_equal(a.train, c.train)

    def test_small_classes(self: Self) -> None:
        # each class still gives validation and test one claim
        split = TrainTools.split_stratified([0, 0, 0, 1, 1, 1, 0, 0, 0, 0])
        for part in (split.val, split.test):
            assert len(part) == 2
        with pytest.raises(ValueIllegalError):
            TrainTools.split_stratified([0, 0, 0, 0, 1, 1])
        with pytest.raises(ConfigInvalidError):
            TrainTools.split_stratified([0, 1] * 5, (0.5, 0.5, 0.0))

    def test_no_training_claims(self: Self) -> None:
        # 4 claims per class: 2 to validation, 2 to test, none left to train on
        with pytest.raises(ConfigInvalidError):
            TrainTools.split_stratified([0, 1] * 4, (0.1, 0.5, 0.4))


class TestBatches:
    def test_balanced(self: Self) -> None:
        labels = np.array([1] * 10 + [0] * 90)
        ids = np.arange(100) + 1000
        batches = TrainTools.balanced_batches(ids, labels, 16, np.random.default_rng(0))
        assert len(batches) == 12
        seen = set()
        for batch in batches:
            assert len(batch) == 16
            assert int(np.sum(batch < 1010)) == 8
            seen |= set(batch.tolist())
        # the majority class is covered
        assert set(range(1010, 1100)) <= seen

    def test_invalid(self: Self) -> None:
        rng = np.random.default_rng(0)
        with pytest.raises(ConfigInvalidError):
            TrainTools.balanced_batches(np.arange(4), [0, 1, 0, 1], 3, rng)
        with pytest.raises(ValueIllegalError):
            TrainTools.balanced_batches(np.arange(4), [0, 0, 0, 0], 2, rng)


class TestAdam:
    def test_first_step(self: Self) -> None:
        params = Parameters()
        params.add("w", np.array([1.0, -2.0]))
        cfg = TrainConfig(lr=0.1)
        state = TrainTools.adam_step(params, {"w": np.array([0.5, -3.0])}, AdamState(), cfg)
        assert state.t == 1
        # the first bias-corrected step moves each entry by lr against its gradient's sign
        np.testing.assert_allclose(params["w"], [0.9, -1.9], atol=1e-6)

    def test_frozen(self: Self) -> None:
        params = Parameters()
        params.add("w", np.ones(2))
        params.add("emb", np.ones(2), trainable=False)
        TrainTools.adam_step(params, {"w": np.ones(2), "emb": np.ones(2)}, AdamState(), TrainConfig())
        np.testing.assert_array_equal(params["emb"], [1.0, 1.0])

    def test_non_finite(self: Self) -> None:
        params = Parameters()
        params.add("a", np.ones(2))
        params.add("b", np.ones(2))
        state = AdamState()
        with pytest.raises(NumericFailureError) as e:
            TrainTools.adam_step(params, {"a": np.ones(2), "b": np.array([np.inf, 0.0])}, state, TrainConfig())
        assert e.value.parameter == "b"
        assert e.value.step == 1
        # nothing was updated
        assert state.t == 0
        np.testing.assert_array_equal(params["a"], [1.0, 1.0])


class TestEarlyStopping:
    def test_trace(self: Self) -> None:
        stopper = EarlyStopping(2)
        trace = [0.5, 0.6, 0.6, 0.55]
        improved = [stopper.update(i + 1, v, lambda: {"epoch": np.array(i)}) for i, v in enumerate(trace)]
        assert improved == [True, True, False, False]
        assert stopper.best_epoch == 2
        assert stopper.best_value == 0.6
        assert stopper.should_stop

    def test_reset(self: Self) -> None:
        stopper = EarlyStopping(2)
        stopper.update(1, 0.5)
        stopper.update(2, 0.4)
        stopper.update(3, 0.7)
        assert stopper.bad_epochs == 0
        assert not stopper.should_stop
        with pytest.raises(ConfigInvalidError):
            EarlyStopping(0)


class TestSummarize:
    def test_summarize(self: Self) -> None:
        mean, std = TrainTools.summarize([0.8, 0.7, 0.9])
        assert mean == pytest.approx(0.8)
        assert std == pytest.approx(0.1)
        assert TrainTools.summarize([0.5]) == (0.5, 0.0)
        with pytest.raises(ValueIllegalError):
            TrainTools.summarize([])


class TestFit:
    def test_multi_seed(
        self: Self,
        tiny_records: list[ClaimRecord],
        tiny_dims: Dims,
        tiny_train: TrainConfig,
    ) -> None:
        data = FeatureTools.batch(tiny_records)
        cfg = build_unimodal("spud", dims=tiny_dims).config
        epochs = []
        summary = TrainTools.multi_seed_run(
            cfg,
            data,
            tiny_train.replace(seeds=(0, 1)),
            on_epoch=lambda seed, rec: epochs.append((seed, rec.epoch)),
        )
        assert [r.seed for r in summary.runs] == [0, 1]
        assert summary.n_params == 126 * 8 + 8 + 8 * 2 + 2
        assert set(summary.mean) == set(summary.std)
        assert 0 <= summary.mean["pr_auc"] <= 1
        assert (0, 1) in epochs
        assert (1, 1) in epochs
        for run in summary.runs:
            trained = run.trained
            assert 1 <= trained.best_epoch <= len(trained.history) <= tiny_train.max_epochs
            assert trained.val_report.fraud.recall >= tiny_train.min_recall
            assert run.test_report.threshold == trained.threshold

    def test_deterministic(self: Self, tiny_records: list[ClaimRecord], tiny_dims: Dims, tiny_train: TrainConfig) -> None:
        data = FeatureTools.batch(tiny_records)
        split = TrainTools.split_stratified(data.labels, seed=0)
        cfg = build_unimodal("struct", dims=tiny_dims).config
        a = TrainTools.run_seed(cfg, data, split, tiny_train, seed=7)
        b = TrainTools.run_seed(cfg, data, split, tiny_train, seed=7)
        assert a.test_report == b.test_report
        for name, arr in a.trained.model.params.items():
            np.testing.assert_array_equal(arr, b.trained.model.params[name])


if __name__ == "__main__":
    pytest.main()
