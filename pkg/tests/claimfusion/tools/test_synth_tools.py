# SPDX-FileCopyrightText: Copyright 2023, Contributors to claimfusion
# SPDX-PackageHomePage: https://github.com/claimfusion/claimfusion
# SPDX-License-Identifier: Apache-2.0
from typing import Self

import numpy as np
import pytest

from claimfusion.core.exceptions import ConfigInvalidError, ValueOutOfRangeError
from claimfusion.core.records import STRUCT_DIM
from claimfusion.tools.metric_tools import MetricTools, ScoredSet
from claimfusion.tools.synth_tools import STRUCT_CARDINALITIES, Knowledge, SynthConfig, SynthDraw, SynthTools


class TestSynthConfig:
    def test_defaults(self: Self) -> None:
        cfg = SynthConfig()
        assert cfg.n_claims == 20000
        assert cfg.fraud_rate == 0.03
        assert cfg.images == (1, 6)
        assert sum(STRUCT_CARDINALITIES) == STRUCT_DIM

    @pytest.mark.parametrize("rate", [0.0, 1.0, 1.5, -0.1])
    def test_fraud_rate(self: Self, rate: float) -> None:
        with pytest.raises(ValueOutOfRangeError):
            SynthConfig(fraud_rate=rate)

    def test_invalid(self: Self) -> None:
        with pytest.raises(ConfigInvalidError):
            SynthConfig(images=(0, 2))
        with pytest.raises(ConfigInvalidError):
            SynthConfig(images=(3, 2))
        with pytest.raises(ConfigInvalidError):
            SynthConfig(visual_dim=3)
        with pytest.raises(ConfigInvalidError):
            SynthConfig(n_claims=0)
        with pytest.raises(ValueOutOfRangeError):
            SynthConfig(text_missing=1.0)


class TestSynthTools:
    def test_records(self: Self, tiny_draw: SynthDraw) -> None:
        records = tiny_draw.records
        assert len(records) == 80
        assert records[0].claim_id == "claim-0000000"
        assert records[79].claim_id == "claim-0000079"
        assert all(1 <= r.n_images <= 2 for r in records)
        assert all(r.has_text for r in records)
        for r in records:
            assert r.struct_onehot.sum() == len(STRUCT_CARDINALITIES)
        assert tiny_draw.summaries.shape == (80, 4)

    def test_absent_parts(self: Self, tiny_draw: SynthDraw) -> None:
        images = [img for r in tiny_draw.records for img in r.images]
        assert any(img.absent_parts for img in images)
        for img in images:
            for i in img.absent_parts:
                assert img.part_vis[i] == 0.0
                assert img.ud_score[i] == 0.0

    def test_deterministic(self: Self) -> None:
        cfg = SynthConfig(n_claims=12, seed=9)
        a = SynthTools.generate_synthetic(cfg)
        b = SynthTools.generate_synthetic(cfg)
        assert a.intercept == b.intercept
        for x, y in zip(a.records, b.records, strict=True):
            assert x.label == y.label
            np.testing.assert_array_equal(x.images[0].cds, y.images[0].cds)
            np.testing.assert_array_equal(x.text_emb, y.text_emb)
        c = SynthTools.generate_synthetic(cfg.replace(seed=10))
        assert not np.array_equal(a.records[0].images[0].cds, c.records[0].images[0].cds)

    def test_text_missing(self: Self) -> None:
        draw = SynthTools.generate_synthetic(SynthConfig(n_claims=200, text_missing=0.5, seed=1))
        n = sum(not r.has_text for r in draw.records)
        assert 60 < n < 140

    def test_calibrate(self: Self) -> None:
        logits = np.random.default_rng(0).normal(size=1000)
        b0 = SynthTools.calibrate_intercept(logits, 0.1)
        assert np.mean(1 / (1 + np.exp(-(b0 + logits)))) == pytest.approx(0.1, abs=1e-9)

    def test_expected_band(self: Self) -> None:
        lo, hi = SynthTools.expected_fraud_band(SynthConfig(n_claims=10000, fraud_rate=0.1))
        assert lo == pytest.approx(910.0)
        assert hi == pytest.approx(1090.0)

    def test_oracle(self: Self, tiny_draw: SynthDraw) -> None:
        both = SynthTools.oracle_scores(tiny_draw, Knowledge.BOTH)
        visual = SynthTools.oracle_scores(tiny_draw, "visual")
        assert both.shape == visual.shape == (80,)
        assert np.all((visual > 0) & (visual < 1))
        # averaging out what the oracle cannot see keeps the overall rate
        assert np.mean(visual) == pytest.approx(np.mean(both), abs=0.1)

    @pytest.mark.slow
    def test_cross_modal_signal(self: Self) -> None:
        draw = SynthTools.generate_synthetic(SynthConfig(n_claims=20000, fraud_rate=0.1, seed=0))
        lo, hi = SynthTools.expected_fraud_band(draw.config)
        assert lo <= draw.labels.sum() <= hi
        auc = {
            k: MetricTools.pr_auc(ScoredSet.of(SynthTools.oracle_scores(draw, k), draw.labels)) for k in Knowledge
        }
        assert auc[Knowledge.BOTH] > auc[Knowledge.VISUAL]
        assert auc[Knowledge.BOTH] > auc[Knowledge.TABULAR]


if __name__ == "__main__":
    pytest.main()
