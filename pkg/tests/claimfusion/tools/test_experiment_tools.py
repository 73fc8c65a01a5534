# SPDX-FileCopyrightText: Copyright 2023, Contributors to claimfusion
# SPDX-PackageHomePage: https://github.com/claimfusion/claimfusion
# SPDX-License-Identifier: Apache-2.0
from pathlib import Path
from typing import Self

import numpy as np
import pytest

from claimfusion.core.dot_dict import NestedDotDict
from claimfusion.core.enums import Arch, Feature, FusionKind
from claimfusion.core.exceptions import ConfigInvalidError, ConfigMismatchError, ValueIllegalError
from claimfusion.core.models import DESK_DIMS, Dims, ModelConfig
from claimfusion.core.records import ClaimRecord
from claimfusion.tools.experiment_tools import PRESETS, ExperimentKind, ExperimentSpec, ExperimentTools
from claimfusion.tools.feature_tools import FeatureTools
from claimfusion.tools.io_tools import IoTools
from claimfusion.tools.report_tools import PUBLISHED_MULTIMODAL, ReportTools
from claimfusion.tools.synth_tools import SynthConfig
from claimfusion.tools.train_tools import SplitIndices, TrainConfig

_SYNTH = SynthConfig(n_claims=60, fraud_rate=0.3, images=(1, 2), seed=5)


def _spec(out: Path, train: TrainConfig, **kwargs) -> ExperimentSpec:
    return ExperimentSpec(kind=ExperimentKind.SINGLE if "models" in kwargs else "unimodal", out=out, synth=_SYNTH, train=train, **kwargs)


class TestConfigs:
    def test_slug(self: Self) -> None:
        assert ExperimentTools.slug("CDS + SPUD / BLOCK Tucker") == "cds-spud-block-tucker"
        assert ExperimentTools.slug("Concat MLP - w/o Text") == "concat-mlp-w-o-text"

    def test_counts(self: Self) -> None:
        assert [c.label for c in ExperimentTools.unimodal_configs()] == ["CDS", "UD", "SPUD", "Struct", "Text"]
        grid = ExperimentTools.grid_configs()
        assert len(grid) == 56
        assert len({c.label for c in grid}) == 56
        assert grid[0].label == "CDS + SPUD / Concat MLP"
        assert grid[6].label == "CDS + SPUD / MFB"
        assert grid[-1].features == (Feature.STRUCT, Feature.TEXT)
        suite = ExperimentTools.suite_configs()
        assert [c.label for c in suite] == [name for name, _ in PUBLISHED_MULTIMODAL]

    def test_grid_dims(self: Self) -> None:
        cfg = ExperimentTools.grid_configs(DESK_DIMS)[3]
        assert cfg.fusion.kind is FusionKind.BLOCK_TUCKER
        assert cfg.fusion.mm_dim == 160
        assert cfg.fusion.in_dims == (50, 126)


class TestSpec:
    def test_validation(self: Self, tmp_path: Path) -> None:
        with pytest.raises(ConfigInvalidError):
            ExperimentSpec(kind="unimodal", out=tmp_path)
        with pytest.raises(ConfigInvalidError):
            ExperimentSpec(kind="unimodal", out=tmp_path, data=tmp_path / "c.jsonl", synth=_SYNTH)
        with pytest.raises(ConfigInvalidError):
            ExperimentSpec(kind="unimodal", out=tmp_path, synth=_SYNTH, threads=0)
        with pytest.raises(ConfigInvalidError):
            ExperimentSpec(kind="single", out=tmp_path, synth=_SYNTH)
        file = tmp_path / "file.txt"
        file.write_text("x", encoding="utf-8")
        with pytest.raises(ConfigInvalidError):
            ExperimentSpec(kind="unimodal", out=file, synth=_SYNTH)

    def test_from_tree(self: Self, tmp_path: Path) -> None:
        tree = NestedDotDict.from_toml(
            """
            [experiment]
            preset = "desk"
            threads = 2

            [train]
            lr = 0.01
            seeds = [3, 4]

            [synth]
            n_claims = 500

            [model]
            arch = "bimodal"
            features = ["ud", "struct"]

            [model.fusion]
            kind = "mfh"
            rank = 3
            """
        )
        spec = ExperimentTools.spec_from(tree, "single", out=tmp_path)
        assert spec.preset == "desk"
        assert spec.threads == 2
        assert spec.train.lr == 0.01
        assert spec.train.seeds == (3, 4)
        assert spec.train.max_epochs == 30
        assert spec.synth.n_claims == 500
        assert spec.synth.images == (1, 2)
        assert spec.dims.rank == 3
        (model,) = spec.models
        assert model.label == "UD + Struct / MFH"
        assert model.fusion.rank == 3
        assert model.fusion.mm_dim == 160

    def test_flags_win(self: Self, tmp_path: Path) -> None:
        tree = NestedDotDict.from_toml('[experiment]\nthreads = 4\ndata = "claims.jsonl"\n')
        spec = ExperimentTools.spec_from(tree, "unimodal", out=tmp_path, seeds=[0], threads=1)
        assert spec.threads == 1
        assert spec.train.seeds == (0,)
        assert spec.data == Path("claims.jsonl")
        assert spec.synth is None
        assert ExperimentTools.spec_from(NestedDotDict(), "bimodal_grid").out == Path("results")

    @pytest.mark.parametrize(
        "toml",
        [
            "[train]\nlearning_rate = 0.1\n",
            "[train]\nlr = 'fast'\n",
            "[experiment]\ncolor = true\n",
            "[experiment]\npreset = 'huge'\n",
            "[model]\narch = 'slow_fusion'\n",
            "[model]\narch = 'unimodal'\nfeatures = ['cds']\nlayers = 3\n",
            "[model]\narch = 'bimodal'\nfeatures = ['cds', 'text']\n[model.fusion]\nkind = 'mlb'\nwidth = 2\n",
        ],
    )
    def test_invalid_tree(self: Self, toml: str) -> None:
        with pytest.raises(ConfigInvalidError):
            ExperimentTools.spec_from(NestedDotDict.from_toml(toml), "single")

    def test_slow_fusion_tree(self: Self) -> None:
        tree = NestedDotDict.from_toml("[model]\narch = 'slow_fusion'\n[model.second]\nkind = 'mfb'\n")
        model = ExperimentTools.model_config(tree)
        assert model.label == "SF - MFB"
        assert model.fusion.kind is FusionKind.BLOCK_TUCKER
        assert ExperimentTools.model_config(NestedDotDict()) is None


class TestData:
    def test_restrict(self: Self) -> None:
        split = SplitIndices(np.array([0, 2, 4]), np.array([1]), np.array([3, 5]))
        keep = np.array([True, False, True, True, False, True])
        r = ExperimentTools.restrict(split, keep)
        assert r.train.tolist() == [0, 1]
        assert r.val.tolist() == []
        assert r.test.tolist() == [2, 3]

    def test_text_models_drop(self: Self, tiny_records: list[ClaimRecord]) -> None:
        records = list(tiny_records[:20])
        rec = records[4]
        records[4] = ClaimRecord(rec.claim_id, rec.label, rec.images, rec.struct_onehot)
        batch = FeatureTools.batch(records)
        split = SplitIndices(np.arange(0, 12), np.arange(12, 16), np.arange(16, 20))
        text_cfg = ModelConfig(arch=Arch.UNIMODAL, features=(Feature.TEXT,))
        data, s = ExperimentTools.model_data(text_cfg, batch, split)
        assert len(data) == 19
        assert rec.claim_id not in data.claim_ids
        assert len(s.train) == 11
        assert s.test.tolist() == list(range(15, 19))
        cds_cfg = ModelConfig(arch=Arch.UNIMODAL, features=(Feature.CDS,))
        assert ExperimentTools.model_data(cds_cfg, batch, split)[0] is batch

    def test_fingerprint(self: Self, tiny_records: list[ClaimRecord]) -> None:
        a = ExperimentTools.fingerprint(FeatureTools.batch(tiny_records[:5]))
        b = ExperimentTools.fingerprint(FeatureTools.batch(tiny_records[:6]))
        assert a != b
        assert a == ExperimentTools.fingerprint(FeatureTools.batch(tiny_records[:5]))


class TestRunCell:
    def test_cache_and_resume(self: Self, tmp_path: Path, tiny_dims: Dims, tiny_train: TrainConfig) -> None:
        cfg = ExperimentTools.unimodal_configs(tiny_dims)[2]
        spec = _spec(tmp_path, tiny_train, models=(cfg,))
        records = ExperimentTools.load_records(spec)
        (cell,) = ExperimentTools.run_cells(spec.models, records, spec)
        assert cell.label == "SPUD"
        assert (tmp_path / "cells" / "spud.json").exists()
        assert (tmp_path / "runs" / "spud" / "seed-0" / "history.jsonl").exists()
        assert (tmp_path / "runs" / "spud" / "model.afn").exists()
        row = cell.to_row()
        assert row["n_seeds"] == 1
        assert row["val_fraud_recall_min"] >= tiny_train.min_recall
        (again,) = ExperimentTools.run_cells(spec.models, records, spec)
        assert again.mean == cell.mean
        assert again.runs == cell.runs
        loaded = ExperimentTools.load_cells(tmp_path)
        assert [c.label for c in loaded] == ["SPUD"]
        changed = spec.replace(train=tiny_train.replace(lr=0.5))
        with pytest.raises(ConfigMismatchError):
            ExperimentTools.run_cells(changed.models, records, changed)

    def test_checkpoint_eval(self: Self, tmp_path: Path, tiny_dims: Dims, tiny_train: TrainConfig) -> None:
        cfg = ExperimentTools.unimodal_configs(tiny_dims)[3]
        spec = _spec(tmp_path, tiny_train, models=(cfg,))
        records = ExperimentTools.load_records(spec)
        cell = ExperimentTools.run_single(spec, records)
        path = ExperimentTools.checkpoint_path(spec, cfg)
        meta = IoTools.read_checkpoint(path).metadata
        assert meta["label"] == "Struct"
        report = ExperimentTools.evaluate_checkpoint(path, records, expected=cfg)
        assert report.threshold == meta["threshold"]
        assert report.to_row() == pytest.approx(cell.runs[0]["test"])
        assert (tmp_path / "results.csv").exists()
        with pytest.raises(ValueIllegalError):
            ExperimentTools.evaluate_checkpoint(path, records, split="holdout")
        with pytest.raises(ConfigMismatchError):
            ExperimentTools.evaluate_checkpoint(path, records, expected=ExperimentTools.unimodal_configs(tiny_dims)[2])
        everything = ExperimentTools.evaluate_checkpoint(path, records, split="all", threshold=0.5)
        assert everything.threshold == 0.5

    def test_duplicate_labels(self: Self, tmp_path: Path, tiny_train: TrainConfig) -> None:
        cfg = ExperimentTools.unimodal_configs()[0]
        spec = _spec(tmp_path, tiny_train)
        with pytest.raises(ConfigInvalidError):
            ExperimentTools.run_cells([cfg, cfg], [], spec)

    @pytest.mark.slow
    def test_unimodal_and_report(self: Self, tmp_path: Path, tiny_dims: Dims, tiny_train: TrainConfig) -> None:
        spec = _spec(tmp_path / "unimodal", tiny_train, dims=tiny_dims, threads=2)
        table = ExperimentTools.run_unimodal(spec, ExperimentTools.load_records(spec))
        assert table["model"].tolist() == ["CDS", "UD", "SPUD", "Struct", "Text"]
        assert table["modality"].tolist() == ["Visual", "Visual", "Tabular", "Tabular", "Textual"]
        tables = ExperimentTools.build_report(tmp_path)
        assert list(tables) == ["audit", "unimodal"]
        assert (tmp_path / "report.csv").exists()
        assert (tmp_path / "report_unimodal.csv").exists()


class TestDeskOrdering:
    @pytest.mark.slow
    def test_fusion_beats_single_modalities(self: Self, tmp_path: Path) -> None:
        desk = PRESETS["desk"]
        train = desk.train.replace(seeds=tuple(range(5)))

        def _desk(kind: str) -> ExperimentSpec:
            return ExperimentSpec(
                kind=kind, out=tmp_path / kind, synth=desk.synth, train=train, dims=desk.dims, threads=4, preset="desk"
            )

        records = ExperimentTools.load_records(_desk("unimodal"))
        unimodal = ExperimentTools.run_unimodal(_desk("unimodal"), records)
        grid = ExperimentTools.run_grid(_desk("bimodal_grid"), records)
        suite = ExperimentTools.run_suite(_desk("multimodal_suite"), records)
        best_unimodal, best_bimodal, final = ReportTools.insights(unimodal, grid, suite)["pr_auc"].tolist()
        assert best_unimodal + 0.02 <= best_bimodal
        assert best_bimodal + 0.02 <= final
        heads = suite[suite["model"] == "AutoFraudNet + Heads"].iloc[0]
        plain = suite[suite["model"] == "AutoFraudNet"].iloc[0]
        slack = max(heads["pr_auc_std"], plain["pr_auc_std"])
        assert heads["pr_auc"] + slack >= plain["pr_auc"]
        assert (unimodal["val_fraud_recall_min"] >= train.min_recall).all()
        assert (suite["val_fraud_recall_min"] >= train.min_recall).all()


if __name__ == "__main__":
    pytest.main()
