# SPDX-FileCopyrightText: Copyright 2023, Contributors to claimfusion
# SPDX-PackageHomePage: https://github.com/claimfusion/claimfusion
# SPDX-License-Identifier: Apache-2.0
from pathlib import Path
from typing import Self

import pandas as pd
import pytest

from claimfusion.core.exceptions import ValueIllegalError
from claimfusion.tools.report_tools import METRIC_COLUMNS, PUBLISHED_MULTIMODAL, PUBLISHED_UNIMODAL, ReportTools


def _grid() -> pd.DataFrame:
    return pd.DataFrame(
        [
            {"pair": "CDS + SPUD", "strategy": "MLB", "pr_auc_mean": 0.20, "pr_auc_std": 0.01, "pr_auc_runs": [0.19, 0.21]},
            {"pair": "CDS + SPUD", "strategy": "MFB", "pr_auc_mean": 0.15, "pr_auc_std": 0.02, "pr_auc_runs": [0.13, 0.17]},
            {"pair": "UD + Text", "strategy": "MLB", "pr_auc_mean": 0.10, "pr_auc_std": 0.00, "pr_auc_runs": [0.10, 0.10]},
            {"pair": "UD + Text", "strategy": "MFB", "pr_auc_mean": 0.25, "pr_auc_std": 0.03, "pr_auc_runs": [0.22, 0.28]},
        ]
    )


class TestAudit:
    def test_published(self: Self) -> None:
        df = ReportTools.published_frame()
        assert len(df) == len(PUBLISHED_UNIMODAL) + len(PUBLISHED_MULTIMODAL) == 13
        assert set(METRIC_COLUMNS) <= set(df.columns)

    def test_inconsistent_cells(self: Self) -> None:
        audit = ReportTools.audit_published_tables()
        assert len(audit) == 13 * 3
        bad = {(r.model, r.column) for r in audit[~audit.consistent].itertuples()}
        assert {
            ("Concat MLP - w/o Text", "fraud_f1"),
            ("AutoFraudNet", "fraud_f1"),
            ("UD", "balanced_accuracy"),
            ("SPUD", "balanced_accuracy"),
            ("Text", "balanced_accuracy"),
        } <= bad
        good = {(r.model, r.column) for r in audit[audit.consistent].itertuples()}
        assert ("CDS", "balanced_accuracy") in good
        assert ("AutoFraudNet + Heads", "fraud_f1") in good
        assert ("CDS", "fraud_f1") in good

    def test_f1_interval(self: Self) -> None:
        lo, hi = ReportTools.f1_interval(0.5, 0.5, 0.0005)
        assert lo == pytest.approx(0.4995)
        assert hi == pytest.approx(0.5005)
        assert ReportTools.f1_interval(0.0, 0.3, 0.0005)[0] == 0.0


class TestTables:
    def test_reduction(self: Self) -> None:
        assert ReportTools.parameter_reduction(25, 100) == pytest.approx(75.0)
        with pytest.raises(ValueIllegalError):
            ReportTools.parameter_reduction(1, 0)

    def test_grid_matrices(self: Self) -> None:
        mean, std = ReportTools.grid_matrices(_grid())
        assert list(mean.index) == ["CDS + SPUD", "UD + Text"]
        assert list(mean.columns) == ["MLB", "MFB"]
        assert mean.loc["UD + Text", "MFB"] == 0.25
        assert std.loc["CDS + SPUD", "MFB"] == 0.02

    def test_strategy_summary(self: Self) -> None:
        summary = ReportTools.strategy_summary(_grid()).set_index("strategy")
        assert summary.loc["MLB", "n_runs"] == 4
        assert summary.loc["MLB", "pr_auc_mean"] == pytest.approx(0.15)
        assert summary.loc["MFB", "best_pair"] == "UD + Text"
        assert summary.loc["MLB", "best_pair"] == "CDS + SPUD"

    def test_insights(self: Self) -> None:
        unimodal = pd.DataFrame([{"model": "CDS", "pr_auc": 0.19}, {"model": "UD", "pr_auc": 0.18}])
        suite = pd.DataFrame([{"model": "AutoFraudNet + Heads", "pr_auc": 0.3}])
        df = ReportTools.insights(unimodal, _grid(), suite)
        assert df["stage"].tolist() == ["Unimodal Best", "Bimodal Best", "AutoFraudNet + Heads"]
        assert df["model"].tolist()[:2] == ["CDS", "UD + Text / MFB"]
        assert df["gain"].tolist() == pytest.approx([0.0, 0.06, 0.05])
        with pytest.raises(ValueIllegalError):
            ReportTools.insights(unimodal, _grid(), suite, final="AutoFraudNet")

    def test_write_read(self: Self, tmp_path: Path) -> None:
        grid = _grid()
        mean, _ = ReportTools.grid_matrices(grid)
        csv, txt = ReportTools.write(tmp_path / "grid", {"grid": grid, "mean": mean.reset_index()})
        assert (tmp_path / "grid" / "results_mean.csv").exists()
        back = ReportTools.read_csv(csv)
        # per-seed lists stay out of the CSV
        assert "pr_auc_runs" not in back.columns
        assert back["pr_auc_mean"].tolist() == grid["pr_auc_mean"].tolist()
        text = txt.read_text(encoding="utf-8")
        assert text.startswith("# schema 1")
        assert "grid\n====" in text

    def test_schema_version(self: Self, tmp_path: Path) -> None:
        path = tmp_path / "old.csv"
        path.write_text("schema_version,model\n0,CDS\n", encoding="utf-8")
        with pytest.raises(ValueIllegalError):
            ReportTools.read_csv(path)

    def test_text(self: Self) -> None:
        df = pd.DataFrame([{"model": "CDS", "pr_auc": 0.19444}])
        text = ReportTools.to_text(df, "Unimodal")
        assert "PR AUC" in text
        assert "0.194" in text
        assert text.startswith("Unimodal\n========\n")


if __name__ == "__main__":
    pytest.main()
