# SPDX-FileCopyrightText: Copyright 2023, Contributors to claimfusion
# SPDX-PackageHomePage: https://github.com/claimfusion/claimfusion
# SPDX-License-Identifier: Apache-2.0
"""
Result tables: unimodal, bimodal grid and multimodal suite reports,
their summaries, and an arithmetic audit of the published reference tables.

Every table is a pandas DataFrame, written as CSV for machines and as aligned text for people.
"""

from __future__ import annotations

import io
import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Self

import numpy as np
import pandas as pd

from claimfusion.core.exceptions import ValueIllegalError
from claimfusion.core.smartio import PathLike, SmartIo
from claimfusion.tools.metric_tools import MetricTools

__all__ = [
    "REPORT_SCHEMA_VERSION",
    "METRIC_COLUMNS",
    "METRIC_TITLES",
    "PUBLISHED_UNIMODAL",
    "PUBLISHED_MULTIMODAL",
    "ReportUtils",
    "ReportTools",
]

logger = logging.getLogger("claimfusion")

REPORT_SCHEMA_VERSION = 1

METRIC_COLUMNS = (
    "pr_auc",
    "balanced_accuracy",
    "fraud_precision",
    "fraud_recall",
    "fraud_f1",
    "not_fraud_precision",
    "not_fraud_recall",
    "not_fraud_f1",
)

METRIC_TITLES = {
    "pr_auc": "PR AUC",
    "balanced_accuracy": "Bal. Acc.",
    "fraud_precision": "Fraud P",
    "fraud_recall": "Fraud R",
    "fraud_f1": "Fraud F1",
    "not_fraud_precision": "Not Fraud P",
    "not_fraud_recall": "Not Fraud R",
    "not_fraud_f1": "Not Fraud F1",
}

# name, modality, then METRIC_COLUMNS in order
PUBLISHED_UNIMODAL: tuple[tuple[str, str, tuple[float, ...]], ...] = (
    ("CDS", "Visual", (0.194, 0.755, 0.094, 0.811, 0.168, 0.989, 0.699, 0.819)),
    ("UD", "Visual", (0.183, 0.547, 0.074, 0.810, 0.136, 0.988, 0.611, 0.755)),
    ("SPUD", "Tabular", (0.160, 0.710, 0.043, 0.811, 0.083, 0.977, 0.317, 0.479)),
    ("Struct", "Tabular", (0.065, 0.564, 0.043, 0.810, 0.083, 0.977, 0.317, 0.478)),
    ("Text", "Textual", (0.060, 0.563, 0.046, 0.962, 0.088, 0.197, 0.133, 0.159)),
)

PUBLISHED_MULTIMODAL: tuple[tuple[str, tuple[float, ...]], ...] = (
    ("Concat MLP - All", (0.179, 0.597, 0.057, 0.926, 0.106, 0.395, 0.269, 0.320)),
    ("Concat MLP - w/o Text", (0.192, 0.601, 0.059, 0.924, 0.109, 0.395, 0.277, 0.326)),
    ("SF - MFB", (0.158, 0.549, 0.047, 0.962, 0.089, 0.197, 0.136, 0.161)),
    ("SF - MLB", (0.165, 0.648, 0.068, 0.889, 0.125, 0.593, 0.407, 0.483)),
    ("SF - BLOCK", (0.201, 0.548, 0.046, 0.963, 0.088, 0.197, 0.133, 0.159)),
    ("SF - BLOCK Tucker", (0.203, 0.595, 0.056, 0.924, 0.105, 0.395, 0.266, 0.318)),
    ("AutoFraudNet", (0.212, 0.650, 0.070, 0.886, 0.128, 0.593, 0.415, 0.488)),
    ("AutoFraudNet + Heads", (0.233, 0.751, 0.092, 0.811, 0.165, 0.989, 0.690, 0.813)),
)


@dataclass(slots=True, frozen=True)
class ReportUtils:
    def published_frame(self: Self) -> pd.DataFrame:
        """Both reference tables in one frame, with a `table` column ("unimodal" or "multimodal")."""
        rows = [
            {"table": "unimodal", "model": name, "modality": modality, **dict(zip(METRIC_COLUMNS, v, strict=True))}
            for name, modality, v in PUBLISHED_UNIMODAL
        ]
        rows += [
            {"table": "multimodal", "model": name, "modality": "", **dict(zip(METRIC_COLUMNS, v, strict=True))}
            for name, v in PUBLISHED_MULTIMODAL
        ]
        return pd.DataFrame(rows)

    def f1_interval(self: Self, p: float, r: float, half_width: float) -> tuple[float, float]:
        """
        Range of F1 over all precisions and recalls that round to `p` and `r`.
        F1 increases in both arguments, so the corners are the extremes.
        """
        lo = MetricTools.f1(max(p - half_width, 0.0), max(r - half_width, 0.0))
        hi = MetricTools.f1(min(p + half_width, 1.0), min(r + half_width, 1.0))
        return lo, hi

    def audit_published_tables(self: Self, half_width: float = 0.0005) -> pd.DataFrame:
        """
        Recomputes each F1 and balanced-accuracy cell from the published precision and recall values,
        treating every published number as exact only to `± half_width`.

        Returns:
            One row per checked cell: `model`, `column`, `published`, `lo`, `hi`, `recomputed`, `consistent`
        """
        rows = []
        for _, r in self.published_frame().iterrows():
            checks = {
                "fraud_f1": (
                    self.f1_interval(r["fraud_precision"], r["fraud_recall"], half_width),
                    MetricTools.f1(r["fraud_precision"], r["fraud_recall"]),
                ),
                "not_fraud_f1": (
                    self.f1_interval(r["not_fraud_precision"], r["not_fraud_recall"], half_width),
                    MetricTools.f1(r["not_fraud_precision"], r["not_fraud_recall"]),
                ),
                "balanced_accuracy": (
                    (
                        (r["fraud_recall"] + r["not_fraud_recall"]) / 2 - half_width,
                        (r["fraud_recall"] + r["not_fraud_recall"]) / 2 + half_width,
                    ),
                    (r["fraud_recall"] + r["not_fraud_recall"]) / 2,
                ),
            }
            for column, ((lo, hi), point) in checks.items():
                published = float(r[column])
                consistent = lo <= published + half_width and published - half_width <= hi
                rows.append(
                    {
                        "table": r["table"],
                        "model": r["model"],
                        "column": column,
                        "published": published,
                        "recomputed": point,
                        "lo": lo,
                        "hi": hi,
                        "consistent": bool(consistent),
                    }
                )
        df = pd.DataFrame(rows)
        bad = df[~df.consistent]
        for _, b in bad.iterrows():
            logger.warning(
                f"Published {METRIC_TITLES[b['column']]} for {b['model']} is {b['published']:.3f}, "
                f"but its precision and recall give [{b['lo']:.4f}, {b['hi']:.4f}]"
            )
        return df

    def parameter_reduction(self: Self, n_params: int, baseline: int) -> float:
        """Percent fewer parameters of a model than of `baseline`."""
        if baseline <= 0:
            msg = f"Baseline parameter count must be positive, not {baseline}"
            raise ValueIllegalError(msg, value=baseline)
        return 100.0 * (1.0 - n_params / baseline)

    def grid_matrices(self: Self, grid: pd.DataFrame) -> tuple[pd.DataFrame, pd.DataFrame]:
        """
        Mean and standard-deviation PR AUC as pair × strategy matrices, in first-appearance order.
        """
        pairs = list(dict.fromkeys(grid["pair"]))
        strategies = list(dict.fromkeys(grid["strategy"]))
        mean = grid.pivot(index="pair", columns="strategy", values="pr_auc_mean").loc[pairs, strategies]
        std = grid.pivot(index="pair", columns="strategy", values="pr_auc_std").loc[pairs, strategies]
        mean.columns.name, std.columns.name = None, None
        return mean, std

    def strategy_summary(self: Self, grid: pd.DataFrame) -> pd.DataFrame:
        """
        PR AUC per fusion strategy, pooled over every pair and seed.
        Needs the per-seed values in a `pr_auc_runs` column.
        """
        rows = []
        for strategy, group in grid.groupby("strategy", sort=False):
            values = np.concatenate([np.asarray(v, dtype=np.float64) for v in group["pr_auc_runs"]])
            std = float(np.std(values, ddof=1)) if len(values) > 1 else 0.0
            rows.append(
                {
                    "strategy": strategy,
                    "pr_auc_mean": float(np.mean(values)),
                    "pr_auc_std": std,
                    "n_runs": len(values),
                    "best_pair": group.loc[group["pr_auc_mean"].idxmax(), "pair"],
                }
            )
        return pd.DataFrame(rows)

    def insights(
        self: Self,
        unimodal: pd.DataFrame,
        grid: pd.DataFrame,
        suite: pd.DataFrame,
        final: str = "AutoFraudNet + Heads",
    ) -> pd.DataFrame:
        """
        The best unimodal model, the best bimodal cell and the final model, with the PR AUC gain of each step.
        """
        u = unimodal.loc[unimodal["pr_auc"].idxmax()]
        b = grid.loc[grid["pr_auc_mean"].idxmax()]
        matches = suite[suite["model"] == final]
        if len(matches) == 0:
            msg = f"Suite has no row for {final}"
            raise ValueIllegalError(msg, value=final)
        f = matches.iloc[0]
        rows = [
            {"stage": "Unimodal Best", "model": u["model"], "pr_auc": float(u["pr_auc"])},
            {"stage": "Bimodal Best", "model": f"{b['pair']} / {b['strategy']}", "pr_auc": float(b["pr_auc_mean"])},
            {"stage": final, "model": final, "pr_auc": float(f["pr_auc"])},
        ]
        df = pd.DataFrame(rows)
        df["gain"] = df["pr_auc"].diff().fillna(0.0)
        return df

    def to_text(self: Self, df: pd.DataFrame, title: str | None = None, digits: int = 3) -> str:
        """Aligned plain text, floats rounded to `digits`."""
        shown = df.rename(columns={k: v for k, v in METRIC_TITLES.items() if k in df.columns})
        body = shown.to_string(index=False, float_format=lambda x: f"{x:.{digits}f}")
        if title is None:
            return body + "\n"
        return f"{title}\n{'=' * len(title)}\n{body}\n"

    def to_csv(self: Self, df: pd.DataFrame) -> str:
        out = df.copy()
        out.insert(0, "schema_version", REPORT_SCHEMA_VERSION)
        buffer = io.StringIO()
        out.to_csv(buffer, index=False, lineterminator="\n")
        return buffer.getvalue()

    def write(
        self: Self,
        out_dir: PathLike,
        tables: Mapping[str, pd.DataFrame],
        *,
        stem: str = "results",
        text_sections: Sequence[tuple[str, pd.DataFrame]] | None = None,
    ) -> tuple[Path, Path]:
        """
        Writes `{stem}.csv` from the first table and `{stem}.txt` with every section.
        Further tables are written as `{stem}_{name}.csv`.

        Args:
            out_dir: Directory, created if needed
            tables: Name → table; the first is the main result
            stem: File name stem
            text_sections: Titles and tables for the text file; defaults to every table
        """
        out_dir = Path(out_dir)
        names = list(tables)
        if not names:
            msg = "Nothing to write"
            raise ValueIllegalError(msg)
        main = tables[names[0]]
        csv_path = SmartIo.write_text(self.to_csv(self._csv_safe(main)), out_dir / f"{stem}.csv")
        for name in names[1:]:
            SmartIo.write_text(self.to_csv(self._csv_safe(tables[name])), out_dir / f"{stem}_{name}.csv")
        sections = text_sections if text_sections is not None else [(n, tables[n]) for n in names]
        text = "\n".join(self.to_text(df, title) for title, df in sections)
        txt_path = SmartIo.write_text(f"# schema {REPORT_SCHEMA_VERSION}\n\n" + text, out_dir / f"{stem}.txt")
        logger.info(f"Wrote {csv_path} and {txt_path}")
        return csv_path, txt_path

    def read_csv(self: Self, path: PathLike) -> pd.DataFrame:
        """
        Reads a table written by :meth:`write`.

        Raises:
            ValueIllegalError: If the schema version differs
        """
        df = pd.read_csv(io.StringIO(SmartIo.read_text(path)))
        versions = set(df.get("schema_version", pd.Series([None])).tolist())
        if versions != {REPORT_SCHEMA_VERSION}:
            msg = f"{path} has schema {versions}, not {REPORT_SCHEMA_VERSION}"
            raise ValueIllegalError(msg, value=sorted(map(str, versions)))
        return df.drop(columns=["schema_version"])

    def _csv_safe(self: Self, df: pd.DataFrame) -> pd.DataFrame:
        # list-valued columns stay in the per-cell JSON
        keep = [c for c in df.columns if not df[c].map(lambda v: isinstance(v, list | tuple | np.ndarray)).any()]
        return df[keep]

    def rows_frame(self: Self, rows: Sequence[Mapping[str, Any]]) -> pd.DataFrame:
        return pd.DataFrame(list(rows))


ReportTools = ReportUtils()
