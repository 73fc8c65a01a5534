# SPDX-FileCopyrightText: Copyright 2023, Contributors to claimfusion
# SPDX-PackageHomePage: https://github.com/claimfusion/claimfusion
# SPDX-License-Identifier: Apache-2.0
"""
The experiment protocol: presets, TOML config files, and runners for
the unimodal baselines, the 56-cell bimodal grid, the multimodal suite and single models.

Each model config is a *cell*. A finished cell is stored as `cells/{slug}.json` under the output directory,
so an interrupted run picks up where it stopped. Per-seed training histories go to
`runs/{slug}/seed-{seed}/history.jsonl` and the best seed's parameters to `runs/{slug}/model.afn`.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import logging
from collections.abc import Sequence
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Self

import numpy as np
import orjson
import pandas as pd
import regex
from numpy.typing import NDArray

from claimfusion.core.dot_dict import NestedDotDict
from claimfusion.core.enums import Arch, CleverEnum, Feature, FusionKind
from claimfusion.core.exceptions import ConfigInvalidError, ConfigMismatchError, ValueIllegalError
from claimfusion.core.fusion import FusionConfig
from claimfusion.core.iterators import GridIterator
from claimfusion.core.models import DESK_DIMS, FULL_DIMS, Dims, ModelConfig, enumerate_pairs
from claimfusion.core.records import ClaimBatch, ClaimRecord
from claimfusion.core.smartio import PathLike, SmartIo
from claimfusion.tools.feature_tools import FeatureTools
from claimfusion.tools.io_tools import IoTools
from claimfusion.tools.json_tools import JsonTools
from claimfusion.tools.metric_tools import MetricsReport
from claimfusion.tools.report_tools import METRIC_COLUMNS, ReportTools
from claimfusion.tools.synth_tools import SynthConfig, SynthTools
from claimfusion.tools.train_tools import EpochRecord, SplitIndices, TrainConfig, TrainTools

__all__ = [
    "CELL_SCHEMA_VERSION",
    "ExperimentKind",
    "Preset",
    "PRESETS",
    "ExperimentSpec",
    "CellResult",
    "ExperimentUtils",
    "ExperimentTools",
]

logger = logging.getLogger("claimfusion")

CELL_SCHEMA_VERSION = 1
_encoder = JsonTools.encoder(indent=False, sort=True)
_slug_junk = regex.compile(r"[^\p{L}\p{N}]+", flags=regex.VERSION1)


class ExperimentKind(CleverEnum):
    UNIMODAL = enum.auto()
    BIMODAL_GRID = enum.auto()
    MULTIMODAL_SUITE = enum.auto()
    SINGLE = enum.auto()


@dataclass(slots=True, frozen=True)
class Preset:
    """
    Default widths, generator settings and training settings; every value stays overridable.
    """

    name: str
    dims: Dims
    synth: SynthConfig
    train: TrainConfig


PRESETS = {
    "full": Preset("full", FULL_DIMS, SynthConfig(), TrainConfig()),
    "desk": Preset("desk", DESK_DIMS, SynthConfig(images=(1, 2)), TrainConfig(max_epochs=30)),
}


@dataclass(slots=True, frozen=True, kw_only=True)
class ExperimentSpec:
    """
    Everything one command needs.

    Attributes:
        kind: Which protocol to run
        out: Output directory
        data: Claim file; exclusive with `synth`
        synth: Generator settings; exclusive with `data`
        train: Training settings
        models: Model configs (exactly one for `single`)
        dims: Widths the unimodal, grid and suite configs are built with
        threads: Cells (or, for a single model, seeds) run in parallel
        checkpoints: Save the best seed's parameters per cell
        preset: Name of the preset the defaults came from
    """

    kind: ExperimentKind
    out: Path
    data: Path | None = None
    synth: SynthConfig | None = None
    train: TrainConfig = field(default_factory=TrainConfig)
    models: tuple[ModelConfig, ...] = ()
    dims: Dims = FULL_DIMS
    threads: int = 1
    checkpoints: bool = True
    preset: str = "full"

    def __post_init__(self: Self) -> None:
        object.__setattr__(self, "kind", ExperimentKind.of(self.kind))
        object.__setattr__(self, "out", Path(self.out))
        object.__setattr__(self, "models", tuple(self.models))
        if (self.data is None) == (self.synth is None):
            msg = "Give exactly one data source: a claim file or generator settings"
            raise ConfigInvalidError(msg, key="data")
        if self.out.exists() and not self.out.is_dir():
            msg = f"Output {self.out} exists and is not a directory"
            raise ConfigInvalidError(msg, key="out", value=str(self.out))
        if self.threads < 1:
            msg = f"threads must be at least 1, not {self.threads}"
            raise ConfigInvalidError(msg, key="threads", value=self.threads)
        if self.kind is ExperimentKind.SINGLE and len(self.models) != 1:
            msg = f"A single-model experiment needs exactly one model config, not {len(self.models)}"
            raise ConfigInvalidError(msg, key="model")

    def replace(self: Self, **kwargs: Any) -> ExperimentSpec:
        return dataclasses.replace(self, **kwargs)


@dataclass(slots=True, frozen=True)
class CellResult:
    """
    All seeds of one model config.

    Attributes:
        label: Display name
        config: The model config
        n_params: Trainable scalars
        runs: Per seed: `seed`, `best_epoch`, `threshold`, and `val` and `test` metric rows
        mean: Mean of each test metric over seeds
        std: Sample standard deviation of each test metric over seeds
    """

    label: str
    config: ModelConfig
    n_params: int
    runs: tuple[dict[str, Any], ...]
    mean: dict[str, float]
    std: dict[str, float]

    def values(self: Self, key: str, split: str = "test") -> list[float]:
        return [float(r[split][key]) for r in self.runs]

    def to_row(self: Self) -> dict[str, Any]:
        row: dict[str, Any] = {"model": self.label, "arch": self.config.arch.key, "n_params": self.n_params}
        row |= {k: self.mean[k] for k in METRIC_COLUMNS}
        row |= {f"{k}_std": self.std[k] for k in METRIC_COLUMNS}
        row["threshold"] = float(np.mean([r["threshold"] for r in self.runs]))
        row["val_fraud_recall_min"] = min(self.values("fraud_recall", "val"))
        row["n_seeds"] = len(self.runs)
        return row

    def to_dict(self: Self) -> dict[str, Any]:
        return {
            "schema_version": CELL_SCHEMA_VERSION,
            "label": self.label,
            "config": self.config.to_dict(),
            "n_params": self.n_params,
            "runs": list(self.runs),
            "mean": self.mean,
            "std": self.std,
        }

    @classmethod
    def of(cls: type[Self], data: dict[str, Any]) -> Self:
        return cls(
            label=data["label"],
            config=ModelConfig.of(data["config"]),
            n_params=int(data["n_params"]),
            runs=tuple(data["runs"]),
            mean={k: float(v) for k, v in data["mean"].items()},
            std={k: float(v) for k, v in data["std"].items()},
        )


def _typed(tree: NestedDotDict, dotted: str, current: Any) -> Any:
    """Reads `dotted` with the type of the value it replaces."""
    if isinstance(current, bool):
        return tree.req_as(dotted, bool)
    if isinstance(current, enum.Enum | str):
        return tree.req_as(dotted, str)
    if isinstance(current, int):
        return tree.req_as(dotted, int)
    if isinstance(current, float):
        return tree.req_as(dotted, float)
    if isinstance(current, tuple):
        if any(isinstance(c, float) for c in current):
            elem = float
        elif len(current) == 0 or isinstance(current[0], str | enum.Enum):
            elem = str
        else:
            elem = int
        return tuple(tree.get_list_as(dotted, elem))
    return tree[dotted]


def _normalize(data: Any) -> Any:
    return orjson.loads(_encoder.as_bytes(data))


@dataclass(slots=True, frozen=True)
class ExperimentUtils:
    def slug(self: Self, label: str) -> str:
        """
        A file-name-safe form of a model label: `"CDS + SPUD / BLOCK Tucker"` → `"cds-spud-block-tucker"`.
        """
        return _slug_junk.sub("-", label.lower()).strip("-")

    def load_config(self: Self, path: PathLike | None) -> NestedDotDict:
        """Reads a TOML config file; `None` gives an empty tree."""
        if path is None:
            return NestedDotDict()
        return NestedDotDict.from_toml(SmartIo.read_text(path))

    def section(self: Self, tree: NestedDotDict, prefix: str, base: Any, *, skip: Sequence[str] = ()) -> dict[str, Any]:
        """
        Typed overrides for the dataclass `base` from the leaves directly under `prefix`.

        Raises:
            ConfigInvalidError: On an unknown key or a value of the wrong type
        """
        current = {f.name: getattr(base, f.name) for f in dataclasses.fields(base)}
        out = {}
        for key, value in tree.sub(prefix).items():
            if isinstance(value, dict) or key in skip:
                continue
            if key not in current:
                msg = f"Unknown key {prefix}.{key}; expected one of {sorted(current)}"
                raise ConfigInvalidError(msg, key=f"{prefix}.{key}")
            out[key] = _typed(tree, f"{prefix}.{key}", current[key])
        return out

    def synth_config(self: Self, tree: NestedDotDict, base: SynthConfig | None = None) -> SynthConfig:
        base = SynthConfig() if base is None else base
        return base.replace(**self.section(tree, "synth", base))

    def train_config(self: Self, tree: NestedDotDict, base: TrainConfig | None = None) -> TrainConfig:
        base = TrainConfig() if base is None else base
        return base.replace(**self.section(tree, "train", base))

    def dims(self: Self, tree: NestedDotDict, base: Dims = FULL_DIMS) -> Dims:
        """
        The preset widths, overridden by `[model.fusion]` and the width keys of `[model]`.
        """
        kw = {}
        fusion_keys = {
            "mm_dim": "mm_dim",
            "out_dim": "out_dim",
            "chunks": "chunks",
            "rank": "rank",
            "pool_factor": "pool_factor",
            "mfh_stages": "mfh_stages",
            "mlp_hidden": "fusion_hidden",
            "dropout_p": "dropout_p",
        }
        for key, target in fusion_keys.items():
            if f"model.fusion.{key}" in tree:
                kw[target] = _typed(tree, f"model.fusion.{key}", getattr(base, target))
        for key in ("mlp_hidden", "encoder_hidden", "dropout_p"):
            if f"model.{key}" in tree:
                kw[key] = _typed(tree, f"model.{key}", getattr(base, key))
        return base.replace(**kw)

    def _fusion(self: Self, tree: NestedDotDict, prefix: str, dims: Dims, default: FusionKind | None) -> FusionConfig:
        kind = tree.get_as(f"{prefix}.kind", str)
        if kind is None and default is None:
            msg = f"Missing required key {prefix}.kind"
            raise ConfigInvalidError(msg, key=f"{prefix}.kind")
        base = dims.fusion(default if kind is None else kind, (1, 1))
        return base.replace(**self.section(tree, prefix, base, skip=("kind", "in_dims")))

    def model_config(self: Self, tree: NestedDotDict, dims: Dims = FULL_DIMS) -> ModelConfig | None:
        """
        The `[model]` section as a model config, or `None` if it has no `arch`.
        Slow-fusion archs default to BLOCK Tucker in the first layer.
        """
        if "model.arch" not in tree:
            return None
        allowed = {"arch", "features", "mlp_hidden", "dropout_p", "encoder_hidden", "head_weights", "fusion", "second"}
        unknown = sorted(set(tree.sub("model")) - allowed)
        if unknown:
            msg = f"Unknown key model.{unknown[0]}; expected one of {sorted(allowed)}"
            raise ConfigInvalidError(msg, key=f"model.{unknown[0]}")
        arch = Arch.of(tree.req_as("model.arch", str))
        fusion = second = None
        if arch is Arch.BIMODAL:
            fusion = self._fusion(tree, "model.fusion", dims, FusionKind.BLOCK_TUCKER)
        elif arch.is_slow_fusion:
            fusion = self._fusion(tree, "model.fusion", dims, FusionKind.BLOCK_TUCKER)
            if arch is Arch.SLOW_FUSION:
                second = self._fusion(tree, "model.second", dims, None)
        return ModelConfig(
            arch=arch,
            features=tuple(tree.get_list_as("model.features", str)),
            fusion=fusion,
            second=second,
            mlp_hidden=dims.mlp_hidden,
            dropout_p=dims.dropout_p,
            encoder_hidden=dims.encoder_hidden,
            head_weights=tuple(tree.get_list_as("model.head_weights", float, [1.0, 1.0, 1.0])),
        )

    def spec_from(
        self: Self,
        tree: NestedDotDict,
        kind: ExperimentKind | str,
        *,
        out: PathLike | None = None,
        data: PathLike | None = None,
        preset: str | None = None,
        seeds: Sequence[int] | None = None,
        threads: int | None = None,
        checkpoints: bool | None = None,
    ) -> ExperimentSpec:
        """
        Builds a spec from a config tree; keyword arguments (command-line flags) win over the tree.
        With neither a data file nor a `[synth]` section, claims are generated with the preset's settings.
        """
        preset = preset if preset is not None else tree.get_as("experiment.preset", str, "full")
        if preset not in PRESETS:
            msg = f"No preset named {preset}; choose from {sorted(PRESETS)}"
            raise ConfigInvalidError(msg, key="experiment.preset", value=preset)
        p = PRESETS[preset]
        allowed = {"preset", "data", "out", "threads", "checkpoints"}
        unknown = sorted(set(tree.sub("experiment")) - allowed)
        if unknown:
            msg = f"Unknown key experiment.{unknown[0]}; expected one of {sorted(allowed)}"
            raise ConfigInvalidError(msg, key=f"experiment.{unknown[0]}")
        dims = self.dims(tree, p.dims)
        train = self.train_config(tree, p.train)
        if seeds is not None:
            train = train.replace(seeds=tuple(seeds))
        data = data if data is not None else tree.get_as("experiment.data", str)
        out = out if out is not None else tree.get_as("experiment.out", str, "results")
        model = self.model_config(tree, dims)
        return ExperimentSpec(
            kind=ExperimentKind.of(kind),
            out=Path(out),
            data=None if data is None else Path(data),
            synth=self.synth_config(tree, p.synth) if data is None else None,
            train=train,
            models=() if model is None else (model,),
            dims=dims,
            threads=threads if threads is not None else tree.get_as("experiment.threads", int, 1),
            checkpoints=checkpoints if checkpoints is not None else tree.get_as("experiment.checkpoints", bool, True),
            preset=preset,
        )

    def load_records(self: Self, spec: ExperimentSpec) -> list[ClaimRecord]:
        if spec.data is not None:
            return IoTools.load_claims(spec.data)
        return SynthTools.generate_synthetic(spec.synth).records

    def unimodal_configs(self: Self, dims: Dims = FULL_DIMS) -> list[ModelConfig]:
        """One MLP per feature, in feature order."""
        return [
            ModelConfig(
                arch=Arch.UNIMODAL,
                features=(f,),
                mlp_hidden=dims.mlp_hidden,
                dropout_p=dims.dropout_p,
                encoder_hidden=dims.encoder_hidden,
            )
            for f in Feature
        ]

    def grid_configs(self: Self, dims: Dims = FULL_DIMS) -> list[ModelConfig]:
        """
        Every cross-modal pair with every fusion strategy: 8 × 7 = 56 configs, pairs varying slowest.
        """
        grid = GridIterator({"pair": enumerate_pairs(), "kind": list(FusionKind)})
        return [
            ModelConfig(
                arch=Arch.BIMODAL,
                features=pair,
                fusion=dims.fusion(kind, (pair[0].dim, pair[1].dim)),
                dropout_p=dims.dropout_p,
                encoder_hidden=dims.encoder_hidden,
            )
            for pair, kind in grid
        ]

    def suite_configs(self: Self, dims: Dims = FULL_DIMS) -> list[ModelConfig]:
        """
        The eight multimodal models, in reporting order:
        both concatenation baselines, the four slow-fusion variants, AutoFraudNet, AutoFraudNet + Heads.
        """
        common = {"dropout_p": dims.dropout_p, "encoder_hidden": dims.encoder_hidden}
        first = dims.fusion(FusionKind.BLOCK_TUCKER, (1, 1))
        configs = [
            ModelConfig(arch=Arch.CONCAT_ALL, mlp_hidden=dims.mlp_hidden, **common),
            ModelConfig(arch=Arch.CONCAT_WO_TEXT, mlp_hidden=dims.mlp_hidden, **common),
        ]
        configs += [
            ModelConfig(arch=Arch.SLOW_FUSION, fusion=first, second=dims.fusion(kind, (1, 1)), **common)
            for kind in (FusionKind.MFB, FusionKind.MLB, FusionKind.BLOCK, FusionKind.BLOCK_TUCKER)
        ]
        configs += [
            ModelConfig(arch=Arch.AUTOFRAUDNET, fusion=first, **common),
            ModelConfig(arch=Arch.AUTOFRAUDNET_HEADS, fusion=first, **common),
        ]
        return configs

    def fingerprint(self: Self, batch: ClaimBatch) -> str:
        """Identifies a dataset by its claim IDs and labels."""
        h = hashlib.sha256()
        for cid, label in zip(batch.claim_ids, batch.labels.tolist(), strict=True):
            h.update(f"{cid}\t{label}\n".encode())
        return h.hexdigest()

    def restrict(self: Self, split: SplitIndices, keep: NDArray[np.bool_]) -> SplitIndices:
        """
        Re-indexes a split onto the rows where `keep` is true, so models that drop claims share the split.
        """
        position = np.cumsum(keep) - 1
        return SplitIndices(*(position[idx[keep[idx]]].astype(np.int64) for idx in (split.train, split.val, split.test)))

    def shared_split(self: Self, batch: ClaimBatch, train: TrainConfig) -> SplitIndices:
        return TrainTools.split_stratified(batch.labels, train.ratios, train.split_seed)

    def model_data(
        self: Self,
        config: ModelConfig,
        batch: ClaimBatch,
        split: SplitIndices,
    ) -> tuple[ClaimBatch, SplitIndices]:
        """The claims a model can use: text models drop claims without text."""
        if Feature.TEXT not in config.features or bool(np.all(batch.has_text)):
            return batch, split
        keep = batch.has_text
        logger.warning(f"{config.label}: dropping {int(np.sum(~keep))} of {len(batch)} claims without text")
        return batch.take(np.flatnonzero(keep)), self.restrict(split, keep)

    def cell_path(self: Self, spec: ExperimentSpec, config: ModelConfig) -> Path:
        return spec.out / "cells" / f"{self.slug(config.label)}.json"

    def checkpoint_path(self: Self, spec: ExperimentSpec, config: ModelConfig) -> Path:
        return spec.out / "runs" / self.slug(config.label) / "model.afn"

    def run_cell(
        self: Self,
        config: ModelConfig,
        batch: ClaimBatch,
        split: SplitIndices,
        spec: ExperimentSpec,
        *,
        seed_threads: int = 1,
    ) -> CellResult:
        """
        Trains one config over all seeds, or returns its stored result.

        Raises:
            ConfigMismatchError: If a stored result was produced with different settings or data
        """
        path = self.cell_path(spec, config)
        key = _normalize({"config": config.to_dict(), "train": spec.train.to_dict(), "data": self.fingerprint(batch)})
        if path.exists():
            cached = orjson.loads(SmartIo.read_bytes(path))
            stored = {k: cached.get(k) for k in key}
            if stored != key:
                msg = f"{path} holds results for other settings or data; use another output directory"
                raise ConfigMismatchError(msg, expected=config.label, actual=cached.get("label"))
            logger.warning(f"Skipping {config.label}: already done in {path}")
            return CellResult.of(cached)
        data, model_split = self.model_data(config, batch, split)
        run_dir = path.parent.parent / "runs" / self.slug(config.label)
        for seed in spec.train.seeds:
            (run_dir / f"seed-{seed}" / "history.jsonl").unlink(missing_ok=True)

        def on_epoch(seed: int, record: EpochRecord) -> None:
            IoTools.append_jsonl(run_dir / f"seed-{seed}" / "history.jsonl", record.to_dict())

        logger.info(f"Training {config.label} on {len(data)} claims with seeds {list(spec.train.seeds)}")
        summary = TrainTools.multi_seed_run(
            config, data, spec.train, split=model_split, threads=seed_threads, on_epoch=on_epoch
        )
        runs = tuple(
            {
                "seed": r.seed,
                "best_epoch": r.trained.best_epoch,
                "threshold": r.trained.threshold,
                "val": r.trained.val_report.to_row(),
                "test": r.test_report.to_row(),
            }
            for r in summary.runs
        )
        result = CellResult(config.label, config, summary.n_params, runs, summary.mean, summary.std)
        if spec.checkpoints:
            best = max(summary.runs, key=lambda r: r.trained.val_report.pr_auc)
            metadata = {
                "label": config.label,
                "seed": best.seed,
                "threshold": best.trained.threshold,
                "split_seed": spec.train.split_seed,
                "ratios": list(spec.train.ratios),
                "data": key["data"],
                "val": best.trained.val_report.to_row(),
                "test": best.test_report.to_row(),
            }
            IoTools.save_checkpoint(best.trained.model, run_dir / "model.afn", metadata)
        SmartIo.write(_encoder.as_bytes(result.to_dict() | key), path)
        return result

    def run_cells(self: Self, configs: Sequence[ModelConfig], records: Sequence[ClaimRecord], spec: ExperimentSpec) -> list[CellResult]:
        """
        Runs configs on a shared split; cells run on `spec.threads` threads, each owning its own models.
        Results keep the order of `configs`.
        """
        labels = [c.label for c in configs]
        if len(set(labels)) != len(labels):
            msg = "Model labels must be unique within one experiment"
            raise ConfigInvalidError(msg, key="models", value=labels)
        batch = FeatureTools.batch(records)
        split = self.shared_split(batch, spec.train)
        seed_threads = spec.threads if len(configs) == 1 else 1
        cell_threads = min(spec.threads, len(configs))

        def _one(config: ModelConfig) -> CellResult:
            return self.run_cell(config, batch, split, spec, seed_threads=seed_threads)

        if cell_threads > 1:
            with ThreadPoolExecutor(max_workers=cell_threads) as pool:
                return list(pool.map(_one, configs))
        return [_one(c) for c in configs]

    def load_cells(self: Self, out: PathLike) -> list[CellResult]:
        """Every stored cell under `out`, sorted by file name."""
        cells_dir = Path(out) / "cells"
        if not cells_dir.is_dir():
            return []
        return [CellResult.of(orjson.loads(SmartIo.read_bytes(p))) for p in sorted(cells_dir.glob("*.json"))]

    def unimodal_frame(self: Self, cells: Sequence[CellResult]) -> pd.DataFrame:
        rows = []
        for c in cells:
            f = c.config.features[0]
            rows.append({"model": f.label, "modality": f.modality.key.capitalize(), **self._metrics(c)})
        return pd.DataFrame(rows)

    def grid_frame(self: Self, cells: Sequence[CellResult]) -> pd.DataFrame:
        rows = []
        for c in cells:
            a, b = c.config.features
            rows.append(
                {
                    "pair": f"{a.label} + {b.label}",
                    "strategy": c.config.fusion.kind.label,
                    "pr_auc_mean": c.mean["pr_auc"],
                    "pr_auc_std": c.std["pr_auc"],
                    "pr_auc_runs": c.values("pr_auc"),
                    "n_seeds": len(c.runs),
                    "n_params": c.n_params,
                }
            )
        return pd.DataFrame(rows)

    def suite_frame(self: Self, cells: Sequence[CellResult]) -> pd.DataFrame:
        return pd.DataFrame([{"model": c.label, **self._metrics(c), "n_params": c.n_params} for c in cells])

    def _metrics(self: Self, c: CellResult) -> dict[str, Any]:
        row = c.to_row()
        keep = [*METRIC_COLUMNS, "pr_auc_std", "threshold", "val_fraud_recall_min", "n_seeds"]
        return {k: row[k] for k in keep}

    def parameter_frame(self: Self, cells: Sequence[CellResult]) -> pd.DataFrame:
        """
        Parameter counts, with the cost of the auxiliary heads and the saving of AutoFraudNet over SF - BLOCK Tucker.
        """
        n = {c.label: c.n_params for c in cells}
        rows = [{"quantity": f"parameters: {label}", "value": float(v)} for label, v in n.items()]
        if "AutoFraudNet" in n and "AutoFraudNet + Heads" in n:
            rows.append({"quantity": "heads cost", "value": float(n["AutoFraudNet + Heads"] - n["AutoFraudNet"])})
        if "AutoFraudNet" in n and "SF - BLOCK Tucker" in n:
            reduction = ReportTools.parameter_reduction(n["AutoFraudNet"], n["SF - BLOCK Tucker"])
            rows.append({"quantity": "% fewer parameters, AutoFraudNet vs SF - BLOCK Tucker", "value": reduction})
        return pd.DataFrame(rows)

    def run_unimodal(self: Self, spec: ExperimentSpec, records: Sequence[ClaimRecord]) -> pd.DataFrame:
        cells = self.run_cells(self.unimodal_configs(spec.dims), records, spec)
        table = self.unimodal_frame(cells)
        ReportTools.write(spec.out, {"unimodal": table}, text_sections=[("Unimodal models", table)])
        return table

    def run_grid(self: Self, spec: ExperimentSpec, records: Sequence[ClaimRecord]) -> pd.DataFrame:
        cells = self.run_cells(self.grid_configs(spec.dims), records, spec)
        grid = self.grid_frame(cells)
        mean, std = ReportTools.grid_matrices(grid)
        strategies = ReportTools.strategy_summary(grid)
        ReportTools.write(
            spec.out,
            {"grid": grid, "mean": mean.reset_index(), "std": std.reset_index(), "strategies": strategies},
            text_sections=[
                ("PR AUC, mean over seeds", mean.reset_index()),
                ("PR AUC, standard deviation over seeds", std.reset_index()),
                ("Fusion strategies over all pairs", strategies),
            ],
        )
        return grid

    def run_suite(self: Self, spec: ExperimentSpec, records: Sequence[ClaimRecord]) -> pd.DataFrame:
        cells = self.run_cells(self.suite_configs(spec.dims), records, spec)
        table = self.suite_frame(cells)
        params = self.parameter_frame(cells)
        ReportTools.write(
            spec.out,
            {"suite": table, "parameters": params},
            text_sections=[("Multimodal models", table), ("Parameters", params)],
        )
        return table

    def run_single(self: Self, spec: ExperimentSpec, records: Sequence[ClaimRecord]) -> CellResult:
        (cell,) = self.run_cells(spec.models, records, spec)
        table = self.suite_frame([cell])
        ReportTools.write(spec.out, {"model": table}, text_sections=[(cell.label, table)])
        return cell

    def evaluate_checkpoint(
        self: Self,
        path: PathLike,
        records: Sequence[ClaimRecord],
        *,
        split: str = "test",
        expected: ModelConfig | None = None,
        threshold: float | None = None,
    ) -> MetricsReport:
        """
        Scores one split (`train`, `val`, `test` or `all`) with a saved model,
        recreating the split from the seed and ratios stored in the checkpoint.

        Raises:
            ConfigMismatchError: If `expected` differs from the stored config
        """
        ckpt = IoTools.read_checkpoint(path, expected=expected)
        meta = ckpt.metadata
        batch = FeatureTools.batch(records)
        train = TrainConfig(
            split_seed=int(meta.get("split_seed", 0)),
            ratios=tuple(meta.get("ratios", (0.8, 0.1, 0.1))),
        )
        shared = self.shared_split(batch, train)
        data, model_split = self.model_data(ckpt.model.config, batch, shared)
        choices = {"train": model_split.train, "val": model_split.val, "test": model_split.test}
        if split == "all":
            idx = np.arange(len(data))
        elif split in choices:
            idx = choices[split]
        else:
            msg = f"No split named {split}; choose from {[*choices, 'all']}"
            raise ValueIllegalError(msg, value=split)
        if threshold is None:
            if "threshold" not in meta:
                msg = f"{path} stores no threshold; pass one"
                raise ConfigInvalidError(msg, key="threshold")
            threshold = float(meta["threshold"])
        report = TrainTools.evaluate(ckpt.model, data.take(idx), threshold)
        logger.info(f"{ckpt.model.config.label} on {split} ({len(idx)} claims): PR AUC {report.pr_auc:.4f}")
        return report

    def build_report(
        self: Self,
        out: PathLike,
        *,
        unimodal: PathLike | None = None,
        grid: PathLike | None = None,
        suite: PathLike | None = None,
    ) -> dict[str, pd.DataFrame]:
        """
        Combines stored unimodal, grid and suite results with the published-table audit.
        Missing result directories are skipped.
        """
        out = Path(out)
        tables: dict[str, pd.DataFrame] = {"audit": ReportTools.audit_published_tables()}
        u = self.load_cells(unimodal if unimodal is not None else out / "unimodal")
        g = self.load_cells(grid if grid is not None else out / "grid")
        s = self.load_cells(suite if suite is not None else out / "suite")
        order = {label: i for i, label in enumerate(c.label for c in self.suite_configs())}
        s = sorted(s, key=lambda c: order.get(c.label, len(order)))
        sections = []
        if u:
            tables["unimodal"] = self.unimodal_frame(u)
            sections.append(("Unimodal models", tables["unimodal"]))
        if g:
            tables["grid"] = self.grid_frame(g)
            tables["strategies"] = ReportTools.strategy_summary(tables["grid"])
            sections.append(("Fusion strategies over all pairs", tables["strategies"]))
        if s:
            tables["suite"] = self.suite_frame(s)
            tables["parameters"] = self.parameter_frame(s)
            sections += [("Multimodal models", tables["suite"]), ("Parameters", tables["parameters"])]
        if u and g and s and "AutoFraudNet + Heads" in set(tables["suite"]["model"]):
            tables["insights"] = ReportTools.insights(tables["unimodal"], tables["grid"], tables["suite"])
            sections.append(("Unimodal best, bimodal best, AutoFraudNet + Heads", tables["insights"]))
        sections.append(("Published tables: recomputed F1 and balanced accuracy", tables["audit"]))
        ordered = {"audit": tables["audit"]} | {k: v for k, v in tables.items() if k != "audit"}
        ReportTools.write(out, ordered, stem="report", text_sections=sections)
        return tables


ExperimentTools = ExperimentUtils()
