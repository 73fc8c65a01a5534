# SPDX-FileCopyrightText: Copyright 2023, Contributors to claimfusion
# SPDX-PackageHomePage: https://github.com/claimfusion/claimfusion
# SPDX-License-Identifier: Apache-2.0
"""
Command-line interface.

Exit codes: 0 on success, 2 for invalid usage or settings, 3 for bad or missing data, 4 for numeric failures.
"""

import logging
import sys
from collections.abc import Iterator
from contextlib import contextmanager
from pathlib import Path
from typing import Annotated

import pandas as pd
import typer
from loguru import logger

from claimfusion._meta import Metadata
from claimfusion.core.dot_dict import NestedDotDict
from claimfusion.core.exceptions import (
    AvailabilityError,
    CheckpointError,
    ConfigInvalidError,
    ConfigMismatchError,
    DataFormatError,
    Error,
    NonFiniteError,
    NumericFailureError,
    PathExistsError,
    UndefinedMetricError,
    ValueIllegalError,
)
from claimfusion.core.records import ClaimRecord
from claimfusion.core.smartio import SmartIo
from claimfusion.tools.experiment_tools import PRESETS, ExperimentKind, ExperimentSpec, ExperimentTools
from claimfusion.tools.io_tools import CLAIMS_FORMAT_VERSION, IoTools
from claimfusion.tools.report_tools import ReportTools
from claimfusion.tools.synth_tools import SynthTools

__all__ = ["app", "exit_code"]

_pkg_logger = logging.getLogger("claimfusion")
_FORMAT = "<green>{time:HH:mm:ss}</green> <level>{level: <7}</level> {message}"

app = typer.Typer(
    name="claimfusion",
    help="Multimodal fusion experiments for insurance-claim fraud detection.",
    no_args_is_help=True,
    pretty_exceptions_enable=False,
    add_completion=False,
)


class InterceptHandler(logging.Handler):
    """Sends records from the package's stdlib logger to loguru."""

    def emit(self, record: logging.LogRecord) -> None:
        try:
            level = logger.level(record.levelname).name
        except ValueError:
            level = record.levelno
        frame, depth = logging.currentframe(), 2
        while frame is not None and frame.f_code.co_filename == logging.__file__:
            frame = frame.f_back
            depth += 1
        logger.opt(depth=depth, exception=record.exc_info).log(level, record.getMessage())


def configure_logging(level: str) -> None:
    logger.remove()
    logger.add(sys.stderr, level=level, format=_FORMAT, colorize=None)
    for h in list(_pkg_logger.handlers):
        if isinstance(h, InterceptHandler):
            _pkg_logger.removeHandler(h)
    _pkg_logger.addHandler(InterceptHandler())
    _pkg_logger.setLevel(level)
    _pkg_logger.propagate = False


def exit_code(e: BaseException) -> int | None:
    """The process exit code for an error, or `None` if it is a bug."""
    if isinstance(e, NumericFailureError | NonFiniteError):
        return 4
    if isinstance(
        e,
        DataFormatError
        | CheckpointError
        | ConfigMismatchError
        | AvailabilityError
        | UndefinedMetricError
        | FileNotFoundError
        | IsADirectoryError,
    ):
        return 3
    if isinstance(e, ValueIllegalError | PathExistsError | Error):
        return 2
    return None


@contextmanager
def _handled() -> Iterator[None]:
    try:
        yield
    except (Error, OSError) as e:
        code = exit_code(e)
        if code is None:
            raise
        logger.error(f"{type(e).__name__}: {e}")
        raise typer.Exit(code) from None


def _version(value: bool) -> None:
    if value:
        typer.echo(f"{Metadata.pkg} {Metadata.version}")
        raise typer.Exit


@app.callback()
def main(
    verbose: Annotated[bool, typer.Option("--verbose", "-v", help="Log every training step")] = False,
    quiet: Annotated[bool, typer.Option("--quiet", "-q", help="Log only warnings and errors")] = False,
    version: Annotated[
        bool,
        typer.Option("--version", callback=_version, is_eager=True, help="Show the version and exit"),
    ] = False,
) -> None:
    """
    Multimodal fusion experiments for insurance-claim fraud detection.
    """
    configure_logging("DEBUG" if verbose else "WARNING" if quiet else "INFO")


ConfigOpt = Annotated[Path | None, typer.Option("--config", "-c", help="TOML config file", dir_okay=False)]
SetOpt = Annotated[list[str] | None, typer.Option("--set", help="Override a config leaf: key.sub=value")]
PresetOpt = Annotated[str | None, typer.Option("--preset", help=f"Defaults to start from: {', '.join(PRESETS)}")]
DataOpt = Annotated[Path | None, typer.Option("--data", "-d", help="Claim file (JSON Lines, optionally compressed)")]
OutOpt = Annotated[Path | None, typer.Option("--out", "-o", help="Output directory")]
SeedOpt = Annotated[list[int] | None, typer.Option("--seed", help="Training seed; repeat for several")]
SeedsOpt = Annotated[int | None, typer.Option("--seeds", min=1, help="Use seeds 0 to N-1")]
ThreadsOpt = Annotated[int | None, typer.Option("--threads", "-t", min=1, help="Parallel cells (or seeds)")]
CheckpointsOpt = Annotated[
    bool | None,
    typer.Option("--checkpoints/--no-checkpoints", help="Save the best seed's parameters per model"),
]


def _tree(config: Path | None, sets: list[str] | None) -> NestedDotDict:
    return ExperimentTools.load_config(config).with_assignments(sets or [])


def _seeds(seed: list[int] | None, seeds: int | None) -> tuple[int, ...] | None:
    if seed and seeds is not None:
        msg = "Use either --seed or --seeds"
        raise ConfigInvalidError(msg, key="seeds")
    if seed:
        return tuple(seed)
    if seeds is not None:
        return tuple(range(seeds))
    return None


def _echo(title: str, df: pd.DataFrame) -> None:
    typer.echo(ReportTools.to_text(df, title))


def _experiment(
    kind: ExperimentKind,
    *,
    config: Path | None,
    sets: list[str] | None,
    preset: str | None,
    data: Path | None,
    out: Path | None,
    seed: list[int] | None,
    seeds: int | None,
    threads: int | None,
    checkpoints: bool | None,
) -> tuple[ExperimentSpec, list[ClaimRecord]]:
    tree = _tree(config, sets)
    if kind is ExperimentKind.SINGLE and "model.arch" not in tree:
        tree = tree.with_leaf("model.arch", "autofraudnet_heads")
    spec = ExperimentTools.spec_from(
        tree,
        kind,
        out=out,
        data=data,
        preset=preset,
        seeds=_seeds(seed, seeds),
        threads=threads,
        checkpoints=checkpoints,
    )
    return spec, ExperimentTools.load_records(spec)


@app.command()
def synth(
    out: Annotated[Path, typer.Option("--out", "-o", help="Claim file to write (.jsonl, .jsonl.gz, ...)")],
    n: Annotated[int | None, typer.Option("--n", help="Number of claims")] = None,
    fraud_rate: Annotated[float | None, typer.Option("--fraud-rate", help="Share of fraudulent claims")] = None,
    seed: Annotated[int | None, typer.Option("--seed", help="Generator seed")] = None,
    config: ConfigOpt = None,
    sets: SetOpt = None,
    preset: PresetOpt = None,
    overwrite: Annotated[bool, typer.Option("--overwrite/--no-overwrite", help="Replace an existing file")] = True,
) -> None:
    """
    Generates a synthetic claim file and a TOML manifest of the generator settings next to it.
    """
    with _handled():
        tree = _tree(config, sets)
        for key, value in {"synth.n_claims": n, "synth.fraud_rate": fraud_rate, "synth.seed": seed}.items():
            if value is not None:
                tree = tree.with_leaf(key, value)
        preset = preset if preset is not None else tree.get_as("experiment.preset", str, "full")
        if preset not in PRESETS:
            msg = f"No preset named {preset}; choose from {sorted(PRESETS)}"
            raise ConfigInvalidError(msg, key="preset", value=preset)
        cfg = ExperimentTools.synth_config(tree, PRESETS[preset].synth)
        if out.exists() and not overwrite:
            msg = f"{out} already exists"
            raise PathExistsError(msg, filename=str(out))
        draw = SynthTools.generate_synthetic(cfg)
        path = IoTools.save_claims(draw.records, out)
        manifest = NestedDotDict(
            {
                "dataset": {
                    "file": path.name,
                    "format_version": CLAIMS_FORMAT_VERSION,
                    "claims": len(draw.records),
                    "frauds": int(draw.labels.sum()),
                    "intercept": draw.intercept,
                },
                "synth": cfg.to_dict(),
            }
        )
        manifest_path = SmartIo.write_text(manifest.to_toml(), path.parent / f"{path.name}.toml")
        logger.info(f"Wrote {len(draw.records)} claims to {path} and settings to {manifest_path}")


@app.command()
def train(
    config: ConfigOpt = None,
    sets: SetOpt = None,
    preset: PresetOpt = None,
    data: DataOpt = None,
    out: OutOpt = None,
    seed: SeedOpt = None,
    seeds: SeedsOpt = None,
    threads: ThreadsOpt = None,
    checkpoints: CheckpointsOpt = None,
) -> None:
    """
    Trains the `[model]` of the config (AutoFraudNet + Heads if none) over the seeds.
    """
    with _handled():
        spec, records = _experiment(
            ExperimentKind.SINGLE,
            config=config,
            sets=sets,
            preset=preset,
            data=data,
            out=out,
            seed=seed,
            seeds=seeds,
            threads=threads,
            checkpoints=checkpoints,
        )
        cell = ExperimentTools.run_single(spec, records)
        _echo(cell.label, ExperimentTools.suite_frame([cell]))
        if spec.checkpoints:
            typer.echo(f"checkpoint: {ExperimentTools.checkpoint_path(spec, cell.config)}")


@app.command(name="eval")
def evaluate(
    checkpoint: Annotated[Path, typer.Argument(help="Saved model (.afn)", dir_okay=False)],
    split: Annotated[str, typer.Option("--split", help="train, val, test or all")] = "test",
    threshold: Annotated[float | None, typer.Option("--threshold", help="Override the stored threshold")] = None,
    config: ConfigOpt = None,
    sets: SetOpt = None,
    preset: PresetOpt = None,
    data: DataOpt = None,
    out: OutOpt = None,
) -> None:
    """
    Scores one split with a saved model. A `[model]` in the config must match the stored one.
    """
    with _handled():
        tree = _tree(config, sets)
        preset = preset if preset is not None else tree.get_as("experiment.preset", str, "full")
        if preset not in PRESETS:
            msg = f"No preset named {preset}; choose from {sorted(PRESETS)}"
            raise ConfigInvalidError(msg, key="preset", value=preset)
        dims = ExperimentTools.dims(tree, PRESETS[preset].dims)
        expected = ExperimentTools.model_config(tree, dims)
        data = data if data is not None else tree.get_as("experiment.data", str)
        records: list[ClaimRecord]
        if data is not None:
            records = IoTools.load_claims(data)
        else:
            records = SynthTools.generate_synthetic(ExperimentTools.synth_config(tree, PRESETS[preset].synth)).records
        report = ExperimentTools.evaluate_checkpoint(
            checkpoint, records, split=split, expected=expected, threshold=threshold
        )
        table = pd.DataFrame([{"split": split, **report.to_row()}])
        _echo(f"{checkpoint.name} on {split}", table)
        if out is not None:
            ReportTools.write(out, {"eval": table}, text_sections=[(f"{checkpoint.name} on {split}", table)])


@app.command()
def unimodal(
    config: ConfigOpt = None,
    sets: SetOpt = None,
    preset: PresetOpt = None,
    data: DataOpt = None,
    out: OutOpt = None,
    seed: SeedOpt = None,
    seeds: SeedsOpt = None,
    threads: ThreadsOpt = None,
    checkpoints: CheckpointsOpt = None,
) -> None:
    """
    Trains the five unimodal models.
    """
    with _handled():
        spec, records = _experiment(
            ExperimentKind.UNIMODAL,
            config=config,
            sets=sets,
            preset=preset,
            data=data,
            out=out,
            seed=seed,
            seeds=seeds,
            threads=threads,
            checkpoints=checkpoints,
        )
        _echo("Unimodal models", ExperimentTools.run_unimodal(spec, records))


@app.command()
def grid(
    config: ConfigOpt = None,
    sets: SetOpt = None,
    preset: PresetOpt = None,
    data: DataOpt = None,
    out: OutOpt = None,
    seed: SeedOpt = None,
    seeds: SeedsOpt = None,
    threads: ThreadsOpt = None,
    checkpoints: CheckpointsOpt = None,
) -> None:
    """
    Trains every cross-modal pair with every fusion strategy (56 models); resumes from finished cells.
    """
    with _handled():
        spec, records = _experiment(
            ExperimentKind.BIMODAL_GRID,
            config=config,
            sets=sets,
            preset=preset,
            data=data,
            out=out,
            seed=seed,
            seeds=seeds,
            threads=threads,
            checkpoints=checkpoints,
        )
        table = ExperimentTools.run_grid(spec, records)
        mean, _ = ReportTools.grid_matrices(table)
        _echo("PR AUC, mean over seeds", mean.reset_index())


@app.command()
def suite(
    config: ConfigOpt = None,
    sets: SetOpt = None,
    preset: PresetOpt = None,
    data: DataOpt = None,
    out: OutOpt = None,
    seed: SeedOpt = None,
    seeds: SeedsOpt = None,
    threads: ThreadsOpt = None,
    checkpoints: CheckpointsOpt = None,
) -> None:
    """
    Trains the eight multimodal models on shared splits and seeds.
    """
    with _handled():
        spec, records = _experiment(
            ExperimentKind.MULTIMODAL_SUITE,
            config=config,
            sets=sets,
            preset=preset,
            data=data,
            out=out,
            seed=seed,
            seeds=seeds,
            threads=threads,
            checkpoints=checkpoints,
        )
        _echo("Multimodal models", ExperimentTools.run_suite(spec, records))


@app.command()
def report(
    out: Annotated[Path, typer.Option("--out", "-o", help="Directory to write the report to")],
    unimodal_dir: Annotated[Path | None, typer.Option("--unimodal", help="Output of `unimodal`")] = None,
    grid_dir: Annotated[Path | None, typer.Option("--grid", help="Output of `grid`")] = None,
    suite_dir: Annotated[Path | None, typer.Option("--suite", help="Output of `suite`")] = None,
) -> None:
    """
    Combines finished results with the audit of the published tables.
    By default, results are read from the `unimodal`, `grid` and `suite` subdirectories of `--out`.
    """
    with _handled():
        tables = ExperimentTools.build_report(out, unimodal=unimodal_dir, grid=grid_dir, suite=suite_dir)
        if "insights" in tables:
            _echo("Unimodal best, bimodal best, AutoFraudNet + Heads", tables["insights"])
        audit = tables["audit"]
        bad = audit[~audit["consistent"]]
        typer.echo(f"published cells checked: {len(audit)}; inconsistent: {len(bad)}")
        if len(bad) > 0:
            _echo("Inconsistent published cells", bad)


if __name__ == "__main__":
    app()
