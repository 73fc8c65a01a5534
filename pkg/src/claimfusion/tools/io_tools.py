# SPDX-FileCopyrightText: Copyright 2023, Contributors to claimfusion
# SPDX-PackageHomePage: https://github.com/claimfusion/claimfusion
# SPDX-License-Identifier: Apache-2.0
"""
Reading and writing claim files and model checkpoints.

Claim files are JSON Lines, one claim per line:

    {"claim_id": "...", "label": 0,
     "images": [{"cds": [720], "ud": [720], "part_vis": [21], "ud_score": [21], "absent_parts": [...]}],
     "struct_onehot": [87], "text_emb": [768] | null}

`absent_parts` is optional. A `.gz`, `.bz2` or `.xz` suffix compresses the file.

Checkpoints are a single binary file:

    8 bytes      magic `AFNCKPT1`
    8 bytes      manifest length `n`, unsigned little-endian
    n bytes      UTF-8 JSON manifest: format_version, config, metadata, and per array
                 its name, shape, dtype ("f32" or "f64") and byte offset into the data
    rest         raw row-major little-endian arrays
"""

from __future__ import annotations

import logging
import math
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Self

import numpy as np
import orjson
from numpy.typing import NDArray

from claimfusion.core.enums import Feature
from claimfusion.core.exceptions import (
    CheckpointError,
    CheckpointMagicError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ConfigInvalidError,
    ConfigMismatchError,
    DataFormatError,
    ValueIllegalError,
    VectorLengthError,
)
from claimfusion.core.models import Model, ModelConfig
from claimfusion.core.records import EMBEDDING_DIM, N_PARTS, STRUCT_DIM, TEXT_DIM, ClaimRecord, ImageRecord
from claimfusion.core.smartio import PathLike, SmartIo
from claimfusion.core.tensor import Parameters
from claimfusion.tools.json_tools import JsonTools, NanInfHandling

__all__ = [
    "CHECKPOINT_MAGIC",
    "CHECKPOINT_VERSION",
    "CLAIMS_FORMAT_VERSION",
    "Checkpoint",
    "IoUtils",
    "IoTools",
]

logger = logging.getLogger("claimfusion")

CHECKPOINT_MAGIC = b"AFNCKPT1"
CHECKPOINT_VERSION = 1
CLAIMS_FORMAT_VERSION = 1
_HEADER = len(CHECKPOINT_MAGIC) + 8
_DTYPES = {"f32": np.dtype("<f4"), "f64": np.dtype("<f8")}
_encoder = JsonTools.encoder(indent=False)


@dataclass(slots=True, frozen=True)
class Checkpoint:
    """
    A loaded checkpoint.

    Attributes:
        model: Config and parameters
        metadata: Free-form values saved alongside (threshold, seed, training settings)
        format_version: Version the file was written with
    """

    model: Model
    metadata: dict[str, Any] = field(default_factory=dict)
    format_version: int = CHECKPOINT_VERSION


def _vector(value: Any, length: int, path: str, line: int) -> NDArray[np.float64]:
    if not isinstance(value, list):
        msg = f"line {line}: {path}: expected a list of {length} numbers"
        raise DataFormatError(msg, line=line, field=path)
    if len(value) != length:
        msg = f"line {line}: {path}: expected {length}, got {len(value)}"
        raise VectorLengthError(msg, line=line, field=path, expected=length, actual=len(value))
    if not all(isinstance(v, int | float) and not isinstance(v, bool) for v in value):
        msg = f"line {line}: {path}: every entry must be a number"
        raise DataFormatError(msg, line=line, field=path)
    return np.asarray(value, dtype=np.float64)


def _required(obj: Mapping[str, Any], key: str, path: str, line: int) -> Any:
    if key not in obj:
        full = f"{path}.{key}" if path else key
        msg = f"line {line}: missing field {full}"
        raise DataFormatError(msg, line=line, field=full)
    return obj[key]


@dataclass(slots=True, frozen=True)
class IoUtils:
    def claim_to_dict(self: Self, rec: ClaimRecord) -> dict[str, Any]:
        images = []
        for img in rec.images:
            d = {
                "cds": img.cds.tolist(),
                "ud": img.ud.tolist(),
                "part_vis": img.part_vis.tolist(),
                "ud_score": img.ud_score.tolist(),
            }
            if img.absent_parts:
                d["absent_parts"] = sorted(img.absent_parts)
            images.append(d)
        return {
            "claim_id": rec.claim_id,
            "label": rec.label,
            "images": images,
            "struct_onehot": rec.struct_onehot.tolist(),
            "text_emb": None if rec.text_emb is None else rec.text_emb.tolist(),
        }

    def claim_from_dict(self: Self, obj: Any, line: int = 0) -> ClaimRecord:
        """
        Parses and validates one claim object.

        Raises:
            DataFormatError: With the 1-based line number and the dotted path of the bad field
        """
        if not isinstance(obj, dict):
            msg = f"line {line}: expected a JSON object, got {type(obj).__name__}"
            raise DataFormatError(msg, line=line, field="")
        claim_id = _required(obj, "claim_id", "", line)
        if not isinstance(claim_id, str) or claim_id == "":
            msg = f"line {line}: claim_id must be a non-empty string"
            raise DataFormatError(msg, line=line, field="claim_id")
        label = _required(obj, "label", "", line)
        if isinstance(label, bool) or label not in (0, 1):
            msg = f"line {line}: label must be 0 or 1, not {label!r}"
            raise DataFormatError(msg, line=line, field="label")
        raw_images = _required(obj, "images", "", line)
        if not isinstance(raw_images, list) or len(raw_images) == 0:
            msg = f"line {line}: images must be a non-empty list"
            raise DataFormatError(msg, line=line, field="images")
        images = []
        for i, img in enumerate(raw_images):
            path = f"images.{i}"
            if not isinstance(img, dict):
                msg = f"line {line}: {path} must be an object"
                raise DataFormatError(msg, line=line, field=path)
            absent = img.get("absent_parts", [])
            if not isinstance(absent, list) or not all(isinstance(a, int) and not isinstance(a, bool) for a in absent):
                msg = f"line {line}: {path}.absent_parts must be a list of part indices"
                raise DataFormatError(msg, line=line, field=f"{path}.absent_parts")
            vectors = {
                key: _vector(_required(img, key, path, line), length, f"{path}.{key}", line)
                for key, length in (
                    ("cds", EMBEDDING_DIM),
                    ("ud", EMBEDDING_DIM),
                    ("part_vis", N_PARTS),
                    ("ud_score", N_PARTS),
                )
            }
            try:
                images.append(ImageRecord(**vectors, absent_parts=frozenset(absent)))
            except (ValueIllegalError, DataFormatError) as e:
                msg = f"line {line}: {path}: {e.message}"
                raise DataFormatError(msg, line=line, field=path) from e
        struct = _vector(_required(obj, "struct_onehot", "", line), STRUCT_DIM, "struct_onehot", line)
        text = obj.get("text_emb")
        if text is not None:
            text = _vector(text, TEXT_DIM, "text_emb", line)
        try:
            return ClaimRecord(claim_id, int(label), tuple(images), struct, text)
        except DataFormatError as e:
            msg = f"line {line}: {e.message}"
            raise DataFormatError(msg, line=line, field=e.field) from e

    def iter_claims(self: Self, path: PathLike) -> Iterator[ClaimRecord]:
        """
        Yields claims in file order; blank lines are skipped.

        Raises:
            DataFormatError: On the first malformed line
            FileNotFoundError: If the file does not exist
        """
        for i, raw in enumerate(SmartIo.read_bytes(path).splitlines(), start=1):
            if raw.strip() == b"":
                continue
            try:
                obj = orjson.loads(raw)
            except orjson.JSONDecodeError as e:
                msg = f"line {i}: invalid JSON ({e})"
                raise DataFormatError(msg, line=i, field="") from e
            yield self.claim_from_dict(obj, i)

    def load_claims(self: Self, path: PathLike, required: Sequence[Feature] = (Feature.TEXT,)) -> list[ClaimRecord]:
        """
        Loads every claim. Claims lacking a feature in `required` are kept, but counted in a warning;
        use [`FeatureTools.filter_available`](claimfusion.tools.feature_tools.FeatureUtils.filter_available)
        to drop them for models that need those features.
        """
        records = list(self.iter_claims(path))
        seen: set[str] = set()
        for r in records:
            if r.claim_id in seen:
                msg = f"Duplicate claim_id {r.claim_id}"
                raise DataFormatError(msg, field="claim_id")
            seen.add(r.claim_id)
        flagged = sum(1 for r in records if r.missing(required))
        if flagged:
            names = ", ".join(f.label for f in required)
            logger.warning(f"{flagged} of {len(records)} claims in {path} lack one of: {names}")
        logger.info(f"Loaded {len(records)} claims ({sum(r.label for r in records)} fraudulent) from {path}")
        return records

    def save_claims(self: Self, records: Sequence[ClaimRecord], path: PathLike) -> Path:
        """Writes claims atomically; float64 values are written so they read back bit-exactly."""
        data = b"".join(_encoder.as_line(self.claim_to_dict(r)) for r in records)
        out = SmartIo.write(data, path)
        logger.info(f"Wrote {len(records)} claims to {out}")
        return out

    def checkpoint_bytes(self: Self, model: Model, metadata: Mapping[str, Any] | None = None) -> bytes:
        entries, chunks, offset = [], [], 0
        for name, arr in model.params.items():
            code = {np.dtype(np.float32): "f32", np.dtype(np.float64): "f64"}.get(arr.dtype)
            if code is None:
                msg = f"Cannot store {name} with dtype {arr.dtype}"
                raise ConfigInvalidError(msg, key=name, value=str(arr.dtype))
            raw = np.ascontiguousarray(arr, dtype=_DTYPES[code]).tobytes(order="C")
            entries.append({"name": name, "shape": list(arr.shape), "dtype": code, "offset": offset})
            chunks.append(raw)
            offset += len(raw)
        manifest = {
            "format_version": CHECKPOINT_VERSION,
            "config": model.config.to_dict(),
            "frozen": sorted(model.params.frozen),
            "metadata": JsonTools.prepare(dict(metadata or {})),
            "arrays": entries,
        }
        head = orjson.dumps(manifest)
        return CHECKPOINT_MAGIC + len(head).to_bytes(8, "little") + head + b"".join(chunks)

    def save_checkpoint(self: Self, model: Model, path: PathLike, metadata: Mapping[str, Any] | None = None) -> Path:
        out = SmartIo.write(self.checkpoint_bytes(model, metadata), path)
        logger.info(f"Saved {model.config.label} ({model.n_params} parameters) to {out}")
        return out

    def checkpoint_from_bytes(
        self: Self,
        data: bytes,
        *,
        expected: ModelConfig | None = None,
        filename: str | None = None,
    ) -> Checkpoint:
        """
        Parses a checkpoint. Nothing is allocated for the model until every check has passed.

        Raises:
            CheckpointMagicError: If the file does not start with the magic bytes
            CheckpointTruncatedError: If the file ends early
            CheckpointVersionError: If the format version is not supported
            CheckpointShapeError: If an array disagrees with the stored config
            ConfigMismatchError: If `expected` is given and differs from the stored config
        """
        magic = CHECKPOINT_MAGIC
        if len(data) < len(magic) and magic.startswith(data):
            msg = f"Checkpoint ends after {len(data)} bytes, inside the magic"
            raise CheckpointTruncatedError(msg, filename=filename)
        if data[: len(magic)] != magic:
            msg = f"Not a checkpoint: starts with {data[: len(magic)]!r}, not {magic!r}"
            raise CheckpointMagicError(msg, filename=filename)
        if len(data) < _HEADER:
            msg = f"Checkpoint ends after {len(data)} bytes, inside the header"
            raise CheckpointTruncatedError(msg, filename=filename)
        n = int.from_bytes(data[len(magic) : _HEADER], "little")
        if _HEADER + n > len(data):
            msg = f"Manifest needs {n} bytes but only {len(data) - _HEADER} remain"
            raise CheckpointTruncatedError(msg, filename=filename)
        try:
            manifest = orjson.loads(data[_HEADER : _HEADER + n])
        except orjson.JSONDecodeError as e:
            msg = f"Corrupt checkpoint manifest: {e}"
            raise CheckpointError(msg, filename=filename) from e
        version = manifest.get("format_version") if isinstance(manifest, dict) else None
        if version != CHECKPOINT_VERSION:
            msg = f"Checkpoint format version {version} is not supported (expected {CHECKPOINT_VERSION})"
            raise CheckpointVersionError(msg, filename=filename, version=version)
        try:
            config = ModelConfig.of(manifest["config"])
        except (KeyError, TypeError, ValueIllegalError) as e:
            msg = f"Checkpoint holds an invalid model config: {e}"
            raise CheckpointError(msg, filename=filename) from e
        if expected is not None and expected.to_dict() != config.to_dict():
            msg = f"Checkpoint is for {config.label}, not {expected.label}"
            raise ConfigMismatchError(msg, expected=expected.label, actual=config.label)
        shapes = config.shapes()
        payload = memoryview(data)[_HEADER + n :]
        arrays: dict[str, NDArray] = {}
        for entry in manifest.get("arrays", []):
            try:
                name, shape, code, offset = entry["name"], tuple(entry["shape"]), entry["dtype"], int(entry["offset"])
            except (KeyError, TypeError, ValueError) as e:
                msg = f"Checkpoint holds an invalid array entry {entry!r}: {e!r}"
                raise CheckpointError(msg, filename=filename) from e
            if name not in shapes or shapes[name] != shape:
                msg = f"Array {name} has shape {shape}; the config implies {shapes.get(name)}"
                raise CheckpointShapeError(msg, filename=filename, name=name)
            if code not in _DTYPES:
                msg = f"Array {name} has unknown dtype {code}"
                raise CheckpointError(msg, filename=filename, name=name)
            dtype = _DTYPES[code]
            count = math.prod(shape)
            if offset < 0 or offset + count * dtype.itemsize > len(payload):
                msg = f"Array {name} needs bytes [{offset}, {offset + count * dtype.itemsize}) of {len(payload)}"
                raise CheckpointTruncatedError(msg, filename=filename, name=name)
            arr = np.frombuffer(payload, dtype=dtype, count=count, offset=offset).reshape(shape)
            arrays[name] = arr.astype(dtype.newbyteorder("="), copy=True)
        missing = [k for k in shapes if k not in arrays]
        if missing:
            msg = f"Checkpoint lacks {len(missing)} arrays, starting with {missing[0]}"
            raise CheckpointShapeError(msg, filename=filename, name=missing[0])
        frozen = set(manifest.get("frozen", []))
        params = Parameters()
        for name in shapes:
            params.add(name, arrays[name], trainable=name not in frozen)
        return Checkpoint(Model(config, params), dict(manifest.get("metadata", {})), version)

    def read_checkpoint(self: Self, path: PathLike, *, expected: ModelConfig | None = None) -> Checkpoint:
        return self.checkpoint_from_bytes(SmartIo.read_bytes(path), expected=expected, filename=str(path))

    def load_checkpoint(self: Self, path: PathLike, *, expected: ModelConfig | None = None) -> Model:
        return self.read_checkpoint(path, expected=expected).model

    def append_jsonl(self: Self, path: PathLike, row: Mapping[str, Any]) -> None:
        """
        Appends one object to a JSON Lines file, creating it if needed.
        Non-finite floats are written as strings.
        """
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        line = JsonTools.encoder(
            indent=False,
            nan_handling=NanInfHandling.convert_to_str,
            inf_handling=NanInfHandling.convert_to_str,
        ).as_line(row)
        with path.open("ab") as f:
            f.write(line)

    def read_jsonl(self: Self, path: PathLike) -> list[dict[str, Any]]:
        return [orjson.loads(raw) for raw in SmartIo.read_bytes(path).splitlines() if raw.strip()]


IoTools = IoUtils()
