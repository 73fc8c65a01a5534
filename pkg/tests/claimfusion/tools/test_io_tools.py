# SPDX-FileCopyrightText: Copyright 2023, Contributors to claimfusion
# SPDX-PackageHomePage: https://github.com/claimfusion/claimfusion
# SPDX-License-Identifier: Apache-2.0
from pathlib import Path
from typing import Self

import numpy as np
import orjson
import pytest

from claimfusion.core.enums import Arch, Feature
from claimfusion.core.exceptions import (
    CheckpointError,
    CheckpointMagicError,
    CheckpointShapeError,
    CheckpointTruncatedError,
    CheckpointVersionError,
    ConfigMismatchError,
    DataFormatError,
    VectorLengthError,
)
from claimfusion.core.models import Dims, ModelConfig, build_autofraudnet, build_model, build_unimodal, score
from claimfusion.core.records import ClaimRecord
from claimfusion.tools.feature_tools import FeatureTools
from claimfusion.tools.io_tools import CHECKPOINT_MAGIC, IoTools


def _claim_dict(rec: ClaimRecord) -> dict:
    return orjson.loads(orjson.dumps(IoTools.claim_to_dict(rec)))


class TestClaims:
    def test_save_load(self: Self, tmp_path: Path, tiny_records: list[ClaimRecord]) -> None:
        path = IoTools.save_claims(tiny_records[:5], tmp_path / "claims.jsonl.gz")
        loaded = IoTools.load_claims(path)
        assert [r.claim_id for r in loaded] == [r.claim_id for r in tiny_records[:5]]
        for a, b in zip(loaded, tiny_records[:5], strict=True):
            assert a.label == b.label
            np.testing.assert_array_equal(a.images[-1].ud, b.images[-1].ud)
            np.testing.assert_array_equal(a.text_emb, b.text_emb)
            assert a.images[0].absent_parts == b.images[0].absent_parts

    def test_bytes_deterministic(self: Self, tmp_path: Path, tiny_records: list[ClaimRecord]) -> None:
        a = IoTools.save_claims(tiny_records[:3], tmp_path / "a.jsonl")
        b = IoTools.save_claims(tiny_records[:3], tmp_path / "b.jsonl")
        assert a.read_bytes() == b.read_bytes()

    def test_short_vector(self: Self, tiny_records: list[ClaimRecord]) -> None:
        d = _claim_dict(tiny_records[0])
        d["images"][0]["cds"] = d["images"][0]["cds"][:719]
        with pytest.raises(VectorLengthError) as e:
            IoTools.claim_from_dict(d, 3)
        assert "expected 720" in e.value.message
        assert e.value.line == 3
        assert e.value.field == "images.0.cds"

    def test_bad_fields(self: Self, tiny_records: list[ClaimRecord]) -> None:
        good = _claim_dict(tiny_records[0])
        bad = [
            good | {"label": 2},
            good | {"label": True},
            good | {"claim_id": ""},
            good | {"images": []},
            {k: v for k, v in good.items() if k != "struct_onehot"},
            good | {"text_emb": ["x"] * 768},
            good | {"struct_onehot": [0.5] * 87},
        ]
        for d in bad:
            with pytest.raises(DataFormatError):
                IoTools.claim_from_dict(d, 1)
        with pytest.raises(DataFormatError):
            IoTools.claim_from_dict([1, 2], 1)

    def test_bad_image_scores(self: Self, tiny_records: list[ClaimRecord]) -> None:
        d = _claim_dict(tiny_records[0])
        d["images"][0]["part_vis"] = [1.5] * 21
        with pytest.raises(DataFormatError) as e:
            IoTools.claim_from_dict(d, 4)
        assert e.value.field == "images.0"

    def test_optional_fields(self: Self, tiny_records: list[ClaimRecord]) -> None:
        d = _claim_dict(tiny_records[0])
        del d["text_emb"]
        for img in d["images"]:
            img.pop("absent_parts", None)
        rec = IoTools.claim_from_dict(d, 1)
        assert not rec.has_text
        assert rec.images[0].absent_parts == frozenset()

    def test_file_errors(self: Self, tmp_path: Path, tiny_records: list[ClaimRecord]) -> None:
        line = orjson.dumps(IoTools.claim_to_dict(tiny_records[0]))
        path = tmp_path / "claims.jsonl"
        path.write_bytes(line + b"\n\n{not json\n")
        with pytest.raises(DataFormatError) as e:
            IoTools.load_claims(path)
        assert e.value.line == 3
        path.write_bytes(line + b"\n" + line + b"\n")
        with pytest.raises(DataFormatError):
            IoTools.load_claims(path)
        with pytest.raises(FileNotFoundError):
            IoTools.load_claims(tmp_path / "missing.jsonl")

    def test_missing_text_warns(self: Self, tmp_path: Path, tiny_records: list[ClaimRecord], caplog) -> None:
        d = _claim_dict(tiny_records[0]) | {"text_emb": None}
        path = tmp_path / "claims.jsonl"
        path.write_bytes(orjson.dumps(d) + b"\n")
        with caplog.at_level("WARNING", logger="claimfusion"):
            records = IoTools.load_claims(path)
        assert len(records) == 1
        assert "1 of 1 claims" in caplog.text
        kept, dropped = FeatureTools.filter_available(records, [Feature.TEXT])
        assert (len(kept), len(dropped)) == (0, 1)


class TestCheckpoint:
    def test_round_trip(self: Self, tmp_path: Path, tiny_dims: Dims, tiny_records: list[ClaimRecord]) -> None:
        model = build_autofraudnet(heads=True, dims=tiny_dims, seed=3)
        path = IoTools.save_checkpoint(model, tmp_path / "model.afn", {"threshold": 0.25, "seed": 3})
        ckpt = IoTools.read_checkpoint(path, expected=model.config)
        assert ckpt.metadata == {"threshold": 0.25, "seed": 3}
        assert ckpt.model.config.to_dict() == model.config.to_dict()
        assert list(ckpt.model.params) == list(model.params)
        batch = FeatureTools.batch(tiny_records[:4])
        np.testing.assert_array_equal(score(ckpt.model, batch), score(model, batch))

    def test_float32(self: Self, tiny_dims: Dims) -> None:
        model = build_model(build_unimodal("cds", dims=tiny_dims).config, dtype=np.float32)
        loaded = IoTools.checkpoint_from_bytes(IoTools.checkpoint_bytes(model)).model
        assert loaded.params.dtype == np.float32
        for name, arr in model.params.items():
            np.testing.assert_array_equal(loaded.params[name], arr)

    def test_magic(self: Self, tiny_dims: Dims) -> None:
        data = IoTools.checkpoint_bytes(build_unimodal("spud", dims=tiny_dims))
        assert data.startswith(CHECKPOINT_MAGIC)
        with pytest.raises(CheckpointMagicError):
            IoTools.checkpoint_from_bytes(b"PK\x03\x04" + data[4:])
        with pytest.raises(CheckpointTruncatedError):
            IoTools.checkpoint_from_bytes(data[:5])

    def test_truncated(self: Self, tiny_dims: Dims) -> None:
        data = IoTools.checkpoint_bytes(build_unimodal("spud", dims=tiny_dims))
        for n in (12, 40, len(data) - 1):
            with pytest.raises(CheckpointTruncatedError):
                IoTools.checkpoint_from_bytes(data[:n])

    def _with_manifest(self: Self, data: bytes, edit) -> bytes:
        n = int.from_bytes(data[8:16], "little")
        manifest = orjson.loads(data[16 : 16 + n])
        edit(manifest)
        head = orjson.dumps(manifest)
        return CHECKPOINT_MAGIC + len(head).to_bytes(8, "little") + head + data[16 + n :]

    def test_version(self: Self, tiny_dims: Dims) -> None:
        data = IoTools.checkpoint_bytes(build_unimodal("spud", dims=tiny_dims))
        bumped = self._with_manifest(data, lambda m: m.update(format_version=2))
        with pytest.raises(CheckpointVersionError):
            IoTools.checkpoint_from_bytes(bumped)

    def test_shape(self: Self, tiny_dims: Dims) -> None:
        data = IoTools.checkpoint_bytes(build_unimodal("spud", dims=tiny_dims))

        def _widen(m: dict) -> None:
            m["config"]["mlp_hidden"] = [9]

        with pytest.raises(CheckpointShapeError):
            IoTools.checkpoint_from_bytes(self._with_manifest(data, _widen))

    def test_bad_config(self: Self, tiny_dims: Dims) -> None:
        data = IoTools.checkpoint_bytes(build_unimodal("spud", dims=tiny_dims))
        with pytest.raises(CheckpointError):
            IoTools.checkpoint_from_bytes(self._with_manifest(data, lambda m: m["config"].update(arch="rnn")))

    @pytest.mark.parametrize("key", ["name", "shape", "dtype", "offset"])
    def test_bad_array_entry(self: Self, tiny_dims: Dims, key: str) -> None:
        data = IoTools.checkpoint_bytes(build_unimodal("spud", dims=tiny_dims))
        dropped = self._with_manifest(data, lambda m: m["arrays"][0].pop(key))
        with pytest.raises(CheckpointError):
            IoTools.checkpoint_from_bytes(dropped)
        not_an_object = self._with_manifest(data, lambda m: m["arrays"].__setitem__(0, 7))
        with pytest.raises(CheckpointError):
            IoTools.checkpoint_from_bytes(not_an_object)

    def test_mismatch(self: Self, tiny_dims: Dims) -> None:
        model = build_unimodal("spud", dims=tiny_dims)
        other = ModelConfig(arch=Arch.UNIMODAL, features=(Feature.STRUCT,), mlp_hidden=(8,))
        with pytest.raises(ConfigMismatchError):
            IoTools.checkpoint_from_bytes(IoTools.checkpoint_bytes(model), expected=other)


class TestJsonl:
    def test_append(self: Self, tmp_path: Path) -> None:
        path = tmp_path / "runs" / "history.jsonl"
        IoTools.append_jsonl(path, {"epoch": 1, "value": 0.5})
        IoTools.append_jsonl(path, {"epoch": 2, "value": float("nan")})
        rows = IoTools.read_jsonl(path)
        assert rows == [{"epoch": 1, "value": 0.5}, {"epoch": 2, "value": "nan"}]


if __name__ == "__main__":
    pytest.main()
