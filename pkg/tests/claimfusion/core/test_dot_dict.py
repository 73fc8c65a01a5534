# SPDX-FileCopyrightText: Copyright 2023, Contributors to claimfusion
# SPDX-PackageHomePage: https://github.com/claimfusion/claimfusion
# SPDX-License-Identifier: Apache-2.0
from typing import Self

import pytest

from claimfusion.core.dot_dict import NestedDotDict
from claimfusion.core.exceptions import ConfigInvalidError


class TestDotDict:
    def test_keys(self: Self) -> None:
        t = NestedDotDict({"model": {"arch": "bimodal"}, "train": {"lr": 0.001, "seeds": [0, 1]}})
        assert list(t.keys()) == ["model", "train"]

    def test_bad(self: Self) -> None:
        with pytest.raises(ValueError):
            NestedDotDict({"train.lr": 0.01})
        with pytest.raises(ConfigInvalidError):
            NestedDotDict({"train": {"adam.lr": 0.01}})
        with pytest.raises(ConfigInvalidError):
            # noinspection PyTypeChecker
            NestedDotDict({1: 2})
        with pytest.raises(ConfigInvalidError):
            # noinspection PyTypeChecker
            NestedDotDict([("train", 1)])

    def test_get(self: Self) -> None:
        t = NestedDotDict({"model": {"fusion": {"kind": "mfh"}}})
        assert t["model.fusion"] == {"kind": "mfh"}
        assert t["model.fusion.kind"] == "mfh"
        assert t.get("model.fusion.rank") is None
        assert t.get("model.fusion.kind.x") is None
        assert t.get("train", default=3) == 3
        assert "model.fusion.kind" in t
        assert "model.second" not in t
        assert 5 not in t
        with pytest.raises(LookupError):
            # noinspection PyStatementEffect
            t["model.x"]

    def test_get_as(self: Self) -> None:
        t = NestedDotDict({"lr": 0.01, "epochs": 50, "flag": True, "name": "full", "batch": 64})
        assert t.get_as("name", str) == "full"
        assert t.get_as("batch", float) == 64.0
        assert isinstance(t.get_as("batch", float), float)
        assert t.get_as("missing", int) is None
        with pytest.raises(ConfigInvalidError):
            t.get_as("lr", str)
        with pytest.raises(ConfigInvalidError):
            t.get_as("flag", int)
        assert t.req_as("epochs", int) == 50
        with pytest.raises(ConfigInvalidError):
            t.req_as("patience", int)

    def test_get_list_as(self: Self) -> None:
        t = NestedDotDict({"seeds": [0, 1, 2], "name": "x"})
        assert t.get_list_as("seeds", int) == [0, 1, 2]
        assert t.get_list_as("hidden", int) == []
        with pytest.raises(ConfigInvalidError):
            t.get_list_as("seeds", str)
        with pytest.raises(ConfigInvalidError):
            t.get_list_as("name", str)

    def test_leaves(self: Self) -> None:
        t = NestedDotDict({"a": {"b": 1}, "b": 2, "c": {"a": {"a": 3}}})
        assert t.leaves() == {"a.b": 1, "b": 2, "c.a.a": 3}
        assert t.branches() == {"a": {"b": 1}, "": {"b": 2}, "c.a": {"a": 3}}
        assert sorted(t.walk()) == [1, 2, 3]
        assert NestedDotDict.from_leaves(t.leaves()) == t

    def test_merged(self: Self) -> None:
        t = NestedDotDict({"train": {"lr": 0.001, "patience": 3}})
        m = t.merged({"train": {"lr": 0.01}, "synth": {"seed": 2}})
        assert m["train.lr"] == 0.01
        assert m["train.patience"] == 3
        assert m["synth.seed"] == 2
        assert t["train.lr"] == 0.001
        assert t.with_leaf("model.arch", "bimodal")["model.arch"] == "bimodal"

    def test_sub(self: Self) -> None:
        t = NestedDotDict({"train": {"lr": 0.001}})
        assert t.sub("train") == {"lr": 0.001}
        assert t.sub("synth") == {}
        with pytest.raises(ConfigInvalidError):
            t.sub("train.lr")

    def test_parse_value(self: Self) -> None:
        assert NestedDotDict.parse_value("0.01") == 0.01
        assert NestedDotDict.parse_value("[1, 2]") == [1, 2]
        assert NestedDotDict.parse_value("true") is True
        assert NestedDotDict.parse_value('"mfh"') == "mfh"
        assert NestedDotDict.parse_value("block_tucker") == "block_tucker"

    def test_assignments(self: Self) -> None:
        t = NestedDotDict({"train": {"lr": 0.001}})
        t = t.with_assignments(["train.lr=0.01", "model.fusion.kind = mfh", "train.seeds=[0, 1]"])
        assert t["train.lr"] == 0.01
        assert t["model.fusion.kind"] == "mfh"
        assert t["train.seeds"] == [0, 1]
        with pytest.raises(ConfigInvalidError):
            t.with_assignments(["train.lr"])
        with pytest.raises(ConfigInvalidError):
            t.with_assignments(["=3"])

    def test_toml(self: Self) -> None:
        text = '[train]\nlr = 0.01\nseeds = [0, 1]\n\n[model]\narch = "bimodal"\n'
        t = NestedDotDict.from_toml(text)
        assert t["train.seeds"] == [0, 1]
        assert NestedDotDict.from_toml(t.to_toml()) == t
        assert '"arch": "bimodal"' in t.to_json()
        with pytest.raises(ConfigInvalidError):
            NestedDotDict.from_toml("[train\nlr = ")

    def test_toml_drops_none(self: Self) -> None:
        t = NestedDotDict({"data": None, "train": {"lr": 0.1}})
        assert "data" not in NestedDotDict.from_toml(t.to_toml())


if __name__ == "__main__":
    pytest.main()
