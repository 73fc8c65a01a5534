# SPDX-FileCopyrightText: Copyright 2023, Contributors to claimfusion
# SPDX-PackageHomePage: https://github.com/claimfusion/claimfusion
# SPDX-License-Identifier: Apache-2.0
"""
A nested dict with dotted-key access, used for TOML config files.
"""

from __future__ import annotations

from collections import defaultdict
from collections.abc import Callable, Iterable, Mapping, MutableMapping
from typing import Any, Self, TypeVar

import orjson
import tomlkit
from tomlkit.exceptions import ParseError

from claimfusion.core.exceptions import ConfigInvalidError

__all__ = ["NestedDotDict", "TomlLeaf", "TomlBranch"]

_Single = None | str | int | float | bool
TomlLeaf = list[_Single] | _Single
TomlBranch = dict[str, TomlLeaf | dict]
T = TypeVar("T")


class _Utils:
    @classmethod
    def dots_to_dict(cls: type[Self], items: Mapping[str, TomlLeaf]) -> dict[str, TomlLeaf | TomlBranch]:
        """
        Makes sub-dicts from keys delimited by `.`.

        Example:

            _Utils.dots_to_dict({"train.lr": 0.01}) == {"train": {"lr": 0.01}}
        """
        dct = {}
        cls._un_leaf(dct, items)
        return dct

    @classmethod
    def _un_leaf(cls: type[Self], to: MutableMapping[str, Any], items: Mapping[str, Any]) -> None:
        for k, v in items.items():
            if "." not in k:
                to[k] = v
            else:
                k0, k1 = k.split(".", 1)
                if k0 not in to:
                    to[k0] = {}
                cls._un_leaf(to[k0], {k1: v})

    @classmethod
    def check(cls: type[Self], dct: Any) -> Any:
        if isinstance(dct, Mapping):
            bad = [k for k in dct if not isinstance(k, str) or "." in k]
            if len(bad) > 0:
                msg = f"Key(s) are not strings or contain '.': {bad}"
                raise ConfigInvalidError(msg, key=str(bad[0]))
            return {k: cls.check(v) for k, v in dct.items()}
        return dct


class NestedDotDict(dict[str, TomlLeaf | TomlBranch]):
    """
    A thin wrapper around a nested dict.

    Keys must be strings without a dot, which is reserved for traversal:
    `d["train.lr"]` is `d["train"]["lr"]`.
    """

    def __init__(self: Self, x: Mapping[str, Any] | None = None) -> None:
        if x is None:
            x = {}
        if not isinstance(x, Mapping):
            msg = f"Not a mapping; actually {type(x)}"
            raise ConfigInvalidError(msg, value=x)
        super().__init__(_Utils.check(x))

    @classmethod
    def from_leaves(cls: type[Self], x: Mapping[str, TomlLeaf]) -> Self:
        return cls(_Utils.dots_to_dict(x))

    @classmethod
    def from_toml(cls: type[Self], data: str) -> Self:
        """
        Raises:
            ConfigInvalidError: If the text is not valid TOML
        """
        try:
            doc = tomlkit.loads(data)
        except ParseError as e:
            msg = f"Invalid TOML: {e}"
            raise ConfigInvalidError(msg, line=e.line) from e
        return cls(doc.unwrap())

    def to_toml(self: Self) -> str:
        # TOML has no null
        return tomlkit.dumps(self._plain(drop_none=True))

    def to_json(self: Self) -> str:
        return orjson.dumps(self._plain(), option=orjson.OPT_INDENT_2).decode(encoding="utf-8")

    def _plain(self: Self, *, drop_none: bool = False) -> dict[str, Any]:
        return {
            k: NestedDotDict(v)._plain(drop_none=drop_none) if isinstance(v, dict) else v
            for k, v in self.items()
            if v is not None or not drop_none
        }

    def leaves(self: Self) -> dict[str, TomlLeaf]:
        """
        Returns `dotted-key -> value` for every leaf.
        """
        dct = {}
        for key, value in self.items():
            if isinstance(value, dict):
                dct.update({key + "." + k: v for k, v in NestedDotDict(value).leaves().items()})
            else:
                dct[key] = value
        return dct

    def branches(self: Self) -> dict[str, TomlBranch]:
        """
        Maps each lowest-level branch to a dict of its leaves; root leaves go under `""`.
        """
        dicts = defaultdict(dict)
        for k, v in self.leaves().items():
            k0, _, k1 = str(k).rpartition(".")
            dicts[k0][k1] = v
        return dict(dicts)

    def walk(self: Self) -> Iterable[TomlLeaf]:
        for value in self.values():
            if isinstance(value, dict):
                yield from NestedDotDict(value).walk()
            else:
                yield value

    def transform_leaves(self: Self, fn: Callable[[str, TomlLeaf], TomlLeaf]) -> Self:
        return self.__class__.from_leaves({k: fn(k, v) for k, v in self.leaves().items()})

    def merged(self: Self, other: Mapping[str, Any]) -> Self:
        """
        Leaves of `other` override leaves of this tree.
        """
        return self.__class__.from_leaves(self.leaves() | NestedDotDict(other).leaves())

    def with_leaf(self: Self, key: str, value: TomlLeaf) -> Self:
        return self.merged(NestedDotDict.from_leaves({key: value}))

    def sub(self: Self, items: str) -> Self:
        """
        Returns the tree under `items`, or an empty tree if it does not exist.
        """
        z = self.get(items, {})
        if not isinstance(z, dict):
            msg = f"{items} is a value, not a section"
            raise ConfigInvalidError(msg, key=items)
        return self.__class__(z)

    def get_as(self: Self, items: str, as_type: type[T] | tuple[type, ...], default: T | None = None) -> T | None:
        """
        Gets an optional value, checking its type.

        Raises:
            ConfigInvalidError: If the value is present but not an instance of `as_type`
        """
        z = self.get(items, default)
        if z is None:
            return None
        return self._check_type(items, z, as_type)

    def req_as(self: Self, items: str, as_type: type[T] | tuple[type, ...]) -> T:
        """
        Gets a required value, checking its type.

        Raises:
            ConfigInvalidError: If the key is missing or of the wrong type
        """
        try:
            z = self[items]
        except KeyError:
            msg = f"Missing required key {items}"
            raise ConfigInvalidError(msg, key=items) from None
        return self._check_type(items, z, as_type)

    def get_list_as(self: Self, items: str, as_type: type[T], default: list[T] | None = None) -> list[T]:
        """
        Gets list values from an optional key.
        """
        x = self.get(items)
        if x is None:
            return [] if default is None else default
        if not isinstance(x, list):
            msg = f"Value {x!r} for {items} is not a list"
            raise ConfigInvalidError(msg, key=items, value=x)
        return [self._check_type(items, y, as_type) for y in x]

    def _check_type(self: Self, items: str, z: Any, as_type: type | tuple[type, ...]) -> Any:
        # bool is an int, but never a valid number in a config
        if isinstance(z, bool) and as_type in (int, float, (int, float)):
            ok = False
        elif as_type is float:
            ok = isinstance(z, int | float)
            z = float(z) if ok else z
        else:
            ok = isinstance(z, as_type)
        if not ok:
            msg = f"Value {z!r} for {items} is a {type(z).__name__}, not {as_type}"
            raise ConfigInvalidError(msg, key=items, value=z)
        return z

    def get(self: Self, items: str, default: Any = None) -> Any:
        try:
            return self[items]
        except KeyError:
            return default

    def __contains__(self: Self, items: object) -> bool:
        if not isinstance(items, str):
            return False
        try:
            self[items]
        except KeyError:
            return False
        return True

    def __getitem__(self: Self, items: str) -> TomlLeaf | dict:
        """
        Gets a value from a required key, operating on `.`-joined strings.

        Example:

            d = NestedDotDict(dict(a=dict(b=1)))
            assert d["a.b"] == 1
        """
        if "." in items:
            i0, _, i_ = items.partition(".")
            z = self[i0]
            if not isinstance(z, dict):
                msg = f"No key {items} (ends at {i0})"
                raise KeyError(msg)
            return NestedDotDict(z)[i_]
        return super().__getitem__(items)

    @classmethod
    def parse_value(cls: type[Self], text: str) -> TomlLeaf:
        """
        Parses the right-hand side of a `key=value` override as a TOML value.
        Bare words that are not valid TOML are taken as strings.

        Example:

            NestedDotDict.parse_value("0.01") == 0.01
            NestedDotDict.parse_value("[1, 2]") == [1, 2]
            NestedDotDict.parse_value("block_tucker") == "block_tucker"
        """
        try:
            return tomlkit.loads(f"v = {text}").unwrap()["v"]
        except ParseError:
            return text

    def with_assignments(self: Self, assignments: Iterable[str]) -> Self:
        """
        Applies `key.sub=value` overrides in order.

        Raises:
            ConfigInvalidError: If an assignment has no `=`
        """
        d = self
        for a in assignments:
            key, eq, value = a.partition("=")
            if eq == "" or key.strip() == "":
                msg = f"Override {a!r} is not of the form key.sub=value"
                raise ConfigInvalidError(msg, key=a)
            d = d.with_leaf(key.strip(), self.parse_value(value.strip()))
        return d


