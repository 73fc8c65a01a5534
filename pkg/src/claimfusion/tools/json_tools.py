# SPDX-FileCopyrightText: Copyright 2023, Contributors to claimfusion
# SPDX-PackageHomePage: https://github.com/claimfusion/claimfusion
# SPDX-License-Identifier: Apache-2.0
"""
JSON encoding with orjson.

orjson writes NaN and ±Inf as `null`, which would silently corrupt metrics and vectors.
[`JsonEncoder`](claimfusion.tools.json_tools.JsonEncoder) first applies an explicit
[`NanInfHandling`](claimfusion.tools.json_tools.NanInfHandling) policy.
"""

from __future__ import annotations

import enum
import math
from collections.abc import Callable, Mapping, Sequence
from dataclasses import dataclass
from pathlib import PurePath
from typing import Any, Self

import numpy as np
import orjson

from claimfusion.core.exceptions import NonFiniteError

__all__ = ["NanInfHandling", "JsonEncoder", "JsonDecoder", "JsonUtils", "JsonTools"]


class NanInfHandling(enum.StrEnum):
    convert_to_str = enum.auto()
    convert_to_null = enum.auto()
    raise_error = enum.auto()


def _misc_default(obj: Any) -> Any:
    """
    Encodes the few extra types claimfusion writes; meant for `default=` in `orjson.dumps`.
    """
    if isinstance(obj, PurePath):
        return str(obj)
    if isinstance(obj, set | frozenset):
        return sorted(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    raise TypeError


@dataclass(frozen=True, slots=True, kw_only=True)
class JsonEncoder:
    bytes_options: int
    str_options: int
    prep: Callable[[Any], Any]

    def as_str(self: Self, data: Any) -> str:
        """Indented if so configured, with a trailing newline."""
        x = orjson.dumps(self.prep(data), default=_misc_default, option=self.str_options)
        return x.decode(encoding="utf-8") + "\n"

    def as_bytes(self: Self, data: Any) -> bytes:
        return orjson.dumps(self.prep(data), default=_misc_default, option=self.bytes_options)

    def as_line(self: Self, data: Any) -> bytes:
        """One compact JSON object followed by a newline, for JSON Lines files."""
        return self.as_bytes(data) + b"\n"


@dataclass(frozen=True, slots=True)
class JsonDecoder:
    def from_bytes(self: Self, data: bytes | bytearray | memoryview) -> Any:
        if not isinstance(data, bytes | bytearray | memoryview):
            raise TypeError(str(type(data)))
        return orjson.loads(bytes(data))

    def from_str(self: Self, data: str) -> Any:
        return orjson.loads(data)


@dataclass(slots=True, frozen=True)
class JsonUtils:
    def decoder(self: Self) -> JsonDecoder:
        return JsonDecoder()

    def encoder(
        self: Self,
        *,
        indent: bool = True,
        sort: bool = False,
        inf_handling: NanInfHandling = NanInfHandling.raise_error,
        nan_handling: NanInfHandling = NanInfHandling.raise_error,
    ) -> JsonEncoder:
        """
        Serializes with orjson.

        Args:
            indent: Indent by 2 spaces (only for `as_str`)
            sort: Sort keys
            inf_handling: How to handle Inf and -Inf, including inside numpy arrays
            nan_handling: How to handle NaN, including inside numpy arrays
        """
        bytes_option = orjson.OPT_NON_STR_KEYS
        if sort:
            bytes_option |= orjson.OPT_SORT_KEYS
        str_option = bytes_option | orjson.OPT_INDENT_2 if indent else bytes_option

        def prep_fn(d: Any) -> Any:
            return self.prepare(d, inf_handling=inf_handling, nan_handling=nan_handling)

        return JsonEncoder(bytes_options=bytes_option, str_options=str_option, prep=prep_fn)

    def prepare(
        self: Self,
        data: Any,
        *,
        inf_handling: NanInfHandling = NanInfHandling.raise_error,
        nan_handling: NanInfHandling = NanInfHandling.raise_error,
    ) -> Any:
        """
        Recursively converts numpy values to Python values and applies the NaN/Inf policy.
        Strings produced for non-finite values are `"nan"`, `"inf"` and `"-inf"`.

        Raises:
            NonFiniteError: If a non-finite value meets a `raise_error` policy
        """
        if isinstance(data, Mapping):
            return {
                k if isinstance(k, str) else str(k): self.prepare(v, inf_handling=inf_handling, nan_handling=nan_handling)
                for k, v in data.items()
            }
        if isinstance(data, enum.Enum):
            # orjson would write the member value
            return data.name.lower()
        if isinstance(data, np.ndarray):
            data = data.tolist()
        if isinstance(data, Sequence) and not isinstance(data, str | bytes):
            return [self.prepare(e, inf_handling=inf_handling, nan_handling=nan_handling) for e in data]
        if isinstance(data, np.floating):
            data = float(data)
        if isinstance(data, float) and not math.isfinite(data):
            policy = nan_handling if math.isnan(data) else inf_handling
            if policy is NanInfHandling.raise_error:
                msg = f"Value {data} cannot be written to JSON"
                raise NonFiniteError(msg, value=data, op="json")
            if policy is NanInfHandling.convert_to_null:
                return None
            return str(data)
        return data

    def finite_or_none(self: Self, value: Any) -> float | None:
        """Reads back a float written with a `convert_to_str` or `convert_to_null` policy."""
        if value is None:
            return None
        return float(value)


JsonTools = JsonUtils()
