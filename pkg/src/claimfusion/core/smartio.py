# SPDX-FileCopyrightText: Copyright 2023, Contributors to claimfusion
# SPDX-PackageHomePage: https://github.com/claimfusion/claimfusion
# SPDX-License-Identifier: Apache-2.0
"""
Compression-aware reading and writing of files.

The codec is chosen from the filename suffix (`.gz`, `.bz2`, `.xz`); anything else is stored as-is.
"""

from __future__ import annotations

import bz2
import gzip
import lzma
import os
from dataclasses import dataclass
from datetime import UTC, datetime
from pathlib import Path, PurePath
from typing import TYPE_CHECKING, Self, TypeVar

from claimfusion.core.exceptions import ConfigInvalidError, PathExistsError

if TYPE_CHECKING:
    from collections.abc import Callable, Iterable, Mapping

__all__ = ["PathLike", "Compression", "CompressionSet", "SmartIoUtil", "SmartIo"]

PathLike = str | PurePath
T = TypeVar("T")


def identity(x: T) -> T:
    return x


@dataclass(frozen=True, slots=True)
class Compression:
    name: str
    suffixes: list[str]
    compress: Callable[[bytes], bytes]
    decompress: Callable[[bytes], bytes]


@dataclass(frozen=True, slots=True)
class CompressionSet:
    mapping: dict[str, Compression]

    @classmethod
    def empty(cls: type[Self]) -> Self:
        return cls({"": Compression("", [], identity, identity)})

    def __add__(self: Self, fmt: Compression) -> CompressionSet:
        new = {fmt.name: fmt} | {s: fmt for s in fmt.suffixes}
        already = {v.name for k, v in self.mapping.items() if k in new}
        if already:
            msg = f"Keys from {fmt.name} already mapped to {already}"
            raise ConfigInvalidError(msg, key=fmt.name, value=sorted(already))
        return CompressionSet(self.mapping | new)

    def __getitem__(self: Self, t: Compression | str) -> Compression:
        """
        Returns a codec by name or suffix (e.g. "gzip" or ".gz").
        """
        if isinstance(t, Compression):
            return t
        return self.mapping[t]

    def guess(self: Self, path: PathLike) -> Compression:
        path = Path(path)
        try:
            return self[path.suffix]
        except KeyError:
            return self[""]


@dataclass(frozen=True, slots=True)
class SmartIoUtil:
    compressions: CompressionSet = (
        CompressionSet.empty()
        + Compression("gzip", [".gz", ".gzip"], lambda b: gzip.compress(b, mtime=0), gzip.decompress)
        + Compression("bzip2", [".bz2", ".bzip2"], bz2.compress, bz2.decompress)
        + Compression("xz", [".xz"], lzma.compress, lzma.decompress)
    )

    @property
    def mapping(self: Self) -> Mapping[str, Compression]:
        return self.compressions.mapping

    @property
    def all_suffixes(self: Self) -> Iterable[str]:
        for c in set(self.mapping.values()):
            yield from c.suffixes

    def strip_suffix(self: Self, path: PathLike) -> Path:
        """
        Drops a compression suffix, if any: `claims.jsonl.gz` → `claims.jsonl`.
        """
        path = Path(path)
        return path.with_suffix("") if path.suffix in self.mapping and path.suffix != "" else path

    def write(
        self: Self,
        data: bytes,
        path: PathLike,
        *,
        atomic: bool = True,
        mkdirs: bool = True,
        exist_ok: bool = True,
    ) -> Path:
        """
        Compresses by suffix and writes.
        With `atomic`, writes to a hidden sibling first and renames it over `path`,
        so readers never see a partial file.

        Raises:
            PathExistsError: If `path` exists and `exist_ok` is false, or it is not a regular file
        """
        path = Path(path)
        if path.exists() and (not path.is_file() or not exist_ok):
            msg = f"Refusing to overwrite {path}"
            raise PathExistsError(msg, filename=str(path))
        if mkdirs:
            path.parent.mkdir(parents=True, exist_ok=True)
        compressed = self.compressions.guess(path).compress(bytes(data))
        if not atomic:
            path.write_bytes(compressed)
            return path
        tmp = self.tmp_path(path)
        try:
            tmp.write_bytes(compressed)
            os.replace(tmp, path)
        finally:
            tmp.unlink(missing_ok=True)
        return path

    def write_text(self: Self, text: str, path: PathLike, **kwargs) -> Path:
        return self.write(text.encode(encoding="utf-8"), path, **kwargs)

    def read_bytes(self: Self, path: PathLike) -> bytes:
        """
        Reads, decompressing according to the filename suffix.
        """
        data = Path(path).read_bytes()
        return self.compressions.guess(path).decompress(data)

    def read_text(self: Self, path: PathLike, encoding: str = "utf-8") -> str:
        return self.read_bytes(path).decode(encoding=encoding)

    def tmp_path(self: Self, path: PathLike, extra: str = "tmp") -> Path:
        now = datetime.now(tz=UTC).isoformat(timespec="microseconds")
        now = now.replace(":", "").replace("-", "")
        path = Path(path)
        suffix = "".join(path.suffixes)
        return path.parent / f".part_{extra}.{now}{suffix}"


SmartIo = SmartIoUtil()
