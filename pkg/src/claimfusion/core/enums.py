# SPDX-FileCopyrightText: Copyright 2023, Contributors to claimfusion
# SPDX-PackageHomePage: https://github.com/claimfusion/claimfusion
# SPDX-License-Identifier: Apache-2.0
"""
Named choices: features, modalities, fusion strategies and model architectures.
"""

import enum
import logging
from typing import Self

from claimfusion.core.exceptions import ValueIllegalError

__all__ = ["DisjointEnum", "CleverEnum", "Modality", "Feature", "FusionKind", "Arch"]

logger = logging.getLogger("claimfusion")


class DisjointEnum(enum.Enum):
    """
    An enum that does not have combinations.
    """

    @classmethod
    def _fix_lookup(cls: type[Self], s: str) -> str:
        return s

    @classmethod
    def or_none(cls: type[Self], s: str | Self) -> Self | None:
        """
        Returns a choice by name (or returns `s` itself).
        Returns `None` if the choice is not found.
        """
        try:
            return cls.of(s)
        except (KeyError, ValueIllegalError):
            return None

    @classmethod
    def of(cls: type[Self], s: str | Self) -> Self:
        """
        Returns a choice by name (or returns `s` itself).
        """
        if isinstance(s, cls):
            return s
        return cls[cls._fix_lookup(s)]


class CleverEnum(DisjointEnum):
    """
    An enum with an :meth:`of` that ignores case and treats `" "` and `"-"` as `"_"`.
    Unknown names raise a [`ValueIllegalError`](claimfusion.core.exceptions.ValueIllegalError)
    that lists the allowed names.

    Example:

        FusionKind.of("block-tucker")  # FusionKind.BLOCK_TUCKER
    """

    @classmethod
    def of(cls: type[Self], s: str | Self) -> Self:
        try:
            return super().of(s)
        except KeyError:
            return cls._if_not_found(s)

    @classmethod
    def _if_not_found(cls: type[Self], s: str | Self) -> Self:
        msg = f"No {cls.__name__} named '{s}'; choose from {cls.names()}"
        raise ValueIllegalError(msg, value=s, values=cls.names()) from None

    @classmethod
    def _fix_lookup(cls: type[Self], s: str) -> str:
        return s.strip().replace(" ", "_").replace("-", "_").upper()

    @classmethod
    def names(cls: type[Self]) -> list[str]:
        return [m.key for m in cls]

    @property
    def key(self: Self) -> str:
        """The lowercase name used in config files and result tables."""
        return self.name.lower()


@enum.unique
class Modality(CleverEnum):
    VISUAL = enum.auto()
    TABULAR = enum.auto()
    TEXTUAL = enum.auto()


@enum.unique
class Feature(CleverEnum):
    """
    A claim-level feature vector.
    """

    CDS = enum.auto()
    UD = enum.auto()
    SPUD = enum.auto()
    STRUCT = enum.auto()
    TEXT = enum.auto()

    @property
    def dim(self: Self) -> int:
        return _FEATURE_DIMS[self]

    @property
    def modality(self: Self) -> Modality:
        if self in (Feature.CDS, Feature.UD):
            return Modality.VISUAL
        if self is Feature.TEXT:
            return Modality.TEXTUAL
        return Modality.TABULAR

    @property
    def label(self: Self) -> str:
        return "Struct" if self is Feature.STRUCT else "Text" if self is Feature.TEXT else self.name


_FEATURE_DIMS = {Feature.CDS: 50, Feature.UD: 50, Feature.SPUD: 126, Feature.STRUCT: 87, Feature.TEXT: 768}


@enum.unique
class FusionKind(CleverEnum):
    """
    The fusion strategies, in the order they are usually tabulated.
    """

    CONCAT_MLP = enum.auto()
    LINEAR_SUM = enum.auto()
    BLOCK = enum.auto()
    BLOCK_TUCKER = enum.auto()
    MLB = enum.auto()
    MFH = enum.auto()
    MFB = enum.auto()

    @property
    def label(self: Self) -> str:
        return _FUSION_LABELS[self]

    @property
    def is_bilinear(self: Self) -> bool:
        """True for strategies whose output vanishes when either input is zero."""
        return self not in (FusionKind.CONCAT_MLP, FusionKind.LINEAR_SUM)

    @property
    def uses_chunks(self: Self) -> bool:
        return self in (FusionKind.BLOCK, FusionKind.BLOCK_TUCKER)


_FUSION_LABELS = {
    FusionKind.CONCAT_MLP: "Concat MLP",
    FusionKind.LINEAR_SUM: "Linear Sum",
    FusionKind.BLOCK: "BLOCK",
    FusionKind.BLOCK_TUCKER: "BLOCK Tucker",
    FusionKind.MLB: "MLB",
    FusionKind.MFH: "MFH",
    FusionKind.MFB: "MFB",
}


@enum.unique
class Arch(CleverEnum):
    """
    A full classifier architecture.
    """

    UNIMODAL = enum.auto()
    BIMODAL = enum.auto()
    CONCAT_ALL = enum.auto()
    CONCAT_WO_TEXT = enum.auto()
    SLOW_FUSION = enum.auto()
    AUTOFRAUDNET = enum.auto()
    AUTOFRAUDNET_HEADS = enum.auto()

    @property
    def has_heads(self: Self) -> bool:
        return self is Arch.AUTOFRAUDNET_HEADS

    @property
    def is_slow_fusion(self: Self) -> bool:
        return self in (Arch.SLOW_FUSION, Arch.AUTOFRAUDNET, Arch.AUTOFRAUDNET_HEADS)
