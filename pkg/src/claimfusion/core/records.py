# SPDX-FileCopyrightText: Copyright 2023, Contributors to claimfusion
# SPDX-PackageHomePage: https://github.com/claimfusion/claimfusion
# SPDX-License-Identifier: Apache-2.0
"""
Claim records and the claim-level feature vectors built from them.
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass
from typing import Self

import numpy as np
from numpy.typing import ArrayLike, NDArray

from claimfusion.core.enums import Feature
from claimfusion.core.exceptions import DataFormatError, ValueOutOfRangeError, VectorLengthError

__all__ = [
    "EMBEDDING_DIM",
    "N_PARTS",
    "STRUCT_DIM",
    "TEXT_DIM",
    "SPUD_DIM",
    "ImageRecord",
    "ClaimRecord",
    "ClaimFeatureSet",
    "ClaimBatch",
]

EMBEDDING_DIM = 720
N_PARTS = 21
STRUCT_DIM = 87
TEXT_DIM = 768
SPUD_DIM = 2 * 3 * N_PARTS


def _vector(value: ArrayLike, length: int, field_name: str) -> NDArray[np.float64]:
    arr = np.array(value, dtype=np.float64, copy=True)
    if arr.ndim != 1 or arr.shape[0] != length:
        actual = arr.shape[0] if arr.ndim == 1 else arr.size
        msg = f"{field_name}: expected {length}, got {actual}"
        raise VectorLengthError(msg, field=field_name, expected=length, actual=actual)
    if not np.all(np.isfinite(arr)):
        msg = f"{field_name}: non-finite value"
        raise DataFormatError(msg, field=field_name)
    arr.flags.writeable = False
    return arr


def _unit_interval(arr: NDArray, field_name: str) -> None:
    if np.any((arr < 0) | (arr > 1)):
        msg = f"{field_name}: scores must be in [0, 1]"
        raise ValueOutOfRangeError(msg, value=field_name, minimum=0, maximum=1)


@dataclass(slots=True, frozen=True)
class ImageRecord:
    """
    Per-image inputs.

    Attributes:
        cds: Damage-type embedding (720)
        ud: Damaged/undamaged embedding (720)
        part_vis: Visibility probability per part (21)
        ud_score: Damaged probability per part (21)
        absent_parts: Parts the image gives no scores for;
                      they count as invisible and undamaged
    """

    cds: NDArray[np.float64]
    ud: NDArray[np.float64]
    part_vis: NDArray[np.float64]
    ud_score: NDArray[np.float64]
    absent_parts: frozenset[int] = frozenset()

    def __post_init__(self: Self) -> None:
        object.__setattr__(self, "cds", _vector(self.cds, EMBEDDING_DIM, "cds"))
        object.__setattr__(self, "ud", _vector(self.ud, EMBEDDING_DIM, "ud"))
        object.__setattr__(self, "part_vis", _vector(self.part_vis, N_PARTS, "part_vis"))
        object.__setattr__(self, "ud_score", _vector(self.ud_score, N_PARTS, "ud_score"))
        object.__setattr__(self, "absent_parts", frozenset(int(i) for i in self.absent_parts))
        _unit_interval(self.part_vis, "part_vis")
        _unit_interval(self.ud_score, "ud_score")
        bad = [i for i in self.absent_parts if not 0 <= i < N_PARTS]
        if bad:
            msg = f"absent_parts: indices {bad} outside [0, {N_PARTS})"
            raise ValueOutOfRangeError(msg, value=bad, minimum=0, maximum=N_PARTS - 1)


@dataclass(slots=True, frozen=True)
class ClaimRecord:
    """
    One claim.

    Attributes:
        claim_id: Identifier
        label: 1 if fraudulent
        images: At least one image
        struct_onehot: One-hot structured metadata (87 entries in {0, 1})
        text_emb: Text embedding (768), or `None` if the claim has no text
    """

    claim_id: str
    label: int
    images: tuple[ImageRecord, ...]
    struct_onehot: NDArray[np.float64]
    text_emb: NDArray[np.float64] | None = None

    def __post_init__(self: Self) -> None:
        object.__setattr__(self, "images", tuple(self.images))
        if len(self.images) == 0:
            msg = f"Claim {self.claim_id} has no images"
            raise DataFormatError(msg, field="images")
        if self.label not in (0, 1):
            msg = f"Claim {self.claim_id}: label must be 0 or 1, not {self.label}"
            raise DataFormatError(msg, field="label")
        object.__setattr__(self, "label", int(self.label))
        struct = _vector(self.struct_onehot, STRUCT_DIM, "struct_onehot")
        if not np.all((struct == 0) | (struct == 1)):
            msg = f"Claim {self.claim_id}: struct_onehot entries must be 0 or 1"
            raise DataFormatError(msg, field="struct_onehot")
        object.__setattr__(self, "struct_onehot", struct)
        if self.text_emb is not None:
            object.__setattr__(self, "text_emb", _vector(self.text_emb, TEXT_DIM, "text_emb"))

    @property
    def n_images(self: Self) -> int:
        return len(self.images)

    @property
    def has_text(self: Self) -> bool:
        return self.text_emb is not None

    def missing(self: Self, required: Sequence[Feature]) -> list[Feature]:
        """Required features this claim cannot supply (only text can be missing)."""
        return [f for f in required if f is Feature.TEXT and not self.has_text]


@dataclass(slots=True, frozen=True)
class ClaimFeatureSet:
    """
    Claim-level features: 50, 50, 126, 87 and (optionally) 768 wide.
    """

    a_cds: NDArray[np.float64]
    a_ud: NDArray[np.float64]
    a_spud: NDArray[np.float64]
    a_struct: NDArray[np.float64]
    a_text: NDArray[np.float64] | None = None

    def __getitem__(self: Self, feature: Feature | str) -> NDArray[np.float64] | None:
        return getattr(self, f"a_{Feature.of(feature).key}")

    def replace_text(self: Self, text: NDArray[np.float64] | None) -> ClaimFeatureSet:
        return ClaimFeatureSet(self.a_cds, self.a_ud, self.a_spud, self.a_struct, text)


@dataclass(slots=True, frozen=True)
class ClaimBatch:
    """
    Claims stacked for batched forward passes.
    Image rows of claim `i` are `offsets[i]:offsets[i+1]` in `cds` and `ud`.

    Attributes:
        claim_ids: One per claim
        labels: `(B,)` ints
        cds: `(N, 720)` image embeddings
        ud: `(N, 720)` image embeddings
        offsets: `(B+1,)` row offsets into the image arrays
        spud: `(B, 126)`
        struct: `(B, 87)`
        text: `(B, 768)`; rows of claims without text are zero
        has_text: `(B,)` flags
    """

    claim_ids: tuple[str, ...]
    labels: NDArray[np.int64]
    cds: NDArray[np.float64]
    ud: NDArray[np.float64]
    offsets: NDArray[np.int64]
    spud: NDArray[np.float64]
    struct: NDArray[np.float64]
    text: NDArray[np.float64]
    has_text: NDArray[np.bool_]

    def __len__(self: Self) -> int:
        return len(self.claim_ids)

    @property
    def segments(self: Self) -> NDArray[np.int64]:
        """Claim index of every image row."""
        return np.repeat(np.arange(len(self)), np.diff(self.offsets))

    def take(self: Self, indices: ArrayLike) -> ClaimBatch:
        """Selects claims (repeats allowed) in the given order."""
        idx = np.asarray(indices, dtype=np.int64)
        counts = np.diff(self.offsets)[idx]
        rows = np.concatenate([np.arange(self.offsets[i], self.offsets[i + 1]) for i in idx]) if len(idx) else []
        rows = np.asarray(rows, dtype=np.int64)
        return ClaimBatch(
            claim_ids=tuple(self.claim_ids[i] for i in idx),
            labels=self.labels[idx],
            cds=self.cds[rows],
            ud=self.ud[rows],
            offsets=np.concatenate([[0], np.cumsum(counts)]).astype(np.int64),
            spud=self.spud[idx],
            struct=self.struct[idx],
            text=self.text[idx],
            has_text=self.has_text[idx],
        )

    def tabular(self: Self, feature: Feature) -> NDArray[np.float64]:
        """The per-claim array for SPUD, Struct or Text."""
        match feature:
            case Feature.SPUD:
                return self.spud
            case Feature.STRUCT:
                return self.struct
            case Feature.TEXT:
                return self.text
        msg = f"{feature.label} is computed from images, not stored per claim"
        raise DataFormatError(msg, field=feature.key)
