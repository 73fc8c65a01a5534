# SPDX-FileCopyrightText: Copyright 2023, Contributors to claimfusion
# SPDX-PackageHomePage: https://github.com/claimfusion/claimfusion
# SPDX-License-Identifier: Apache-2.0
"""
Claim-level features from per-image records.
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Self

import numpy as np
from numpy.typing import ArrayLike, NDArray

from claimfusion.core.enums import Feature
from claimfusion.core.exceptions import AvailabilityError, ValueIllegalError, ValueOutOfRangeError
from claimfusion.core.layers import VisualEncoder, graph_for
from claimfusion.core.records import (
    EMBEDDING_DIM,
    N_PARTS,
    SPUD_DIM,
    STRUCT_DIM,
    TEXT_DIM,
    ClaimBatch,
    ClaimFeatureSet,
    ClaimRecord,
    ImageRecord,
)
from claimfusion.core.tensor import Graph, Parameters, Tensor, segment_mean

__all__ = ["FeatureUtils", "FeatureTools"]

logger = logging.getLogger("claimfusion")


@dataclass(slots=True, frozen=True)
class FeatureUtils:
    def encode_image_set(self: Self, g: Graph, enc: VisualEncoder, images: ArrayLike | Tensor) -> Tensor:
        """
        Encodes each image and averages over images.

        Args:
            g: Graph holding the encoder's parameters
            enc: Encoder
            images: `(n, 720)` rows, `n ≥ 1`

        Returns:
            A `(50,)` tensor
        """
        x = images if isinstance(images, Tensor) else np.asarray(images, dtype=np.float64)
        n = x.shape[0] if len(x.shape) == 2 else 0
        if n == 0:
            msg = "Cannot encode an empty image set"
            raise ValueIllegalError(msg, value=n)
        if not isinstance(x, Tensor):
            x = g.constant(x)
        return segment_mean(enc(x))

    def impute_absent_part(self: Self, part_index: int) -> tuple[float, float]:
        """
        Scores for a part an image does not show: invisible (0) and undamaged (0).
        """
        if not 0 <= part_index < N_PARTS:
            msg = f"Part index {part_index} outside [0, {N_PARTS})"
            raise ValueOutOfRangeError(msg, value=part_index, minimum=0, maximum=N_PARTS - 1)
        return 0.0, 0.0

    def part_scores(self: Self, image: ImageRecord) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
        """Visibility and damage scores with absent parts imputed."""
        vis, ud = image.part_vis.copy(), image.ud_score.copy()
        for i in image.absent_parts:
            vis[i], ud[i] = self.impute_absent_part(i)
        return vis, ud

    def aggregate_spud(self: Self, images: Sequence[ImageRecord]) -> NDArray[np.float64]:
        """
        Per-part max, min and mean over images for both score sets.

        Layout (126 values): part_vis max, min, mean; then ud_score max, min, mean.
        Each block lists the 21 parts in order.
        """
        if len(images) == 0:
            msg = "Cannot aggregate an empty image set"
            raise ValueIllegalError(msg, value=0)
        scores = [self.part_scores(img) for img in images]
        out = []
        for s in (np.stack([v for v, _ in scores]), np.stack([u for _, u in scores])):
            if np.any((s < 0) | (s > 1)):
                msg = "Part scores must be in [0, 1]"
                raise ValueOutOfRangeError(msg, minimum=0, maximum=1)
            out += [s.max(axis=0), s.min(axis=0), s.mean(axis=0)]
        return np.concatenate(out)

    def check_available(self: Self, rec: ClaimRecord, required: Sequence[Feature]) -> None:
        missing = rec.missing(required)
        if missing:
            msg = f"Claim {rec.claim_id} lacks {missing[0].label}"
            raise AvailabilityError(msg, modality=missing[0].key, claim_id=rec.claim_id)

    def filter_available(
        self: Self,
        records: Sequence[ClaimRecord],
        required: Sequence[Feature],
    ) -> tuple[list[ClaimRecord], list[ClaimRecord]]:
        """
        Splits claims into those that supply every required feature and those that do not.
        """
        kept = [r for r in records if not r.missing(required)]
        dropped = [r for r in records if r.missing(required)]
        if dropped:
            names = ", ".join(f.label for f in required)
            logger.warning(f"Filtered {len(dropped)} of {len(records)} claims lacking one of: {names}")
        return kept, dropped

    def assemble_feature_set(
        self: Self,
        rec: ClaimRecord,
        params: Parameters,
        enc_cds: VisualEncoder,
        enc_ud: VisualEncoder,
        required: Sequence[Feature] = (),
    ) -> ClaimFeatureSet:
        """
        Builds all claim-level features (eval mode).

        Raises:
            AvailabilityError: If the claim lacks a feature in `required`
        """
        self.check_available(rec, required)
        g = graph_for(params)
        a_cds = self.encode_image_set(g, enc_cds, np.stack([img.cds for img in rec.images])).value
        a_ud = self.encode_image_set(g, enc_ud, np.stack([img.ud for img in rec.images])).value
        return ClaimFeatureSet(
            a_cds=np.array(a_cds, dtype=np.float64),
            a_ud=np.array(a_ud, dtype=np.float64),
            a_spud=self.aggregate_spud(rec.images),
            a_struct=rec.struct_onehot.copy(),
            a_text=None if rec.text_emb is None else rec.text_emb.copy(),
        )

    def batch(self: Self, records: Sequence[ClaimRecord]) -> ClaimBatch:
        """
        Stacks claims; SPUD is aggregated here so batches can be sliced cheaply later.
        """
        n = len(records)
        counts = np.array([r.n_images for r in records], dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        n_rows = int(offsets[-1])
        cds = np.empty((n_rows, EMBEDDING_DIM))
        ud = np.empty((n_rows, EMBEDDING_DIM))
        spud = np.empty((n, SPUD_DIM))
        struct = np.empty((n, STRUCT_DIM))
        text = np.zeros((n, TEXT_DIM))
        has_text = np.zeros(n, dtype=bool)
        for i, rec in enumerate(records):
            rows = slice(offsets[i], offsets[i + 1])
            cds[rows] = [img.cds for img in rec.images]
            ud[rows] = [img.ud for img in rec.images]
            spud[i] = self.aggregate_spud(rec.images)
            struct[i] = rec.struct_onehot
            if rec.text_emb is not None:
                text[i], has_text[i] = rec.text_emb, True
        return ClaimBatch(
            claim_ids=tuple(r.claim_id for r in records),
            labels=np.array([r.label for r in records], dtype=np.int64),
            cds=cds,
            ud=ud,
            offsets=offsets,
            spud=spud,
            struct=struct,
            text=text,
            has_text=has_text,
        )


FeatureTools = FeatureUtils()
