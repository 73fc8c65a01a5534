# SPDX-FileCopyrightText: Copyright 2023, Contributors to claimfusion
# SPDX-PackageHomePage: https://github.com/claimfusion/claimfusion
# SPDX-License-Identifier: Apache-2.0
"""
Classifiers assembled from encoders and fusion blocks.

A [`ModelConfig`](claimfusion.core.models.ModelConfig) fully determines every parameter shape.
A [`Model`](claimfusion.core.models.Model) pairs a config with a parameter registry.
Forward passes take claim-level feature tensors, either computed from a
[`ClaimBatch`](claimfusion.core.records.ClaimBatch) through the visual encoders
or given directly as a [`ClaimFeatureSet`](claimfusion.core.records.ClaimFeatureSet).
"""

from __future__ import annotations

import dataclasses
import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import Any, Self

import numpy as np
from numpy.typing import ArrayLike, DTypeLike, NDArray

from claimfusion.core.enums import Arch, Feature, FusionKind, Modality
from claimfusion.core.exceptions import AvailabilityError, ConfigInvalidError, DimensionError
from claimfusion.core.fusion import FusionBlock, FusionConfig
from claimfusion.core.layers import Affine, Mlp, Shapes, VisualEncoder, graph_for, init_params, n_scalars
from claimfusion.core.records import ClaimBatch, ClaimFeatureSet
from claimfusion.core.tensor import (
    Graph,
    Parameters,
    Tensor,
    add,
    concat,
    scale,
    segment_mean,
    softmax,
    softmax_cross_entropy,
)

__all__ = [
    "Dims",
    "FULL_DIMS",
    "DESK_DIMS",
    "SLOW_FUSION_PAIRS",
    "ModelConfig",
    "Model",
    "FusionActivations",
    "ModelOutputs",
    "LossBundle",
    "enumerate_pairs",
    "build_model",
    "build_unimodal",
    "build_bimodal",
    "build_concat_baseline",
    "build_slow_fusion",
    "build_autofraudnet",
    "batch_inputs",
    "forward_batch",
    "forward_claim",
    "compute_loss",
    "score",
    "parameter_count",
]

logger = logging.getLogger("claimfusion")

SLOW_FUSION_PAIRS: tuple[tuple[Feature, Feature], tuple[Feature, Feature]] = (
    (Feature.CDS, Feature.SPUD),
    (Feature.UD, Feature.STRUCT),
)


@dataclass(slots=True, frozen=True, kw_only=True)
class Dims:
    """
    Default widths used by the builders.
    """

    mm_dim: int = 1600
    out_dim: int = 1600
    chunks: int = 20
    rank: int = 15
    pool_factor: int = 5
    mfh_stages: int = 2
    fusion_hidden: tuple[int, ...] = (500, 500)
    mlp_hidden: tuple[int, ...] = (500, 500)
    encoder_hidden: int = 200
    dropout_p: float = 0.5

    def fusion(self: Self, kind: FusionKind | str, in_dims: Sequence[int]) -> FusionConfig:
        return FusionConfig(
            kind=FusionKind.of(kind),
            in_dims=tuple(in_dims),
            mm_dim=self.mm_dim,
            out_dim=self.out_dim,
            chunks=self.chunks,
            rank=self.rank,
            pool_factor=self.pool_factor,
            mfh_stages=self.mfh_stages,
            mlp_hidden=self.fusion_hidden,
            dropout_p=self.dropout_p,
        )

    def replace(self: Self, **kwargs: Any) -> Dims:
        return dataclasses.replace(self, **kwargs)


FULL_DIMS = Dims()
DESK_DIMS = Dims(mm_dim=160, out_dim=160, chunks=8, rank=5, fusion_hidden=(64, 64), mlp_hidden=(64, 64), encoder_hidden=32)


def enumerate_pairs() -> list[tuple[Feature, Feature]]:
    """
    The 8 cross-modal feature pairs: visual × tabular, then each non-text feature × text.
    """
    visual = [Feature.CDS, Feature.UD]
    tabular = [Feature.SPUD, Feature.STRUCT]
    pairs = [(v, t) for v in visual for t in tabular]
    pairs += [(f, Feature.TEXT) for f in (*visual, *tabular)]
    return pairs


@dataclass(slots=True, frozen=True, kw_only=True)
class ModelConfig:
    """
    A full classifier.

    Attributes:
        arch: Architecture
        features: Inputs in order (derived for concat and slow-fusion archs)
        fusion: First-layer fusion (bimodal; slow-fusion archs use it as a template for both pairs)
        second: Second-layer fusion (slow_fusion only)
        mlp_hidden: Hidden widths of MLP classifiers (unimodal, concat baselines)
        dropout_p: Dropout after MLP hidden layers
        encoder_hidden: Hidden width of both visual encoders
        head_weights: Loss weights for the F1 head, the F2 head and the final head
    """

    arch: Arch
    features: tuple[Feature, ...] = ()
    fusion: FusionConfig | None = None
    second: FusionConfig | None = None
    mlp_hidden: tuple[int, ...] = (500, 500)
    dropout_p: float = 0.5
    encoder_hidden: int = 200
    head_weights: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self: Self) -> None:
        arch = Arch.of(self.arch)
        object.__setattr__(self, "arch", arch)
        object.__setattr__(self, "mlp_hidden", tuple(int(h) for h in self.mlp_hidden))
        object.__setattr__(self, "head_weights", tuple(float(w) for w in self.head_weights))
        features = tuple(Feature.of(f) for f in self.features)
        match arch:
            case Arch.CONCAT_ALL:
                features = tuple(Feature)
            case Arch.CONCAT_WO_TEXT:
                features = (Feature.CDS, Feature.UD, Feature.SPUD, Feature.STRUCT)
            case Arch.SLOW_FUSION | Arch.AUTOFRAUDNET | Arch.AUTOFRAUDNET_HEADS:
                features = (*SLOW_FUSION_PAIRS[0], *SLOW_FUSION_PAIRS[1])
        object.__setattr__(self, "features", features)
        if arch is Arch.UNIMODAL and len(features) != 1:
            msg = f"A unimodal model takes one feature, not {len(features)}"
            raise ConfigInvalidError(msg, key="features", value=[f.key for f in features])
        if arch is Arch.BIMODAL:
            if len(features) != 2:
                msg = f"A bimodal model takes a pair of features, not {len(features)}"
                raise ConfigInvalidError(msg, key="features", value=[f.key for f in features])
            if features[0].modality is features[1].modality:
                msg = f"{features[0].label} and {features[1].label} share a modality; pairs must be cross-modal"
                raise ConfigInvalidError(msg, key="features", value=[f.key for f in features])
        if arch in (Arch.BIMODAL, Arch.SLOW_FUSION, Arch.AUTOFRAUDNET, Arch.AUTOFRAUDNET_HEADS):
            if self.fusion is None:
                msg = f"{arch.key} needs a fusion config"
                raise ConfigInvalidError(msg, key="fusion")
        if arch is Arch.SLOW_FUSION and self.second is None:
            msg = "slow_fusion needs a second-layer fusion config"
            raise ConfigInvalidError(msg, key="second")
        if arch is not Arch.SLOW_FUSION and self.second is not None:
            msg = f"{arch.key} has no second fusion layer"
            raise ConfigInvalidError(msg, key="second")
        if len(self.head_weights) != 3 or min(self.head_weights) < 0:
            msg = f"head_weights must be three non-negative numbers, not {self.head_weights}"
            raise ConfigInvalidError(msg, key="head_weights", value=self.head_weights)
        if self.encoder_hidden < 1 or not 0 <= self.dropout_p < 1:
            msg = f"Invalid encoder_hidden {self.encoder_hidden} or dropout_p {self.dropout_p}"
            raise ConfigInvalidError(msg, key="encoder_hidden", value=self.encoder_hidden)
        # fill in the input widths the arch implies
        if self.fusion is not None and arch is Arch.BIMODAL:
            dims = (features[0].dim, features[1].dim)
            object.__setattr__(self, "fusion", self.fusion.replace(in_dims=dims))
        if self.second is not None:
            o = self.first_blocks[0].output_dim
            o2 = self.first_blocks[1].output_dim
            object.__setattr__(self, "second", self.second.replace(in_dims=(o, o2)))

    @property
    def label(self: Self) -> str:
        match self.arch:
            case Arch.UNIMODAL:
                return self.features[0].label
            case Arch.BIMODAL:
                return f"{self.features[0].label} + {self.features[1].label} / {self.fusion.kind.label}"
            case Arch.CONCAT_ALL:
                return "Concat MLP - All"
            case Arch.CONCAT_WO_TEXT:
                return "Concat MLP - w/o Text"
            case Arch.SLOW_FUSION:
                return f"SF - {self.second.kind.label}"
            case Arch.AUTOFRAUDNET:
                return "AutoFraudNet"
        return "AutoFraudNet + Heads"

    @property
    def uses_encoders(self: Self) -> bool:
        return any(f.modality is Modality.VISUAL for f in self.features)

    @property
    def encoders(self: Self) -> dict[Feature, VisualEncoder]:
        return {
            f: VisualEncoder(f"enc.{f.key}", self.encoder_hidden, n_out=f.dim)
            for f in self.features
            if f.modality is Modality.VISUAL
        }

    @property
    def first_blocks(self: Self) -> list[FusionBlock]:
        if self.arch is Arch.BIMODAL:
            return [FusionBlock(self.fusion, "fusion")]
        if self.arch.is_slow_fusion:
            return [
                FusionBlock(self.fusion.replace(in_dims=(a.dim, b.dim)), f"fusion{i + 1}")
                for i, (a, b) in enumerate(SLOW_FUSION_PAIRS)
            ]
        return []

    @property
    def second_block(self: Self) -> FusionBlock | None:
        return None if self.second is None else FusionBlock(self.second, "fusion_c")

    @property
    def mlp(self: Self) -> Mlp | None:
        if self.arch in (Arch.UNIMODAL, Arch.CONCAT_ALL, Arch.CONCAT_WO_TEXT):
            n_in = sum(f.dim for f in self.features)
            return Mlp.of("mlp", n_in, self.mlp_hidden, 2, self.dropout_p)
        return None

    @property
    def classifier(self: Self) -> Affine | None:
        """The affine that produces the final logits, unless the arch ends with an MLP."""
        match self.arch:
            case Arch.BIMODAL:
                return Affine("classifier", self.first_blocks[0].output_dim, 2)
            case Arch.SLOW_FUSION:
                return Affine("classifier", self.second_block.output_dim, 2)
            case Arch.AUTOFRAUDNET | Arch.AUTOFRAUDNET_HEADS:
                return Affine("classifier", sum(b.output_dim for b in self.first_blocks), 2)
        return None

    @property
    def heads(self: Self) -> list[Affine]:
        if not self.arch.has_heads:
            return []
        return [Affine(f"head{i + 1}", b.output_dim, 2) for i, b in enumerate(self.first_blocks)]

    def shapes(self: Self, *, include_encoders: bool = True) -> Shapes:
        s: Shapes = {}
        if include_encoders:
            for enc in self.encoders.values():
                s |= enc.shapes()
        for block in self.first_blocks:
            s |= block.shapes()
        if self.second_block is not None:
            s |= self.second_block.shapes()
        if self.mlp is not None:
            s |= self.mlp.shapes()
        if self.classifier is not None:
            s |= self.classifier.shapes()
        for head in self.heads:
            s |= head.shapes()
        return s

    def to_dict(self: Self) -> dict[str, Any]:
        d: dict[str, Any] = {
            "arch": self.arch.key,
            "features": [f.key for f in self.features],
            "mlp_hidden": list(self.mlp_hidden),
            "dropout_p": self.dropout_p,
            "encoder_hidden": self.encoder_hidden,
            "head_weights": list(self.head_weights),
        }
        if self.fusion is not None:
            d["fusion"] = self.fusion.to_dict()
        if self.second is not None:
            d["second"] = self.second.to_dict()
        return d

    @classmethod
    def of(cls: type[Self], data: Mapping[str, Any]) -> Self:
        data = dict(data)
        for key in ("fusion", "second"):
            if data.get(key) is not None and not isinstance(data[key], FusionConfig):
                sub = dict(data[key])
                sub.setdefault("in_dims", (1, 1))
                data[key] = FusionConfig.of(sub)
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - fields
        if unknown:
            msg = f"Unknown model keys {sorted(unknown)}"
            raise ConfigInvalidError(msg, key=sorted(unknown)[0])
        return cls(**data)

    def replace(self: Self, **kwargs: Any) -> ModelConfig:
        return dataclasses.replace(self, **kwargs)


@dataclass(slots=True, frozen=True)
class FusionActivations:
    a_f1: Tensor
    a_f2: Tensor
    a_c: Tensor


@dataclass(slots=True, frozen=True)
class ModelOutputs:
    """
    Results of one forward pass.

    Attributes:
        graph: The graph the pass was recorded on
        logits: Final logits
        head_logits: Logits of the F1 and F2 heads (heads arch only)
        activations: First-layer activations (slow-fusion archs only)
    """

    graph: Graph
    logits: Tensor
    head_logits: tuple[Tensor, Tensor] | None = None
    activations: FusionActivations | None = None


@dataclass(slots=True, frozen=True)
class LossBundle:
    l_c: Tensor
    total: Tensor
    l_f1: Tensor | None = None
    l_f2: Tensor | None = None

    def values(self: Self) -> dict[str, float]:
        d = {"l_c": float(self.l_c.value), "total": float(self.total.value)}
        if self.l_f1 is not None:
            d |= {"l_f1": float(self.l_f1.value), "l_f2": float(self.l_f2.value)}
        return d


@dataclass(slots=True)
class Model:
    config: ModelConfig
    params: Parameters

    @property
    def n_params(self: Self) -> int:
        return self.params.n_scalars

    def graph(self: Self, *, training: bool = False, seed: int = 0, step: int = 0) -> Graph:
        return graph_for(self.params, training=training, seed=seed, step=step)

    def forward(self: Self, inputs: Mapping[Feature, Tensor]) -> ModelOutputs:
        """
        Runs from claim-level feature tensors (each `(d,)` or `(B, d)`).
        """
        cfg = self.config
        missing = [f for f in cfg.features if f not in inputs]
        if missing:
            msg = f"{cfg.label} needs {missing[0].label}"
            raise AvailabilityError(msg, modality=missing[0].key)
        for f in cfg.features:
            if inputs[f].shape[-1] != f.dim:
                msg = f"{f.label} must be {f.dim} wide, not {inputs[f].shape[-1]}"
                raise DimensionError(msg, shapes=(inputs[f].shape,))
        g = inputs[cfg.features[0]].graph
        if cfg.mlp is not None:
            xs = [inputs[f] for f in cfg.features]
            x = xs[0] if len(xs) == 1 else concat(xs)
            return ModelOutputs(g, cfg.mlp(x))
        blocks = cfg.first_blocks
        if cfg.arch is Arch.BIMODAL:
            a, b = cfg.features
            return ModelOutputs(g, cfg.classifier(blocks[0](inputs[a], inputs[b])))
        (a1, b1), (a2, b2) = SLOW_FUSION_PAIRS
        a_f1 = blocks[0](inputs[a1], inputs[b1])
        a_f2 = blocks[1](inputs[a2], inputs[b2])
        a_c = concat([a_f1, a_f2])
        acts = FusionActivations(a_f1, a_f2, a_c)
        if cfg.arch is Arch.SLOW_FUSION:
            return ModelOutputs(g, cfg.classifier(cfg.second_block(a_f1, a_f2)), activations=acts)
        logits = cfg.classifier(a_c)
        heads = None
        if cfg.arch.has_heads:
            h1, h2 = cfg.heads
            heads = (h1(a_f1), h2(a_f2))
        return ModelOutputs(g, logits, heads, acts)


def build_model(config: ModelConfig, *, seed: int = 0, dtype: DTypeLike = np.float64) -> Model:
    """Allocates and initializes parameters; the same seed gives the same parameters."""
    params = Parameters()
    init_params(params, config.shapes(), seed=seed, dtype=dtype)
    return Model(config, params)


def build_unimodal(feature: Feature | str, *, dims: Dims = FULL_DIMS, seed: int = 0) -> Model:
    cfg = ModelConfig(
        arch=Arch.UNIMODAL,
        features=(Feature.of(feature),),
        mlp_hidden=dims.mlp_hidden,
        dropout_p=dims.dropout_p,
        encoder_hidden=dims.encoder_hidden,
    )
    return build_model(cfg, seed=seed)


def _canonical_pair(pair: Sequence[Feature | str]) -> tuple[Feature, Feature]:
    a, b = (Feature.of(f) for f in pair)
    for p in enumerate_pairs():
        if (b, a) == p:
            return p
    return a, b


def build_bimodal(
    pair: Sequence[Feature | str],
    fusion: FusionConfig | FusionKind | str,
    *,
    dims: Dims = FULL_DIMS,
    seed: int = 0,
) -> Model:
    a, b = _canonical_pair(pair)
    if not isinstance(fusion, FusionConfig):
        fusion = dims.fusion(fusion, (a.dim, b.dim))
    cfg = ModelConfig(
        arch=Arch.BIMODAL,
        features=(a, b),
        fusion=fusion,
        dropout_p=dims.dropout_p,
        encoder_hidden=dims.encoder_hidden,
    )
    return build_model(cfg, seed=seed)


def build_concat_baseline(*, with_text: bool, dims: Dims = FULL_DIMS, seed: int = 0) -> Model:
    cfg = ModelConfig(
        arch=Arch.CONCAT_ALL if with_text else Arch.CONCAT_WO_TEXT,
        mlp_hidden=dims.mlp_hidden,
        dropout_p=dims.dropout_p,
        encoder_hidden=dims.encoder_hidden,
    )
    return build_model(cfg, seed=seed)


def _first_layer(dims: Dims) -> FusionConfig:
    return dims.fusion(FusionKind.BLOCK_TUCKER, (1, 1))


def build_slow_fusion(second: FusionKind | str, *, dims: Dims = FULL_DIMS, seed: int = 0) -> Model:
    """BLOCK Tucker on both pairs, then a second fusion layer over the two activations."""
    cfg = ModelConfig(
        arch=Arch.SLOW_FUSION,
        fusion=_first_layer(dims),
        second=dims.fusion(second, (1, 1)),
        dropout_p=dims.dropout_p,
        encoder_hidden=dims.encoder_hidden,
    )
    return build_model(cfg, seed=seed)


def build_autofraudnet(
    second_layer: FusionConfig | FusionKind | str | None = None,
    *,
    heads: bool = False,
    dims: Dims = FULL_DIMS,
    seed: int = 0,
) -> Model:
    """
    Builds AutoFraudNet (a single affine over `[A_F1, A_F2]`) or, with `heads`, AutoFraudNet + Heads.

    Args:
        second_layer: `None` or `"single_affine"` for AutoFraudNet;
                      a fusion config or kind for a slow-fusion variant (heads must then be off)
        heads: Adds one classification head per first-layer activation
        dims: Width defaults
        seed: Initialization seed
    """
    if second_layer is not None and second_layer != "single_affine":
        if heads:
            msg = "Auxiliary heads are only defined for the single-affine second layer"
            raise ConfigInvalidError(msg, key="second")
        if isinstance(second_layer, FusionConfig):
            cfg = ModelConfig(
                arch=Arch.SLOW_FUSION,
                fusion=_first_layer(dims),
                second=second_layer,
                dropout_p=dims.dropout_p,
                encoder_hidden=dims.encoder_hidden,
            )
            return build_model(cfg, seed=seed)
        return build_slow_fusion(second_layer, dims=dims, seed=seed)
    cfg = ModelConfig(
        arch=Arch.AUTOFRAUDNET_HEADS if heads else Arch.AUTOFRAUDNET,
        fusion=_first_layer(dims),
        dropout_p=dims.dropout_p,
        encoder_hidden=dims.encoder_hidden,
    )
    return build_model(cfg, seed=seed)


def batch_inputs(model: Model, g: Graph, batch: ClaimBatch) -> dict[Feature, Tensor]:
    """Claim-level input tensors on `g`: visual features are encoded per image and averaged per claim."""
    cfg = model.config
    inputs: dict[Feature, Tensor] = {}
    encoders = cfg.encoders
    for f in cfg.features:
        if f.modality is Modality.VISUAL:
            rows = batch.cds if f is Feature.CDS else batch.ud
            per_image = encoders[f](g.constant(rows))
            inputs[f] = segment_mean(per_image, batch.segments, len(batch))
        else:
            if f is Feature.TEXT and not np.all(batch.has_text):
                first = batch.claim_ids[int(np.argmin(batch.has_text))]
                msg = f"Claim {first} has no text but {cfg.label} needs it"
                raise AvailabilityError(msg, modality=f.key, claim_id=first)
            inputs[f] = g.constant(batch.tabular(f))
    return inputs


def forward_batch(model: Model, batch: ClaimBatch, *, training: bool = False, seed: int = 0, step: int = 0) -> ModelOutputs:
    g = model.graph(training=training, seed=seed, step=step)
    return model.forward(batch_inputs(model, g, batch))


def forward_claim(model: Model, features: ClaimFeatureSet, *, training: bool = False, seed: int = 0, step: int = 0) -> ModelOutputs:
    """
    Runs on one claim's already-encoded features; the visual encoders are bypassed.
    """
    g = model.graph(training=training, seed=seed, step=step)
    inputs = {}
    for f in model.config.features:
        value = features[f]
        if value is None:
            msg = f"{model.config.label} needs {f.label}"
            raise AvailabilityError(msg, modality=f.key)
        inputs[f] = g.constant(value)
    return model.forward(inputs)


def compute_loss(model: Model, outputs: ModelOutputs, labels: ArrayLike) -> LossBundle:
    """
    Cross-entropy per head; the total is `w1·L_F1 + w2·L_F2 + wc·L_C` for the heads arch and `L_C` otherwise.
    """
    l_c = softmax_cross_entropy(outputs.logits, labels)
    if outputs.head_logits is None:
        return LossBundle(l_c, l_c)
    l_f1 = softmax_cross_entropy(outputs.head_logits[0], labels)
    l_f2 = softmax_cross_entropy(outputs.head_logits[1], labels)
    w1, w2, wc = model.config.head_weights
    terms = [t if w == 1.0 else scale(t, w) for t, w in ((l_f1, w1), (l_f2, w2), (l_c, wc))]
    total = add(add(terms[0], terms[1]), terms[2])
    return LossBundle(l_c, total, l_f1, l_f2)


def score(model: Model, batch: ClaimBatch, *, chunk_size: int = 1024) -> NDArray[np.float64]:
    """
    Fraud probabilities from the final head's softmax, in eval mode, computed in chunks.
    """
    out = np.empty(len(batch), dtype=np.float64)
    for start in range(0, len(batch), chunk_size):
        idx = np.arange(start, min(start + chunk_size, len(batch)))
        logits = forward_batch(model, batch.take(idx)).logits.value
        out[idx] = softmax(logits)[:, 1]
    return out


def parameter_count(config: FusionConfig | ModelConfig, *, include_encoders: bool = True) -> int:
    """
    Trainable scalars, computed from the config alone.
    """
    if isinstance(config, FusionConfig):
        return FusionBlock(config).n_params
    return n_scalars(config.shapes(include_encoders=include_encoders))
