# SPDX-FileCopyrightText: Copyright 2023, Contributors to claimfusion
# SPDX-PackageHomePage: https://github.com/claimfusion/claimfusion
# SPDX-License-Identifier: Apache-2.0
"""
Two-input fusion blocks.

Each [`FusionKind`](claimfusion.core.enums.FusionKind) has a `fuse_*` forward function.
[`FusionBlock`](claimfusion.core.fusion.FusionBlock) dispatches to it and derives every
parameter shape from its [`FusionConfig`](claimfusion.core.fusion.FusionConfig) alone.

Bilinear paths (rank factors, Tucker cores) have no bias.
Projection and output affines do, and their biases start at zero,
so a freshly initialized bilinear block maps a zero input to a zero output.
"""

from __future__ import annotations

import dataclasses
import logging
from collections.abc import Mapping, Sequence
from dataclasses import dataclass
from typing import Any, Self

import numpy as np
from numpy.typing import DTypeLike

from claimfusion.core.enums import FusionKind
from claimfusion.core.exceptions import ConfigInvalidError, DimensionError
from claimfusion.core.layers import Affine, Mlp, Shapes, init_params, n_scalars
from claimfusion.core.tensor import (
    Parameters,
    Tensor,
    add,
    chunk_sum_pool,
    chunked_linear,
    concat,
    dropout,
    hadamard,
    l2_normalize,
    signed_sqrt,
    tanh,
    trilinear,
)

__all__ = [
    "FusionConfig",
    "FusionBlock",
    "fuse_concat_mlp",
    "fuse_linear_sum",
    "fuse_mlb",
    "fuse_mfb",
    "fuse_mfh",
    "fuse_block",
    "fuse_block_tucker",
    "default_fusion",
    "NORM_EPS",
]

logger = logging.getLogger("claimfusion")

NORM_EPS = 1e-12


@dataclass(slots=True, frozen=True, kw_only=True)
class FusionConfig:
    """
    A fusion block's hyperparameters.

    Attributes:
        kind: Strategy
        in_dims: Widths of the two inputs
        mm_dim: Joint projection width (linear_sum, mlb, block, block_tucker)
        out_dim: Output width; MFH outputs `mfh_stages · out_dim`
        chunks: Number of chunks (block, block_tucker)
        rank: Rank per chunk (block)
        pool_factor: Sum-pooling factor `k`; MFB and MFH expand to `k · out_dim` internally
        mfh_stages: Number of MFH stages
        mlp_hidden: Hidden widths (concat_mlp)
        dropout_p: Dropout on both inputs before projection during training,
                   and after each hidden layer of concat_mlp
        normalize: Signed square root then L2 normalization (mfb, mfh, block, block_tucker)
        linear: Drops the tanh in MLB
    """

    kind: FusionKind
    in_dims: tuple[int, int]
    mm_dim: int = 1600
    out_dim: int = 1600
    chunks: int = 20
    rank: int = 15
    pool_factor: int = 5
    mfh_stages: int = 2
    mlp_hidden: tuple[int, ...] = (500, 500)
    dropout_p: float = 0.5
    normalize: bool = True
    linear: bool = False

    def __post_init__(self: Self) -> None:
        object.__setattr__(self, "kind", FusionKind.of(self.kind))
        object.__setattr__(self, "in_dims", tuple(int(d) for d in self.in_dims))
        object.__setattr__(self, "mlp_hidden", tuple(int(d) for d in self.mlp_hidden))
        if len(self.in_dims) != 2:
            msg = f"A fusion block takes exactly two inputs, not {len(self.in_dims)}"
            raise ConfigInvalidError(msg, key="in_dims", value=self.in_dims)
        positive = {
            "in_dims": min(self.in_dims),
            "mm_dim": self.mm_dim,
            "out_dim": self.out_dim,
            "chunks": self.chunks,
            "rank": self.rank,
            "pool_factor": self.pool_factor,
            "mfh_stages": self.mfh_stages,
            "mlp_hidden": min(self.mlp_hidden, default=1),
        }
        for key, value in positive.items():
            if value < 1:
                msg = f"{key} must be positive, not {value}"
                raise ConfigInvalidError(msg, key=key, value=value)
        if not 0 <= self.dropout_p < 1:
            msg = f"dropout_p {self.dropout_p} is not in [0, 1)"
            raise ConfigInvalidError(msg, key="dropout_p", value=self.dropout_p)
        if self.kind.uses_chunks and self.mm_dim % self.chunks != 0:
            msg = f"mm_dim {self.mm_dim} is not divisible by chunks {self.chunks}"
            raise ConfigInvalidError(msg, key="chunks", value=self.chunks)

    @classmethod
    def of(cls: type[Self], data: Mapping[str, Any]) -> Self:
        """Builds from a plain mapping, as read from a config file."""
        fields = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - fields
        if unknown:
            msg = f"Unknown fusion keys {sorted(unknown)}"
            raise ConfigInvalidError(msg, key=sorted(unknown)[0])
        return cls(**data)

    def to_dict(self: Self) -> dict[str, Any]:
        d = dataclasses.asdict(self)
        d["kind"] = self.kind.key
        d["in_dims"] = list(self.in_dims)
        d["mlp_hidden"] = list(self.mlp_hidden)
        return d

    def replace(self: Self, **kwargs: Any) -> FusionConfig:
        return dataclasses.replace(self, **kwargs)

    @property
    def output_dim(self: Self) -> int:
        if self.kind is FusionKind.MFH:
            return self.mfh_stages * self.out_dim
        return self.out_dim

    @property
    def chunk_width(self: Self) -> int:
        return self.mm_dim // self.chunks

    @property
    def expanded_dim(self: Self) -> int:
        """Width before sum pooling in MFB/MFH."""
        return self.pool_factor * self.out_dim


@dataclass(slots=True, frozen=True)
class FusionBlock:
    """
    A named fusion block; its parameters live under `name.` in a registry.
    """

    config: FusionConfig
    name: str = "fusion"

    @property
    def kind(self: Self) -> FusionKind:
        return self.config.kind

    @property
    def output_dim(self: Self) -> int:
        return self.config.output_dim

    def _affine(self: Self, part: str, n_in: int, n_out: int, *, bias: bool = True) -> Affine:
        return Affine(f"{self.name}.{part}", n_in, n_out, bias)

    @property
    def mlp(self: Self) -> Mlp:
        c = self.config
        return Mlp.of(f"{self.name}.mlp", sum(c.in_dims), c.mlp_hidden, c.out_dim, c.dropout_p)

    def shapes(self: Self) -> Shapes:
        """Every parameter shape, derived from the config alone."""
        c = self.config
        d1, d2 = c.in_dims
        s: Shapes = {}
        match c.kind:
            case FusionKind.CONCAT_MLP:
                s |= self.mlp.shapes()
            case FusionKind.LINEAR_SUM | FusionKind.MLB:
                s |= self._affine("proj1", d1, c.mm_dim).shapes()
                s |= self._affine("proj2", d2, c.mm_dim).shapes()
                s |= self._affine("out", c.mm_dim, c.out_dim).shapes()
            case FusionKind.MFB | FusionKind.MFH:
                stages = 1 if c.kind is FusionKind.MFB else c.mfh_stages
                for i in range(stages):
                    s |= self._affine(f"stage{i}.proj1", d1, c.expanded_dim).shapes()
                    s |= self._affine(f"stage{i}.proj2", d2, c.expanded_dim).shapes()
            case FusionKind.BLOCK:
                w = c.chunk_width
                s |= self._affine("proj1", d1, c.mm_dim).shapes()
                s |= self._affine("proj2", d2, c.mm_dim).shapes()
                s[f"{self.name}.factor1"] = (c.chunks, w * c.rank, w)
                s[f"{self.name}.factor2"] = (c.chunks, w * c.rank, w)
                s |= self._affine("out", c.mm_dim, c.out_dim).shapes()
            case FusionKind.BLOCK_TUCKER:
                w = c.chunk_width
                s |= self._affine("proj1", d1, c.mm_dim).shapes()
                s |= self._affine("proj2", d2, c.mm_dim).shapes()
                s[f"{self.name}.core"] = (c.chunks, w, w, w)
                s |= self._affine("out", c.mm_dim, c.out_dim).shapes()
        return s

    @property
    def n_params(self: Self) -> int:
        return n_scalars(self.shapes())

    def init(self: Self, params: Parameters, *, seed: int, dtype: DTypeLike = np.float64) -> None:
        init_params(params, self.shapes(), seed=seed, dtype=dtype)

    def __call__(self: Self, x1: Tensor, x2: Tensor) -> Tensor:
        d1, d2 = self.config.in_dims
        if x1.shape[-1] != d1 or x2.shape[-1] != d2 or x1.shape[:-1] != x2.shape[:-1]:
            msg = f"{self.name}: inputs {x1.shape} and {x2.shape} do not match in_dims {self.config.in_dims}"
            raise DimensionError(msg, shapes=(x1.shape, x2.shape))
        return _FORWARD[self.kind](self, x1, x2)

    def input_dropout(self: Self, x1: Tensor, x2: Tensor) -> tuple[Tensor, Tensor]:
        p = self.config.dropout_p
        return dropout(x1, p, layer=f"{self.name}.in1"), dropout(x2, p, layer=f"{self.name}.in2")

    def normalized(self: Self, z: Tensor) -> Tensor:
        if not self.config.normalize:
            return z
        return l2_normalize(signed_sqrt(z), NORM_EPS)

    def merge(self: Self, x1: Tensor, x2: Tensor) -> Tensor:
        """
        The chunkwise bilinear map of BLOCK and BLOCK Tucker, on already projected inputs,
        before normalization and the output affine.
        """
        g = x1.graph
        if self.kind is FusionKind.BLOCK:
            left = chunked_linear(x1, g.param(f"{self.name}.factor1"))
            right = chunked_linear(x2, g.param(f"{self.name}.factor2"))
            return chunk_sum_pool(hadamard(left, right), self.config.rank)
        if self.kind is FusionKind.BLOCK_TUCKER:
            return trilinear(x1, x2, g.param(f"{self.name}.core"))
        msg = f"{self.kind.label} has no chunkwise merge"
        raise ConfigInvalidError(msg, key="kind", value=self.kind.key)


def fuse_concat_mlp(b: FusionBlock, x1: Tensor, x2: Tensor) -> Tensor:
    return b.mlp(concat([x1, x2]))


def fuse_linear_sum(b: FusionBlock, x1: Tensor, x2: Tensor) -> Tensor:
    c = b.config
    x1, x2 = b.input_dropout(x1, x2)
    h1 = b._affine("proj1", c.in_dims[0], c.mm_dim)(x1)
    h2 = b._affine("proj2", c.in_dims[1], c.mm_dim)(x2)
    return b._affine("out", c.mm_dim, c.out_dim)(add(h1, h2))


def fuse_mlb(b: FusionBlock, x1: Tensor, x2: Tensor) -> Tensor:
    c = b.config
    x1, x2 = b.input_dropout(x1, x2)
    h1 = b._affine("proj1", c.in_dims[0], c.mm_dim)(x1)
    h2 = b._affine("proj2", c.in_dims[1], c.mm_dim)(x2)
    if not c.linear:
        h1, h2 = tanh(h1), tanh(h2)
    return b._affine("out", c.mm_dim, c.out_dim)(hadamard(h1, h2))


def _mfb_products(b: FusionBlock, x1: Tensor, x2: Tensor, stages: int) -> list[Tensor]:
    c = b.config
    x1, x2 = b.input_dropout(x1, x2)
    products, previous = [], None
    for i in range(stages):
        z = hadamard(
            b._affine(f"stage{i}.proj1", c.in_dims[0], c.expanded_dim)(x1),
            b._affine(f"stage{i}.proj2", c.in_dims[1], c.expanded_dim)(x2),
        )
        if previous is not None:
            z = hadamard(z, previous)
        products.append(z)
        previous = z
    return products


def fuse_mfb(b: FusionBlock, x1: Tensor, x2: Tensor) -> Tensor:
    (z,) = _mfb_products(b, x1, x2, 1)
    return b.normalized(chunk_sum_pool(z, b.config.pool_factor))


def fuse_mfh(b: FusionBlock, x1: Tensor, x2: Tensor) -> Tensor:
    """Each stage is pooled and normalized separately; stage outputs are concatenated."""
    products = _mfb_products(b, x1, x2, b.config.mfh_stages)
    stages = [b.normalized(chunk_sum_pool(z, b.config.pool_factor)) for z in products]
    return stages[0] if len(stages) == 1 else concat(stages)


def _block_like(b: FusionBlock, x1: Tensor, x2: Tensor) -> Tensor:
    c = b.config
    x1, x2 = b.input_dropout(x1, x2)
    h1 = b._affine("proj1", c.in_dims[0], c.mm_dim)(x1)
    h2 = b._affine("proj2", c.in_dims[1], c.mm_dim)(x2)
    z = b.normalized(b.merge(h1, h2))
    return b._affine("out", c.mm_dim, c.out_dim)(z)


def fuse_block(b: FusionBlock, x1: Tensor, x2: Tensor) -> Tensor:
    return _block_like(b, x1, x2)


def fuse_block_tucker(b: FusionBlock, x1: Tensor, x2: Tensor) -> Tensor:
    return _block_like(b, x1, x2)


_FORWARD = {
    FusionKind.CONCAT_MLP: fuse_concat_mlp,
    FusionKind.LINEAR_SUM: fuse_linear_sum,
    FusionKind.MLB: fuse_mlb,
    FusionKind.MFB: fuse_mfb,
    FusionKind.MFH: fuse_mfh,
    FusionKind.BLOCK: fuse_block,
    FusionKind.BLOCK_TUCKER: fuse_block_tucker,
}


def default_fusion(kind: FusionKind | str, in_dims: Sequence[int], **kwargs: Any) -> FusionConfig:
    return FusionConfig(kind=FusionKind.of(kind), in_dims=tuple(in_dims), **kwargs)
