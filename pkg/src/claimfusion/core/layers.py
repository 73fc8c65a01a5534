# SPDX-FileCopyrightText: Copyright 2023, Contributors to claimfusion
# SPDX-PackageHomePage: https://github.com/claimfusion/claimfusion
# SPDX-License-Identifier: Apache-2.0
"""
Parameter containers: affine layers, MLPs and the per-image visual encoder.

A layer only knows its name and shapes.
[`init_params`](claimfusion.core.layers.init_params) registers arrays in a
[`Parameters`](claimfusion.core.tensor.Parameters) and calling the layer records ops on a graph.
"""

from __future__ import annotations

import math
import zlib
from collections.abc import Sequence
from dataclasses import dataclass
from typing import Self

import numpy as np
from numpy.typing import DTypeLike

from claimfusion.core.exceptions import ConfigInvalidError
from claimfusion.core.tensor import Graph, Parameters, Tensor, affine, dropout, relu

__all__ = [
    "Shapes",
    "param_rng",
    "init_params",
    "n_scalars",
    "instantiate",
    "graph_for",
    "Affine",
    "Mlp",
    "VisualEncoder",
]

Shapes = dict[str, tuple[int, ...]]


def param_rng(seed: int, name: str) -> np.random.Generator:
    """A generator that depends only on the run seed and the parameter name."""
    return np.random.default_rng([seed, zlib.crc32(name.encode("utf-8"))])


def init_params(params: Parameters, shapes: Shapes, *, seed: int, dtype: DTypeLike = np.float64) -> None:
    """
    Registers zero-filled biases, uniform(±1/√fan_in) matrices and normal(σ = 1/√(i·j)) 3-way cores.
    Names ending in `.b` are biases and names ending in `.core` are cores.
    Otherwise the fan-in is the last axis.
    """
    for name, shape in shapes.items():
        rng = param_rng(seed, name)
        if name.endswith(".b"):
            value = np.zeros(shape)
        elif name.endswith(".core"):
            sigma = 1.0 / math.sqrt(shape[-3] * shape[-2])
            value = rng.normal(0.0, sigma, size=shape)
        else:
            bound = 1.0 / math.sqrt(shape[-1])
            value = rng.uniform(-bound, bound, size=shape)
        params.add(name, value.astype(dtype))


@dataclass(slots=True, frozen=True)
class Affine:
    name: str
    n_in: int
    n_out: int
    bias: bool = True

    def shapes(self: Self) -> Shapes:
        s = {f"{self.name}.w": (self.n_out, self.n_in)}
        if self.bias:
            s[f"{self.name}.b"] = (self.n_out,)
        return s

    def __call__(self: Self, x: Tensor) -> Tensor:
        g = x.graph
        b = g.param(f"{self.name}.b") if self.bias else None
        return affine(x, g.param(f"{self.name}.w"), b)


@dataclass(slots=True, frozen=True)
class Mlp:
    """
    Affine layers with ReLU and dropout after every hidden layer and nothing after the last.

    Attributes:
        dims: Input width, hidden widths, output width
    """

    name: str
    dims: tuple[int, ...]
    dropout_p: float = 0.5

    def __post_init__(self: Self) -> None:
        if len(self.dims) < 2 or any(d < 1 for d in self.dims):
            msg = f"MLP {self.name} needs at least an input and an output width, all positive; got {self.dims}"
            raise ConfigInvalidError(msg, key=self.name, value=self.dims)

    @classmethod
    def of(cls: type[Self], name: str, n_in: int, hidden: Sequence[int], n_out: int, dropout_p: float) -> Self:
        return cls(name, (n_in, *hidden, n_out), dropout_p)

    @property
    def layers(self: Self) -> list[Affine]:
        return [Affine(f"{self.name}.{i}", a, b) for i, (a, b) in enumerate(zip(self.dims[:-1], self.dims[1:]))]

    def shapes(self: Self) -> Shapes:
        return {k: v for layer in self.layers for k, v in layer.shapes().items()}

    def __call__(self: Self, x: Tensor) -> Tensor:
        layers = self.layers
        for layer in layers[:-1]:
            x = dropout(relu(layer(x)), self.dropout_p, layer=layer.name)
        return layers[-1](x)


@dataclass(slots=True, frozen=True)
class VisualEncoder:
    """
    Per-image encoder for one visual stream: 720 → hidden → 50 with a ReLU in between.
    """

    name: str
    hidden: int = 200
    n_in: int = 720
    n_out: int = 50

    @property
    def mlp(self: Self) -> Mlp:
        return Mlp(self.name, (self.n_in, self.hidden, self.n_out), 0.0)

    def shapes(self: Self) -> Shapes:
        return self.mlp.shapes()

    def __call__(self: Self, images: Tensor) -> Tensor:
        return self.mlp(images)


def n_scalars(shapes: Shapes) -> int:
    return sum(math.prod(s) for s in shapes.values())


def instantiate(shapes: Shapes, *, seed: int, dtype: DTypeLike = np.float64) -> Parameters:
    params = Parameters()
    init_params(params, shapes, seed=seed, dtype=dtype)
    return params


def graph_for(params: Parameters, *, training: bool = False, seed: int = 0, step: int = 0) -> Graph:
    return Graph(params, training=training, seed=seed, step=step, dtype=params.dtype)
