# SPDX-FileCopyrightText: Copyright 2023, Contributors to claimfusion
# SPDX-PackageHomePage: https://github.com/claimfusion/claimfusion
# SPDX-License-Identifier: Apache-2.0
"""
Dense numpy tensors with a recorded graph and reverse-mode differentiation.

Every op accepts a single vector of shape `(d,)` or a batch of shape `(B, d)`;
the leading axis is the batch axis and is never broadcast.
Ops validate shapes up front and reject NaN/Inf in their outputs.

Example:

    params = Parameters()
    params.add("w", np.eye(2))
    g = Graph(params)
    y = affine(g.constant([3.0, -1.0]), g.param("w"))
    loss = sum_all(y)
    grads = backward(g, loss)
"""

from __future__ import annotations

import logging
import zlib
from collections.abc import Callable, Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from typing import Self

import numpy as np
from numpy.typing import ArrayLike, DTypeLike, NDArray

from claimfusion.core.exceptions import DimensionError, NonFiniteError, ValueIllegalError, ValueOutOfRangeError

__all__ = [
    "Tensor",
    "Parameters",
    "Graph",
    "backward",
    "affine",
    "chunked_linear",
    "hadamard",
    "add",
    "scale",
    "chunk_sum_pool",
    "signed_sqrt",
    "l2_normalize",
    "relu",
    "tanh",
    "dropout",
    "concat",
    "segment_mean",
    "trilinear",
    "softmax",
    "softmax_cross_entropy",
    "sum_all",
]

logger = logging.getLogger("claimfusion")

SIGNED_SQRT_CAP = 1e6

_Backward = Callable[[NDArray[np.float64]], Sequence[NDArray[np.float64] | None]]


@dataclass(slots=True, frozen=True, eq=False)
class Tensor:
    """
    A value recorded on a [`Graph`](claimfusion.core.tensor.Graph).

    Attributes:
        value: The (read-only) numpy array
        graph: The graph that owns this tensor
        index: Position in the graph's topological order
        op: Name of the op that produced it (`param` and `const` for leaves)
    """

    value: NDArray
    graph: Graph
    index: int
    op: str

    @property
    def shape(self: Self) -> tuple[int, ...]:
        return self.value.shape

    @property
    def batched(self: Self) -> bool:
        return self.value.ndim == 2

    def __len__(self: Self) -> int:
        return self.value.shape[0]

    def __repr__(self: Self) -> str:
        return f"Tensor({self.op}, shape={self.shape}, index={self.index})"


@dataclass(slots=True)
class Parameters:
    """
    An ordered registry of named numpy arrays, each flagged trainable or frozen.
    """

    arrays: dict[str, NDArray] = field(default_factory=dict)
    frozen: set[str] = field(default_factory=set)

    def add(self: Self, name: str, array: ArrayLike, *, trainable: bool = True) -> NDArray:
        if name in self.arrays:
            msg = f"Parameter {name} is already registered"
            raise ValueIllegalError(msg, value=name)
        arr = np.array(array, copy=True)
        self.arrays[name] = arr
        if not trainable:
            self.frozen.add(name)
        return arr

    def __getitem__(self: Self, name: str) -> NDArray:
        try:
            return self.arrays[name]
        except KeyError:
            msg = f"No parameter named {name}"
            raise ValueIllegalError(msg, value=name) from None

    def __contains__(self: Self, name: str) -> bool:
        return name in self.arrays

    def __iter__(self: Self) -> Iterator[str]:
        return iter(self.arrays)

    def __len__(self: Self) -> int:
        return len(self.arrays)

    def items(self: Self) -> Iterator[tuple[str, NDArray]]:
        yield from self.arrays.items()

    def is_trainable(self: Self, name: str) -> bool:
        return name not in self.frozen

    @property
    def trainable_names(self: Self) -> list[str]:
        return [n for n in self.arrays if n not in self.frozen]

    @property
    def n_scalars(self: Self) -> int:
        """Number of trainable scalars."""
        return sum(int(self.arrays[n].size) for n in self.trainable_names)

    @property
    def dtype(self: Self) -> np.dtype:
        if len(self.arrays) == 0:
            return np.dtype(np.float64)
        return next(iter(self.arrays.values())).dtype

    def astype(self: Self, dtype: DTypeLike) -> Parameters:
        return Parameters({k: v.astype(dtype, copy=True) for k, v in self.arrays.items()}, set(self.frozen))

    def copy(self: Self) -> Parameters:
        return self.astype(self.dtype)

    def snapshot(self: Self) -> dict[str, NDArray]:
        return {k: v.copy() for k, v in self.arrays.items()}

    def assign(self: Self, values: Mapping[str, NDArray]) -> None:
        """
        Overwrites arrays in place.

        Raises:
            DimensionError: If a shape differs from the registered one
        """
        for name, value in values.items():
            target = self[name]
            if target.shape != np.shape(value):
                msg = f"Cannot assign {name}: shape {np.shape(value)} != {target.shape}"
                raise DimensionError(msg, shapes=(target.shape, np.shape(value)))
            target[...] = value


@dataclass(slots=True, frozen=True)
class _Node:
    inputs: tuple[int, ...]
    backward: _Backward | None
    param: str | None
    requires_grad: bool


@dataclass(slots=True)
class Graph:
    """
    Records ops in topological order for one forward pass.

    Attributes:
        params: Registry that [`param`](claimfusion.core.tensor.Graph.param) reads from
        training: Whether dropout is active
        seed: Run seed; together with `step` and a layer name it keys every dropout stream
        step: Optimizer step (or any counter) for dropout streams
        dtype: Dtype for constants
    """

    params: Parameters = field(default_factory=Parameters)
    training: bool = False
    seed: int = 0
    step: int = 0
    dtype: DTypeLike = np.float64
    _nodes: list[_Node] = field(default_factory=list)
    _values: list[NDArray] = field(default_factory=list)

    def __len__(self: Self) -> int:
        return len(self._nodes)

    def param(self: Self, name: str) -> Tensor:
        array = self.params[name].view()
        array.flags.writeable = False
        _check_finite("param", array)
        return self._push(array, "param", (), None, param=name, requires_grad=self.params.is_trainable(name))

    def constant(self: Self, array: ArrayLike) -> Tensor:
        value = np.array(array, dtype=self.dtype, copy=True)
        value.flags.writeable = False
        _check_finite("const", value)
        return self._push(value, "const", (), None, param=None, requires_grad=False)

    def record(
        self: Self,
        op: str,
        value: NDArray,
        inputs: Sequence[Tensor],
        backward_fn: _Backward,
    ) -> Tensor:
        """
        Appends the result of an op; `backward_fn` maps the output gradient to one gradient per input.
        """
        for t in inputs:
            if t.graph is not self:
                msg = f"{op}: input {t} belongs to another graph"
                raise ValueIllegalError(msg, value=t.index)
        _check_finite(op, value)
        value.flags.writeable = False
        requires = any(self._nodes[t.index].requires_grad for t in inputs)
        return self._push(value, op, tuple(t.index for t in inputs), backward_fn, param=None, requires_grad=requires)

    def rng(self: Self, layer: str) -> np.random.Generator:
        """
        A counter-based generator keyed by (seed, layer, step).
        The stream does not depend on how many other draws happened before it.
        """
        key = np.random.SeedSequence([self.seed, zlib.crc32(layer.encode("utf-8")), self.step])
        return np.random.Generator(np.random.Philox(key))

    def _push(
        self: Self,
        value: NDArray,
        op: str,
        inputs: tuple[int, ...],
        backward_fn: _Backward | None,
        *,
        param: str | None,
        requires_grad: bool,
    ) -> Tensor:
        self._nodes.append(_Node(inputs, backward_fn, param, requires_grad))
        self._values.append(value)
        return Tensor(value, self, len(self._nodes) - 1, op)


def backward(g: Graph, loss: Tensor) -> dict[str, NDArray]:
    """
    Reverse-mode accumulation from a scalar loss.

    Returns:
        A gradient for every trainable parameter in `g.params`, in registry order,
        with the parameter's shape and dtype.
        Parameters that the loss does not depend on get zeros.

    Raises:
        DimensionError: If `loss` is not a scalar
    """
    if loss.graph is not g:
        msg = "Loss was not recorded on this graph"
        raise ValueIllegalError(msg)
    if loss.value.shape != ():
        msg = f"Loss must be a scalar, not shape {loss.value.shape}"
        raise DimensionError(msg, shapes=(loss.value.shape,))
    grads: dict[int, NDArray[np.float64]] = {loss.index: np.ones((), dtype=np.float64)}
    param_grads: dict[str, NDArray[np.float64]] = {}
    for i in range(loss.index, -1, -1):
        gi = grads.pop(i, None)
        if gi is None:
            continue
        node = g._nodes[i]
        if node.param is not None:
            if node.param in param_grads:
                param_grads[node.param] = param_grads[node.param] + gi
            else:
                param_grads[node.param] = gi
            continue
        if node.backward is None:
            continue
        for j, gj in zip(node.inputs, node.backward(gi), strict=True):
            if gj is None or not g._nodes[j].requires_grad:
                continue
            grads[j] = grads[j] + gj if j in grads else np.asarray(gj, dtype=np.float64)
    out = {}
    for name in g.params.trainable_names:
        target = g.params[name]
        acc = param_grads.get(name)
        out[name] = np.zeros_like(target) if acc is None else acc.astype(target.dtype, copy=False)
    return out


def _check_finite(op: str, *arrays: NDArray) -> None:
    for a in arrays:
        if not np.all(np.isfinite(a)):
            msg = f"{op}: non-finite value"
            raise NonFiniteError(msg, op=op)


def _graph_of(*tensors: Tensor) -> Graph:
    return tensors[0].graph


def _f64(a: NDArray) -> NDArray[np.float64]:
    return np.asarray(a, dtype=np.float64)


def _require_vector_or_batch(op: str, x: Tensor) -> None:
    if x.value.ndim not in (1, 2):
        msg = f"{op}: expected shape (d,) or (B, d), got {x.shape}"
        raise DimensionError(msg, shapes=(x.shape,))


def _require_same_shape(op: str, a: Tensor, b: Tensor) -> None:
    if a.shape != b.shape:
        msg = f"{op}: shapes {a.shape} and {b.shape} differ"
        raise DimensionError(msg, shapes=(a.shape, b.shape))


def affine(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """
    Computes `w·x + b` (or `w·x` if `b` is `None`), rowwise for a batch.
    """
    _require_vector_or_batch("affine", x)
    if w.value.ndim != 2 or w.shape[1] != x.shape[-1]:
        msg = f"affine: weight {w.shape} does not conform to input {x.shape}"
        raise DimensionError(msg, shapes=(x.shape, w.shape))
    if b is not None and b.shape != (w.shape[0],):
        msg = f"affine: bias {b.shape} does not conform to weight {w.shape}"
        raise DimensionError(msg, shapes=(w.shape, b.shape))
    y = x.value @ w.value.T
    if b is not None:
        y = y + b.value
    xv, wv = x.value, w.value

    def _back(gy: NDArray) -> list[NDArray]:
        g2 = gy.reshape(-1, gy.shape[-1])
        x2 = _f64(xv).reshape(-1, xv.shape[-1])
        gx = (g2 @ _f64(wv)).reshape(xv.shape)
        gw = g2.T @ x2
        return [gx, gw] if b is None else [gx, gw, g2.sum(axis=0)]

    inputs = [x, w] if b is None else [x, w, b]
    return _graph_of(x).record("affine", y, inputs, _back)


def chunked_linear(x: Tensor, w: Tensor) -> Tensor:
    """
    A block-diagonal linear map without bias.
    `w` has shape `(C, o, i)`; the input is read as `C` consecutive chunks of width `i`
    and the output is `C` consecutive chunks of width `o`.
    """
    _require_vector_or_batch("chunked_linear", x)
    if w.value.ndim != 3 or w.shape[0] * w.shape[2] != x.shape[-1]:
        msg = f"chunked_linear: weight {w.shape} does not conform to input {x.shape}"
        raise DimensionError(msg, shapes=(x.shape, w.shape))
    n_chunks, out_w, in_w = w.shape
    xv, wv = x.value, w.value
    x3 = xv.reshape(-1, n_chunks, in_w)
    y = np.einsum("bci,coi->bco", x3, wv).reshape((*xv.shape[:-1], n_chunks * out_w))

    def _back(gy: NDArray) -> list[NDArray]:
        g3 = gy.reshape(-1, n_chunks, out_w)
        gx = np.einsum("bco,coi->bci", g3, _f64(wv)).reshape(xv.shape)
        gw = np.einsum("bco,bci->coi", g3, _f64(x3))
        return [gx, gw]

    return _graph_of(x).record("chunked_linear", y, [x, w], _back)


def hadamard(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("hadamard", a, b)
    av, bv = a.value, b.value
    return _graph_of(a).record("hadamard", av * bv, [a, b], lambda gy: [gy * bv, gy * av])


def add(a: Tensor, b: Tensor) -> Tensor:
    _require_same_shape("add", a, b)
    return _graph_of(a).record("add", a.value + b.value, [a, b], lambda gy: [gy, gy])


def scale(x: Tensor, c: float) -> Tensor:
    """Multiplies by a constant."""
    return _graph_of(x).record("scale", x.value * c, [x], lambda gy: [gy * c])


def chunk_sum_pool(x: Tensor, k: int) -> Tensor:
    """
    Sums consecutive groups of `k`: `out[j] = x[j*k] + ... + x[j*k + k - 1]`.
    """
    _require_vector_or_batch("chunk_sum_pool", x)
    if k < 1 or x.shape[-1] % k != 0:
        msg = f"chunk_sum_pool: length {x.shape[-1]} is not divisible by {k}"
        raise DimensionError(msg, shapes=(x.shape,), value=k)
    xv = x.value
    y = xv.reshape((*xv.shape[:-1], xv.shape[-1] // k, k)).sum(axis=-1)
    return _graph_of(x).record("chunk_sum_pool", y, [x], lambda gy: [np.repeat(gy, k, axis=-1)])


def signed_sqrt(x: Tensor, cap: float = SIGNED_SQRT_CAP) -> Tensor:
    """
    `sign(x)·sqrt(|x|)`.
    The derivative `1/(2·sqrt|x|)` is capped at `cap` and is 0 at exactly 0.
    """
    xv = x.value
    root = np.sqrt(np.abs(xv))
    y = np.sign(xv) * root

    def _back(gy: NDArray) -> list[NDArray]:
        r = _f64(root)
        d = np.where(r > 0, 0.5 / np.where(r > 0, r, 1.0), 0.0)
        return [gy * np.minimum(d, cap)]

    return _graph_of(x).record("signed_sqrt", y, [x], _back)


def l2_normalize(x: Tensor, eps: float = 1e-12) -> Tensor:
    """
    `x / max(‖x‖₂, eps)`, rowwise for a batch.
    """
    _require_vector_or_batch("l2_normalize", x)
    xv = x.value
    norm = np.linalg.norm(_f64(xv), axis=-1, keepdims=True)
    denom = np.maximum(norm, eps)
    y = (xv / denom).astype(xv.dtype, copy=False)

    def _back(gy: NDArray) -> list[NDArray]:
        yv = _f64(xv) / denom
        inside = norm > eps
        proj = gy - yv * np.sum(yv * gy, axis=-1, keepdims=True)
        return [np.where(inside, proj, gy) / denom]

    return _graph_of(x).record("l2_normalize", y, [x], _back)


def relu(x: Tensor) -> Tensor:
    xv = x.value
    return _graph_of(x).record("relu", np.maximum(xv, 0), [x], lambda gy: [gy * (xv > 0)])


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.value)
    return _graph_of(x).record("tanh", y, [x], lambda gy: [gy * (1.0 - _f64(y) ** 2)])


def dropout(x: Tensor, p: float, *, layer: str, training: bool | None = None) -> Tensor:
    """
    Inverted dropout: zeroes each element with probability `p` and scales survivors by `1/(1-p)`.

    Args:
        x: Input
        p: Drop probability in `[0, 1)`
        layer: Stable layer name; keys the random stream together with the graph's seed and step
        training: Overrides the graph's training flag
    """
    if not 0 <= p < 1:
        msg = f"Dropout probability {p} is not in [0, 1)"
        raise ValueOutOfRangeError(msg, value=p, minimum=0, maximum=1)
    g = _graph_of(x)
    active = g.training if training is None else training
    if not active or p == 0:
        return x
    keep = g.rng(layer).random(x.shape) >= p
    mask = keep.astype(x.value.dtype) / (1.0 - p)
    return g.record("dropout", x.value * mask, [x], lambda gy: [gy * mask])


def concat(tensors: Sequence[Tensor]) -> Tensor:
    """Concatenates along the feature (last) axis."""
    if len(tensors) == 0:
        msg = "Nothing to concatenate"
        raise DimensionError(msg, shapes=())
    for t in tensors:
        _require_vector_or_batch("concat", t)
    lead = {t.shape[:-1] for t in tensors}
    if len(lead) != 1:
        msg = f"concat: batch shapes differ: {[t.shape for t in tensors]}"
        raise DimensionError(msg, shapes=tuple(t.shape for t in tensors))
    widths = [t.shape[-1] for t in tensors]
    cuts = np.cumsum(widths)[:-1]
    y = np.concatenate([t.value for t in tensors], axis=-1)
    return _graph_of(*tensors).record("concat", y, tensors, lambda gy: np.split(gy, cuts, axis=-1))


def segment_mean(x: Tensor, segments: ArrayLike | None = None, n_segments: int | None = None) -> Tensor:
    """
    Averages rows of `x` (shape `(N, d)`).

    Args:
        x: Rows to average
        segments: Segment id per row; if `None`, all rows form one segment and the output is `(d,)`
        n_segments: Number of segments (default: max id + 1); every segment must be non-empty
    """
    if x.value.ndim != 2 or x.shape[0] == 0:
        msg = f"segment_mean: expected a non-empty (N, d) input, got {x.shape}"
        raise DimensionError(msg, shapes=(x.shape,))
    xv = x.value
    if segments is None:
        n = xv.shape[0]
        return _graph_of(x).record(
            "segment_mean",
            xv.mean(axis=0),
            [x],
            lambda gy: [np.broadcast_to(gy / n, (n, gy.shape[-1])).copy()],
        )
    seg = np.asarray(segments, dtype=np.int64)
    if seg.shape != (xv.shape[0],):
        msg = f"segment_mean: {seg.shape[0]} segment ids for {xv.shape[0]} rows"
        raise DimensionError(msg, shapes=(x.shape, seg.shape))
    n_seg = int(seg.max()) + 1 if n_segments is None else n_segments
    counts = np.bincount(seg, minlength=n_seg)
    if len(counts) != n_seg or np.any(counts == 0):
        msg = f"segment_mean: every one of {n_seg} segments needs at least one row"
        raise DimensionError(msg, shapes=(x.shape,), value=counts.tolist())
    sums = np.zeros((n_seg, xv.shape[1]), dtype=np.float64)
    np.add.at(sums, seg, xv)
    y = (sums / counts[:, None]).astype(xv.dtype, copy=False)
    return _graph_of(x).record("segment_mean", y, [x], lambda gy: [gy[seg] / counts[seg][:, None]])


def trilinear(x1: Tensor, x2: Tensor, core: Tensor) -> Tensor:
    """
    Contracts two inputs with a 3-way core: `out[k] = Σ_ij x1[i]·x2[j]·core[i, j, k]`.

    A core of shape `(C, i, j, k)` applies chunkwise:
    the inputs are read as `C` chunks of widths `i` and `j`, and chunk outputs are concatenated.
    """
    _require_vector_or_batch("trilinear", x1)
    _require_vector_or_batch("trilinear", x2)
    cv = core.value
    if cv.ndim == 3:
        cv = cv[None]
    if (
        cv.ndim != 4
        or x1.shape[:-1] != x2.shape[:-1]
        or x1.shape[-1] != cv.shape[0] * cv.shape[1]
        or x2.shape[-1] != cv.shape[0] * cv.shape[2]
    ):
        msg = f"trilinear: core {core.shape} does not conform to inputs {x1.shape} and {x2.shape}"
        raise DimensionError(msg, shapes=(x1.shape, x2.shape, core.shape))
    n_chunks, di, dj, dk = cv.shape
    a = x1.value.reshape(-1, n_chunks, di)
    b = x2.value.reshape(-1, n_chunks, dj)
    y = np.einsum("bci,bcj,cijk->bck", a, b, cv, optimize=True)
    y = y.reshape((*x1.shape[:-1], n_chunks * dk))
    core_shape = core.shape

    def _back(gy: NDArray) -> list[NDArray]:
        g3 = gy.reshape(-1, n_chunks, dk)
        a64, b64, c64 = _f64(a), _f64(b), _f64(cv)
        ga = np.einsum("bcj,cijk,bck->bci", b64, c64, g3, optimize=True).reshape(x1.shape)
        gb = np.einsum("bci,cijk,bck->bcj", a64, c64, g3, optimize=True).reshape(x2.shape)
        gc = np.einsum("bci,bcj,bck->cijk", a64, b64, g3, optimize=True).reshape(core_shape)
        return [ga, gb, gc]

    return _graph_of(x1).record("trilinear", y, [x1, x2, core], _back)


def softmax(logits: NDArray) -> NDArray[np.float64]:
    """Row-wise softmax of a plain array, with max-subtraction."""
    z = _f64(logits)
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_cross_entropy(logits: Tensor, labels: ArrayLike) -> Tensor:
    """
    Mean of `−log softmax(logits)[label]` over the batch, as a scalar tensor.
    A single `(n,)` logit vector takes a single integer label.
    """
    _require_vector_or_batch("softmax_cross_entropy", logits)
    lv = _f64(logits.value)
    y = np.asarray(labels, dtype=np.int64)
    batched = lv.ndim == 2
    l2 = lv if batched else lv[None]
    y1 = y.reshape(-1)
    n, n_classes = l2.shape
    if y1.shape != (n,):
        msg = f"softmax_cross_entropy: {y1.size} labels for {n} rows"
        raise DimensionError(msg, shapes=(logits.shape, y.shape))
    if np.any((y1 < 0) | (y1 >= n_classes)):
        msg = f"softmax_cross_entropy: labels must be in [0, {n_classes})"
        raise ValueOutOfRangeError(msg, value=y1.tolist(), minimum=0, maximum=n_classes - 1)
    z = l2 - l2.max(axis=-1, keepdims=True)
    log_norm = np.log(np.exp(z).sum(axis=-1))
    nll = log_norm - z[np.arange(n), y1]
    loss = np.asarray(nll.mean())

    def _back(gy: NDArray) -> list[NDArray]:
        grad = softmax(l2)
        grad[np.arange(n), y1] -= 1.0
        grad *= gy / n
        return [grad if batched else grad[0]]

    return _graph_of(logits).record("softmax_cross_entropy", loss, [logits], _back)


def sum_all(x: Tensor) -> Tensor:
    xv = x.value
    return _graph_of(x).record(
        "sum_all",
        np.asarray(_f64(xv).sum()),
        [x],
        lambda gy: [np.broadcast_to(gy, xv.shape).astype(np.float64)],
    )
