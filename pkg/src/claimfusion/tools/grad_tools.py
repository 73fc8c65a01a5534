# SPDX-FileCopyrightText: Copyright 2023, Contributors to claimfusion
# SPDX-PackageHomePage: https://github.com/claimfusion/claimfusion
# SPDX-License-Identifier: Apache-2.0
"""
Finite-difference gradient checks against [`backward`](claimfusion.core.tensor.backward).
"""

import logging
from collections.abc import Callable
from dataclasses import dataclass
from typing import Self

import numpy as np
from numpy.typing import NDArray

from claimfusion.core.exceptions import ValueIllegalError
from claimfusion.core.tensor import Graph, Parameters, Tensor, backward

__all__ = ["GradCheck", "GradUtils", "GradTools"]

logger = logging.getLogger("claimfusion")


@dataclass(slots=True, frozen=True)
class GradCheck:
    """
    Outcome of a gradient check.

    Attributes:
        max_rel_error: Largest `|analytic − numeric| / max(1, |numeric|)` over checked entries
        worst: `(parameter, flat index)` where it occurred
        n_checked: Number of entries compared
    """

    max_rel_error: float
    worst: tuple[str, int] | None
    n_checked: int

    def passed(self: Self, tol: float = 1e-4) -> bool:
        return self.max_rel_error <= tol


@dataclass(slots=True, frozen=True)
class GradUtils:
    def relative_error(self: Self, analytic: NDArray, numeric: NDArray) -> NDArray[np.float64]:
        a = np.asarray(analytic, dtype=np.float64)
        n = np.asarray(numeric, dtype=np.float64)
        return np.abs(a - n) / np.maximum(1.0, np.abs(n))

    def check_gradients(
        self: Self,
        fn: Callable[[Graph], Tensor],
        params: Parameters,
        *,
        h: float = 1e-5,
        max_entries: int = 64,
        seed: int = 0,
        training: bool = False,
        step: int = 0,
    ) -> GradCheck:
        """
        Compares analytic gradients with central differences.

        Args:
            fn: Builds a scalar loss on the graph it receives
            params: Float64 parameters; perturbed in place and restored
            h: Step size
            max_entries: Entries per parameter to check (a random subset above this)
            seed: Seed for the graph (dropout streams) and for entry sampling
            training: Passed to the graph, so dropout masks are part of the check
            step: Passed to the graph

        Returns:
            The worst relative error
        """
        for name, arr in params.items():
            if arr.dtype != np.float64:
                msg = f"Gradient checks need float64 parameters; {name} is {arr.dtype}"
                raise ValueIllegalError(msg, value=str(arr.dtype))

        def _loss() -> float:
            g = Graph(params, training=training, seed=seed, step=step)
            return float(fn(g).value)

        g = Graph(params, training=training, seed=seed, step=step)
        analytic = backward(g, fn(g))
        rng = np.random.default_rng(seed)
        worst, worst_at, n_checked = 0.0, None, 0
        for name in params.trainable_names:
            arr = params[name]
            flat = arr.reshape(-1)
            if flat.size <= max_entries:
                indices = np.arange(flat.size)
            else:
                indices = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
            for i in indices:
                original = flat[i]
                flat[i] = original + h
                up = _loss()
                flat[i] = original - h
                down = _loss()
                flat[i] = original
                numeric = (up - down) / (2 * h)
                err = float(self.relative_error(analytic[name].reshape(-1)[i], numeric))
                n_checked += 1
                if err > worst or worst_at is None:
                    worst, worst_at = err, (name, int(i))
        logger.debug(f"Gradient check: max relative error {worst:.3g} over {n_checked} entries at {worst_at}")
        return GradCheck(worst, worst_at, n_checked)


GradTools = GradUtils()
