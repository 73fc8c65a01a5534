# SPDX-FileCopyrightText: Copyright 2023, Contributors to claimfusion
# SPDX-PackageHomePage: https://github.com/claimfusion/claimfusion
# SPDX-License-Identifier: Apache-2.0
"""
Iterators that know their length and position, for mini-batch streams and experiment grids.
"""

import abc
import itertools
from collections.abc import Iterable, Iterator, Sequence
from typing import Self, TypeVar

T_co = TypeVar("T_co", covariant=True)
IX = TypeVar("IX")


class SizedIterator(Iterator[T_co], metaclass=abc.ABCMeta):
    """
    An iterator with size and progress.
    """

    def __len__(self: Self) -> int:
        return self.total

    def __str__(self: Self) -> str:
        return repr(self)

    def __repr__(self: Self) -> str:
        return f"{self.__class__.__name__}({self.position}/{self.total})"

    @property
    @abc.abstractmethod
    def position(self: Self) -> int:
        raise NotImplementedError()

    @property
    @abc.abstractmethod
    def total(self: Self) -> int:
        raise NotImplementedError()

    @property
    def remaining(self: Self) -> int:
        return self.total - self.position

    @property
    def has_next(self: Self) -> bool:
        return self.position < self.total


class SeqIterator(SizedIterator[T_co]):
    """
    A SizedIterator backed by a list.
    """

    def __init__(self: Self, it: Iterable[T_co]) -> None:
        self._seq, self._i = list(it), 0

    def __next__(self: Self) -> T_co:
        if self._i >= len(self._seq):
            raise StopIteration
        value = self._seq[self._i]
        self._i += 1
        return value

    @property
    def seq(self: Self) -> Sequence[T_co]:
        return self._seq

    @property
    def position(self: Self) -> int:
        return self._i

    @property
    def total(self: Self) -> int:
        return len(self._seq)

    def reset(self: Self) -> None:
        self._i = 0

    def peek(self: Self) -> T_co:
        return self._seq[self._i]


class GridIterator(SeqIterator[tuple[IX, ...]]):
    """
    Every combination of one value per axis, with the last axis varying fastest.

    Example:

        >>> it = GridIterator({"pair": ["a", "b"], "kind": [1, 2]})
        >>> list(it)
        [('a', 1), ('a', 2), ('b', 1), ('b', 2)]
    """

    def __init__(self: Self, axes: dict[str, Sequence[IX]]) -> None:
        self._axes = {k: list(v) for k, v in axes.items()}
        cells = itertools.product(*self._axes.values()) if self._axes else []
        super().__init__(cells)

    @property
    def axes(self: Self) -> dict[str, list[IX]]:
        return self._axes

    def named(self: Self, cell: tuple[IX, ...]) -> dict[str, IX]:
        return dict(zip(self._axes, cell, strict=True))


__all__ = ["SizedIterator", "SeqIterator", "GridIterator"]
