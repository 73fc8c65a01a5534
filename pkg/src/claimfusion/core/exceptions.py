# SPDX-FileCopyrightText: Copyright 2023, Contributors to claimfusion
# SPDX-PackageHomePage: https://github.com/claimfusion/claimfusion
# SPDX-License-Identifier: Apache-2.0
"""
Exceptions raised across claimfusion.
Every error carries a message plus keyword context, shown in its `repr`.
They also subclass the closest builtin, so `except ValueError` still works.
"""

from __future__ import annotations

from typing import Any as _Any
from typing import Self
from typing import Unpack as _Unpack


class Error(Exception):
    """
    Abstract exception with a message and keyword context.
    """

    def __init__(self: Self, message: str | None = None, **kwargs: _Unpack[str, _Any]) -> None:
        self.message = message
        self.context = dict(kwargs)
        super().__init__(message, *kwargs.values())

    def __str__(self: Self) -> str:
        return repr(self)

    def __repr__(self: Self) -> str:
        extras = ", ".join(f"{k}={v!r}" for k, v in self.context.items() if v is not None)
        return self.__class__.__qualname__ + "{" + repr(self.message) + (", " + extras if extras else "") + "}"


#
# "Value" errors
#


class ValueIllegalError(Error, ValueError):
    """A high-level error about an invalid value."""

    def __init__(
        self: Self,
        message: str | None = None,
        *,
        value: _Any = None,
        **kwargs: _Unpack[str, _Any],
    ) -> None:
        super().__init__(message, value=value, **kwargs)
        self.value = value


class ValueOutOfRangeError(ValueIllegalError):
    """A numerical value is outside a required range."""

    def __init__(
        self: Self,
        message: str | None = None,
        *,
        value: _Any = None,
        minimum: _Any = None,
        maximum: _Any = None,
        **kwargs: _Unpack[str, _Any],
    ) -> None:
        super().__init__(message, value=value, minimum=minimum, maximum=maximum, **kwargs)
        self.minimum = minimum
        self.maximum = maximum


class DimensionError(ValueIllegalError):
    """
    Tensor shapes do not conform.

    Attributes:
        shapes: Every shape involved, in argument order
    """

    def __init__(
        self: Self,
        message: str | None = None,
        *,
        shapes: tuple[tuple[int, ...], ...] | None = None,
        **kwargs: _Unpack[str, _Any],
    ) -> None:
        super().__init__(message, shapes=shapes, **kwargs)
        self.shapes = shapes


class NonFiniteError(ValueIllegalError):
    """A NaN or Inf reached an op boundary."""

    def __init__(
        self: Self,
        message: str | None = None,
        *,
        op: str | None = None,
        **kwargs: _Unpack[str, _Any],
    ) -> None:
        super().__init__(message, op=op, **kwargs)
        self.op = op


class ConfigInvalidError(ValueIllegalError):
    """A config object or file has an invalid combination of values."""

    def __init__(
        self: Self,
        message: str | None = None,
        *,
        key: str | None = None,
        **kwargs: _Unpack[str, _Any],
    ) -> None:
        super().__init__(message, key=key, **kwargs)
        self.key = key


#
# Data errors
#


class AvailabilityError(Error, KeyError):
    """A claim lacks a modality that the model requires."""

    def __init__(
        self: Self,
        message: str | None = None,
        *,
        modality: str | None = None,
        claim_id: str | None = None,
        **kwargs: _Unpack[str, _Any],
    ) -> None:
        super().__init__(message, modality=modality, claim_id=claim_id, **kwargs)
        self.modality = modality
        self.claim_id = claim_id

    def __str__(self: Self) -> str:
        return repr(self)


class UndefinedMetricError(Error, ValueError):
    """A metric has no defined value for the data (e.g. no positives)."""


class DataFormatError(Error, ValueError):
    """
    A claim file is malformed.

    Attributes:
        line: 1-based line number in the file
        field: Dotted path to the offending field, such as `images.2.cds`
    """

    def __init__(
        self: Self,
        message: str | None = None,
        *,
        line: int | None = None,
        field: str | None = None,
        **kwargs: _Unpack[str, _Any],
    ) -> None:
        super().__init__(message, line=line, field=field, **kwargs)
        self.line = line
        self.field = field


class VectorLengthError(DataFormatError):
    """A vector field has the wrong length."""

    def __init__(
        self: Self,
        message: str | None = None,
        *,
        line: int | None = None,
        field: str | None = None,
        expected: int | None = None,
        actual: int | None = None,
        **kwargs: _Unpack[str, _Any],
    ) -> None:
        super().__init__(message, line=line, field=field, expected=expected, actual=actual, **kwargs)
        self.expected = expected
        self.actual = actual


#
# Checkpoint errors
#


class CheckpointError(Error, ValueError):
    """A checkpoint file could not be read."""

    def __init__(
        self: Self,
        message: str | None = None,
        *,
        filename: str | None = None,
        **kwargs: _Unpack[str, _Any],
    ) -> None:
        super().__init__(message, filename=filename, **kwargs)
        self.filename = filename


class CheckpointMagicError(CheckpointError):
    """The file does not start with the checkpoint magic bytes."""


class CheckpointVersionError(CheckpointError):
    """The checkpoint format version is not supported."""


class CheckpointTruncatedError(CheckpointError):
    """The file ends before the manifest says it should."""


class CheckpointShapeError(CheckpointError):
    """A stored array disagrees with the shape the model config implies."""


class ConfigMismatchError(Error, ValueError):
    """A checkpoint or cached result belongs to a different model config."""

    def __init__(
        self: Self,
        message: str | None = None,
        *,
        expected: str | None = None,
        actual: str | None = None,
        **kwargs: _Unpack[str, _Any],
    ) -> None:
        super().__init__(message, expected=expected, actual=actual, **kwargs)
        self.expected = expected
        self.actual = actual


#
# Numeric failures
#


class NumericFailureError(Error, ArithmeticError):
    """
    Training produced a non-finite loss or gradient.

    Attributes:
        step: Optimizer step at which it happened
        parameter: Name of the first offending parameter, if any
    """

    def __init__(
        self: Self,
        message: str | None = None,
        *,
        step: int | None = None,
        parameter: str | None = None,
        **kwargs: _Unpack[str, _Any],
    ) -> None:
        super().__init__(message, step=step, parameter=parameter, **kwargs)
        self.step = step
        self.parameter = parameter


#
# Path errors
#


class PathExistsError(Error, FileExistsError):
    """An output file already exists and overwriting was not allowed."""

    def __init__(
        self: Self,
        message: str | None = None,
        *,
        filename: str | None = None,
        **kwargs: _Unpack[str, _Any],
    ) -> None:
        super().__init__(message, filename=filename, **kwargs)
        self.filename = filename


__all__ = [
    "Error",
    "ValueIllegalError",
    "ValueOutOfRangeError",
    "DimensionError",
    "NonFiniteError",
    "ConfigInvalidError",
    "AvailabilityError",
    "UndefinedMetricError",
    "DataFormatError",
    "VectorLengthError",
    "CheckpointError",
    "CheckpointMagicError",
    "CheckpointVersionError",
    "CheckpointTruncatedError",
    "CheckpointShapeError",
    "ConfigMismatchError",
    "NumericFailureError",
    "PathExistsError",
]
