# License: MIT
# Copyright © 2024 Frequenz Energy-as-a-Service GmbH

"""Exceptions raised by the MPF library."""


class MpfError(Exception):
    """Base class for all errors raised on purpose by this package."""


class DimensionMismatchError(MpfError, ValueError):
    """A state, parameter vector or dataset has the wrong dimension."""


class EnumerationLimitError(MpfError, ValueError):
    """An exact (brute-force) computation was requested beyond its size gate."""


class NonFiniteError(MpfError, FloatingPointError):
    """A non-finite energy or gradient was encountered."""


class SupportError(MpfError, ValueError):
    """Probabilities or connection weights violate a support requirement."""


class ValidationError(MpfError, ValueError):
    """A configuration, file or command line input is invalid."""


class SchemaError(ValidationError):
    """A serialized document does not match its declared schema."""
