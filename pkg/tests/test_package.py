# License: MIT
# Copyright © 2024 Frequenz Energy-as-a-Service GmbH

"""Tests for the frequenz.mpf package."""

import pytest

from frequenz.mpf import (
    DimensionMismatchError,
    EnumerationLimitError,
    MpfError,
    NonFiniteError,
    SchemaError,
    SupportError,
    ValidationError,
)


def test_package_import() -> None:
    """Test that the package can be imported."""
    # pylint: disable=import-outside-toplevel
    from frequenz import mpf

    assert mpf is not None
    assert all(hasattr(mpf, name) for name in mpf.__all__)


def test_module_import_components() -> None:
    """Test that the command line can be imported."""
    # pylint: disable=import-outside-toplevel
    from frequenz.mpf import _cli

    assert callable(_cli.main)


@pytest.mark.parametrize(
    "error, builtin",
    [
        (DimensionMismatchError, ValueError),
        (EnumerationLimitError, ValueError),
        (NonFiniteError, FloatingPointError),
        (SupportError, ValueError),
        (ValidationError, ValueError),
        (SchemaError, ValidationError),
    ],
)
def test_exception_hierarchy(error: type[MpfError], builtin: type[Exception]) -> None:
    """Test that every error is an `MpfError` and the matching builtin.

    Args:
        error: The package error.
        builtin: The builtin it also derives from.
    """
    assert issubclass(error, MpfError)
    assert issubclass(error, builtin)
