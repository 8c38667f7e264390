# License: MIT
# Copyright © 2024 Frequenz Energy-as-a-Service GmbH

"""Fit reports and their JSON form."""

from __future__ import annotations  # required for constructor type hinting

import dataclasses
import enum
import importlib.metadata
import logging
import os
import platform
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from ._exceptions import SchemaError
from ._io import REPORT_SCHEMA, JsonDocument, read_json, write_json

PACKAGE_LOGGER = "frequenz.mpf"
DISTRIBUTION = "frequenz-mpf"


def jsonable(value: typing.Any) -> typing.Any:
    """Convert configuration values to plain JSON types.

    Dataclasses become objects, enums their values, paths strings and numpy
    scalars and arrays Python numbers and lists.

    Args:
        value: The value to convert.

    Returns:
        A value `json.dumps` accepts.
    """
    if dataclasses.is_dataclass(value) and not isinstance(value, type):
        return {
            item.name: jsonable(getattr(value, item.name))
            for item in dataclasses.fields(value)
            if item.init
        }
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, (Path, os.PathLike)):
        return os.fspath(value)
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, dict):
        return {str(key): jsonable(item) for key, item in value.items()}
    if isinstance(value, (list, tuple)):
        return [jsonable(item) for item in value]
    return value


def versions() -> dict[str, str]:
    """Collect the versions of the package and its numeric stack.

    Returns:
        Version strings keyed by distribution name.
    """
    try:
        own = importlib.metadata.version(DISTRIBUTION)
    except importlib.metadata.PackageNotFoundError:
        own = "unknown"
    return {
        DISTRIBUTION: own,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


class WarningCollector(logging.Handler):
    """Collect the warnings the package logs while it is installed.

    Use as a context manager around a computation.
    """

    def __init__(self) -> None:
        """Initialize the collector."""
        super().__init__(logging.WARNING)
        self.messages: list[str] = []

    def emit(self, record: logging.LogRecord) -> None:
        """Store a formatted warning.

        Args:
            record: The log record.
        """
        self.messages.append(record.getMessage())

    def __enter__(self) -> WarningCollector:
        """Attach to the package logger.

        Returns:
            The collector.
        """
        logging.getLogger(PACKAGE_LOGGER).addHandler(self)
        return self

    def __exit__(self, *_: object) -> None:
        """Detach from the package logger."""
        logging.getLogger(PACKAGE_LOGGER).removeHandler(self)


@dataclass(frozen=True)
class TrackRow:
    """One tracked point of a fit.

    Attributes:
        elapsed_s: Wall-clock seconds since the fit started.
        objective: The estimator's objective, if it has one.
        grad_norm: Infinity norm of the objective gradient, if known.
        eps_j: Mean square parameter error against the true model.
        eps_corr: Mean square pair correlation error against the true model.
    """

    elapsed_s: float
    objective: float | None = None
    grad_norm: float | None = None
    eps_j: float | None = None
    eps_corr: float | None = None


def _optional_float(value: typing.Any) -> float | None:
    return None if value is None else float(value)


@dataclass
class FitReport:
    """The outcome of one fit.

    Attributes:
        config: The resolved experiment settings.
        estimator: The estimator name.
        parameters: The estimate, one list per parameter block.
        trace: The tracked rows, timestamps strictly increasing.
        final_metrics: Metrics of the estimate; errors against the true model
            whenever one was given.
        warnings: Warnings logged during the fit.
        status: How the estimator stopped.
        versions: Versions of the package and its numeric stack.
        seeds: Every seed the run used.
    """

    config: JsonDocument
    estimator: str
    parameters: dict[str, list[float]]
    trace: list[TrackRow] = field(default_factory=list)
    final_metrics: dict[str, float] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)
    status: str = ""
    versions: dict[str, str] = field(default_factory=versions)
    seeds: dict[str, int] = field(default_factory=dict)

    def to_json(self) -> JsonDocument:
        """Convert the report to its JSON fields.

        Returns:
            The JSON fields, without the schema envelope.
        """
        return {
            "config": self.config,
            "estimator": self.estimator,
            "parameters": self.parameters,
            "trace": [dataclasses.asdict(row) for row in self.trace],
            "final_metrics": self.final_metrics,
            "warnings": self.warnings,
            "status": self.status,
            "versions": self.versions,
            "seeds": self.seeds,
        }

    @classmethod
    def from_json(cls, document: JsonDocument) -> FitReport:
        """Rebuild a report from its JSON fields.

        Args:
            document: A report document, schema envelope checked.

        Returns:
            The report.

        Raises:
            SchemaError: If a field is missing or malformed.
        """
        try:
            trace = [
                TrackRow(
                    elapsed_s=float(row["elapsed_s"]),
                    objective=_optional_float(row.get("objective")),
                    grad_norm=_optional_float(row.get("grad_norm")),
                    eps_j=_optional_float(row.get("eps_j")),
                    eps_corr=_optional_float(row.get("eps_corr")),
                )
                for row in document["trace"]
            ]
            report = cls(
                config=dict(document["config"]),
                estimator=str(document["estimator"]),
                parameters={
                    str(name): [float(v) for v in values]
                    for name, values in document["parameters"].items()
                },
                trace=trace,
                final_metrics={
                    str(k): float(v) for k, v in document["final_metrics"].items()
                },
                warnings=[str(message) for message in document["warnings"]],
                status=str(document["status"]),
                versions={str(k): str(v) for k, v in document["versions"].items()},
                seeds={str(k): int(v) for k, v in document["seeds"].items()},
            )
        except (KeyError, TypeError, ValueError, AttributeError) as e:
            raise SchemaError(f"Malformed report document: {e}") from e
        times = [row.elapsed_s for row in report.trace]
        if any(later <= earlier for earlier, later in zip(times, times[1:])):
            raise SchemaError("Report trace timestamps are not strictly increasing")
        return report


def write_report(path: str | os.PathLike[str], report: FitReport) -> None:
    """Write a report file.

    Args:
        path: The destination.
        report: The report.
    """
    write_json(path, REPORT_SCHEMA, report.to_json())


def read_report(path: str | os.PathLike[str]) -> FitReport:
    """Read and validate a report file.

    Args:
        path: The file.

    Returns:
        The report.
    """
    return FitReport.from_json(read_json(path, REPORT_SCHEMA))
