# License: MIT
# Copyright © 2024 Frequenz Energy-as-a-Service GmbH

"""File formats for datasets, models and reports.

Binary datasets are plain text: a `#mpf-bin d=<d> m=<rows>` header and one
state per line as `0`/`1` characters, optionally followed by a space and a
decimal weight. `<rows>` counts the lines that follow, so repeated states
written once with a weight count once. Continuous datasets use a
`#mpf-real d=<d> m=<rows>` header and one comma-separated point per row.
Models and reports are JSON documents carrying a schema name and version.
Every write is atomic.
"""

from __future__ import annotations  # required for constructor type hinting

import json
import logging
import os
import re
import tempfile
import typing
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import numpy.typing as npt

from ._dataset import ContinuousDataset, DiscreteDataset
from ._exceptions import SchemaError, ValidationError
from ._model import CouplingMatrix, IcaParameters, Support, SupportKind

_logger = logging.getLogger(__name__)

MODEL_SCHEMA = "frequenz-mpf/model"
REPORT_SCHEMA = "frequenz-mpf/report"
MANIFEST_SCHEMA = "frequenz-mpf/manifest"
TIMING_SCHEMA = "frequenz-mpf/timing"
CHECK_SCHEMA = "frequenz-mpf/check"
SCHEMA_VERSION = 1

_BIN_HEADER = re.compile(r"^#mpf-bin d=(\d+) m=(\d+)$")
_REAL_HEADER = re.compile(r"^#mpf-real d=(\d+) m=(\d+)$")

JsonDocument: typing.TypeAlias = dict[str, typing.Any]


def write_atomic(path: str | os.PathLike[str], text: str) -> None:
    """Write a text file by renaming a fully written temporary file over it.

    Args:
        path: The destination.
        text: The file content.

    Raises:
        ValidationError: If the destination cannot be written.
    """
    target = Path(path)
    try:
        with tempfile.NamedTemporaryFile(
            "w", dir=target.parent, prefix=f".{target.name}.", delete=False, encoding="utf-8"
        ) as handle:
            handle.write(text)
            temporary = Path(handle.name)
        os.replace(temporary, target)
    except OSError as e:
        raise ValidationError(f"Cannot write {target}: {e}") from e
    _logger.debug("Wrote %s", target)


def _read_lines(path: str | os.PathLike[str]) -> list[str]:
    try:
        return Path(path).read_text(encoding="utf-8").splitlines()
    except OSError as e:
        raise ValidationError(f"Cannot read {path}: {e}") from e


def _parse_header(lines: list[str], pattern: re.Pattern[str], path: object) -> tuple[int, int]:
    if not lines:
        raise ValidationError(f"{path}: empty file, expected a header line")
    match = pattern.match(lines[0].strip())
    if match is None:
        raise ValidationError(f"{path}: malformed header {lines[0]!r}")
    return int(match.group(1)), int(match.group(2))


def _body(lines: list[str], m: int, path: object) -> list[str]:
    body = [line for line in lines[1:] if line.strip()]
    if len(body) != m:
        raise ValidationError(f"{path}: header declares {m} rows, found {len(body)}")
    return body


def format_dataset(data: DiscreteDataset) -> str:
    """Render a binary dataset, one distinct state per line.

    Weights other than 1 are written after the state.

    Args:
        data: The dataset.

    Returns:
        The file content.
    """
    lines = [f"#mpf-bin d={data.d} m={data.n_states}"]
    for state, weight in zip(data.states, data.weights):
        bits = "".join("1" if bit else "0" for bit in state)
        lines.append(bits if weight == 1.0 else f"{bits} {format(weight, '.17g')}")
    return "\n".join(lines) + "\n"


def write_dataset(path: str | os.PathLike[str], data: DiscreteDataset) -> None:
    """Write a binary dataset file.

    Args:
        path: The destination.
        data: The dataset.
    """
    write_atomic(path, format_dataset(data))


def read_dataset(path: str | os.PathLike[str]) -> DiscreteDataset:
    """Read a binary dataset file; repeated states are consolidated.

    Args:
        path: The file.

    Returns:
        The dataset.

    Raises:
        ValidationError: If the file is malformed.
    """
    lines = _read_lines(path)
    d, m = _parse_header(lines, _BIN_HEADER, path)
    body = _body(lines, m, path)
    states = np.zeros((m, d), dtype=np.int8)
    weights = np.ones(m)
    for row, line in enumerate(body):
        bits, _, weight = line.strip().partition(" ")
        if len(bits) != d or set(bits) - {"0", "1"}:
            raise ValidationError(f"{path}: line {row + 2} is not a {d}-bit state")
        states[row] = np.frombuffer(bits.encode("ascii"), dtype=np.uint8) - ord("0")
        if weight:
            try:
                weights[row] = float(weight)
            except ValueError as e:
                raise ValidationError(f"{path}: bad weight on line {row + 2}") from e
    try:
        return DiscreteDataset.from_samples(states, weights, d=d)
    except ValueError as e:
        raise ValidationError(f"{path}: {e}") from e


def write_continuous(path: str | os.PathLike[str], data: ContinuousDataset) -> None:
    """Write a continuous dataset file.

    Args:
        path: The destination.
        data: The observations.
    """
    lines = [f"#mpf-real d={data.d} m={len(data)}"]
    lines.extend(",".join(repr(float(value)) for value in row) for row in data.points)
    write_atomic(path, "\n".join(lines) + "\n")


def read_continuous(path: str | os.PathLike[str]) -> ContinuousDataset:
    """Read a continuous dataset file.

    Args:
        path: The file.

    Returns:
        The observations.

    Raises:
        ValidationError: If the file is malformed.
    """
    lines = _read_lines(path)
    d, m = _parse_header(lines, _REAL_HEADER, path)
    body = _body(lines, m, path)
    try:
        points = np.array([[float(v) for v in line.split(",")] for line in body])
    except ValueError as e:
        raise ValidationError(f"{path}: non-numeric value") from e
    points = points.reshape(m, -1) if m else np.zeros((0, d))
    if points.shape[1] != d:
        raise ValidationError(f"{path}: rows do not have {d} values")
    try:
        return ContinuousDataset(points)
    except ValueError as e:
        raise ValidationError(f"{path}: {e}") from e


def _envelope(schema: str, content: JsonDocument) -> JsonDocument:
    return {"schema": schema, "schema_version": SCHEMA_VERSION, **content}


def check_schema(document: typing.Any, schema: str) -> JsonDocument:
    """Check the schema name and version of a JSON document.

    Args:
        document: The parsed document.
        schema: The expected schema name.

    Returns:
        The document.

    Raises:
        SchemaError: If the schema is missing, different or of another version.
    """
    if not isinstance(document, dict):
        raise SchemaError("Expected a JSON object")
    if document.get("schema") != schema:
        raise SchemaError(f"Expected schema {schema!r}, got {document.get('schema')!r}")
    if document.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(
            f"Unsupported {schema} version {document.get('schema_version')!r}, "
            f"expected {SCHEMA_VERSION}"
        )
    return document


def write_json(path: str | os.PathLike[str], schema: str, content: JsonDocument) -> None:
    """Write a JSON document with a schema envelope.

    Args:
        path: The destination.
        schema: The schema name.
        content: The document fields.
    """
    write_atomic(path, json.dumps(_envelope(schema, content), indent=2, sort_keys=True) + "\n")


def read_json(path: str | os.PathLike[str], schema: str) -> JsonDocument:
    """Read a JSON document and check its schema.

    Args:
        path: The file.
        schema: The expected schema name.

    Returns:
        The document.

    Raises:
        SchemaError: If the content is not valid JSON of the expected schema.
    """
    text = "\n".join(_read_lines(path))
    try:
        document = json.loads(text)
    except json.JSONDecodeError as e:
        raise SchemaError(f"{path}: invalid JSON: {e}") from e
    return check_schema(document, schema)


@dataclass(frozen=True, eq=False)
class ModelDocument:
    """A serialized model with free-form metadata.

    Attributes:
        model: The spin glass or ICA parameters.
        metadata: Generation settings and other annotations.
    """

    model: CouplingMatrix | IcaParameters
    metadata: JsonDocument = field(default_factory=dict)


def model_to_json(document: ModelDocument) -> JsonDocument:
    """Convert a model to its JSON fields.

    Args:
        document: The model and metadata.

    Returns:
        The JSON fields, without the schema envelope.
    """
    model = document.model
    if isinstance(model, IcaParameters):
        return {
            "family": "ica",
            "d": model.d,
            "filters": model.filters.tolist(),
            "metadata": document.metadata,
        }
    support = model.support
    return {
        "family": "ising",
        "d": model.d,
        "support": {
            "kind": support.kind.value,
            "shape": list(support.shape) if support.shape else None,
        },
        "couplings": [
            [int(i), int(j), float(value)]
            for (i, j), value in zip(support.edges, model.offdiag)
        ],
        "biases": model.diag.tolist(),
        "metadata": document.metadata,
    }


def _support_from_json(
    d: int, spec: JsonDocument, edges: npt.NDArray[np.int64]
) -> Support:
    kind = SupportKind(spec.get("kind", SupportKind.CUSTOM.value))
    if kind is SupportKind.LATTICE:
        rows, cols = spec["shape"]
        return Support.lattice(int(rows), int(cols))
    if kind is SupportKind.FULL:
        return Support.full(d)
    return Support.from_edges(d, edges)


def model_from_json(document: JsonDocument) -> ModelDocument:
    """Rebuild a model from its JSON fields.

    Args:
        document: A model document, schema envelope checked.

    Returns:
        The model and metadata.

    Raises:
        SchemaError: If a field is missing or malformed.
    """
    try:
        d = int(document["d"])
        metadata = dict(document.get("metadata") or {})
        if document["family"] == "ica":
            filters = np.asarray(document["filters"], dtype=np.float64)
            return ModelDocument(IcaParameters(filters), metadata)
        if document["family"] != "ising":
            raise SchemaError(f"Unknown model family {document['family']!r}")
        triples = np.asarray(document["couplings"], dtype=np.float64).reshape(-1, 3)
        edges = triples[:, :2].astype(np.int64)
        if ((edges < 0) | (edges >= d)).any():
            raise SchemaError(f"Coupling index outside 0..{d - 1}")
        support = _support_from_json(d, document.get("support") or {}, edges)
        dense = np.zeros((d, d))
        dense[edges[:, 0], edges[:, 1]] = triples[:, 2]
        missing = ~np.isin(
            edges[:, 0] * d + edges[:, 1], support.edges[:, 0] * d + support.edges[:, 1]
        )
        if missing.any():
            raise SchemaError("Coupling listed outside the declared support")
        dense[np.diag_indices(d)] = np.asarray(document["biases"], dtype=np.float64)
        return ModelDocument(CouplingMatrix.from_dense(dense, support), metadata)
    except (KeyError, IndexError, TypeError, ValueError) as e:
        raise SchemaError(f"Malformed model document: {e}") from e


def write_model(path: str | os.PathLike[str], document: ModelDocument) -> None:
    """Write a model file.

    Args:
        path: The destination.
        document: The model and metadata.
    """
    write_json(path, MODEL_SCHEMA, model_to_json(document))


def read_model(path: str | os.PathLike[str]) -> ModelDocument:
    """Read a model file.

    Args:
        path: The file.

    Returns:
        The model and metadata.
    """
    return model_from_json(read_json(path, MODEL_SCHEMA))
