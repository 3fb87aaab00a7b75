"""Custom exception classes for scenario-rag.

All exceptions include a ``suggestion`` field with actionable advice
suitable for display to a user of the command line.  Two families decide
the CLI exit code: :class:`InputError` (exit 1) and :class:`StorageError`
(exit 2).
"""

from typing import Any


class ScenarioRagError(Exception):
    """Base exception for all scenario-rag errors."""

    exit_code = 1

    def __init__(
        self,
        message: str,
        details: str | None = None,
        suggestion: str | None = None,
    ) -> None:
        self.message = message
        self.details = details
        self.suggestion = suggestion
        super().__init__(message)

    def __str__(self) -> str:
        parts = [self.message]
        if self.details:
            parts.append(self.details)
        if self.suggestion:
            parts.append(f"Suggestion: {self.suggestion}")
        return " | ".join(parts)


# ======================================================================
# Input errors (exit code 1)
# ======================================================================


class InputError(ScenarioRagError):
    """Invalid data, arguments or numerical state supplied by the caller."""

    exit_code = 1


class MissingEgo(InputError):
    def __init__(self, timestamp: int | None = None) -> None:
        self.timestamp = timestamp
        super().__init__(
            "Frame has no ego entity",
            details=f"timestamp={timestamp}" if timestamp is not None else None,
            suggestion="Every frame record needs exactly one entity of kind 'ego' with id 0.",
        )


class DuplicateEgo(InputError):
    def __init__(self, timestamp: int | None = None) -> None:
        self.timestamp = timestamp
        super().__init__(
            "Frame has more than one ego entity",
            details=f"timestamp={timestamp}" if timestamp is not None else None,
            suggestion="Keep a single ego entry per frame; other vehicles use kind 'vehicle'.",
        )


class InvalidState(InputError):
    """A physical state violates its unit or range invariants."""

    def __init__(self, field: str, value: Any = None, entity_id: int | None = None) -> None:
        self.field = field
        self.value = value
        self.entity_id = entity_id
        details = f"field={field}, value={value!r}"
        if entity_id is not None:
            details += f", entity_id={entity_id}"
        super().__init__(
            "Invalid physical state",
            details=details,
            suggestion="Speeds and extents must be non-negative/positive, coordinates finite, "
            "and lane polylines need at least two distinct consecutive points.",
        )


class ValidationError(InputError):
    """A graph or scenario fails validation; carries the violation list."""

    def __init__(self, violations: list[Any], subject: str | None = None) -> None:
        self.violations = list(violations)
        summary = "; ".join(str(v) for v in self.violations[:5])
        if len(self.violations) > 5:
            summary += f"; ... ({len(self.violations)} total)"
        super().__init__(
            "Validation failed" + (f" for {subject}" if subject else ""),
            details=summary or None,
            suggestion="Run the data through scenario_model.validate to list every violation.",
        )


class ParseError(InputError):
    """A JSONL line could not be decoded into a scenario."""

    def __init__(self, line: int, reason: str) -> None:
        self.line = line
        self.reason = reason
        super().__init__(
            f"Parse error on line {line}",
            details=reason,
            suggestion="Check the line against the scenario JSONL schema; unknown keys are rejected.",
        )


class NonCanonicalInput(InputError):
    def __init__(self, what: str = "graph") -> None:
        super().__init__(
            f"Input {what} is not in canonical form",
            suggestion="Pass graphs through scenario_model.canonicalize first.",
        )


class EmptySequence(InputError):
    def __init__(self, what: str = "scenario") -> None:
        super().__init__(
            f"Empty sequence: {what} has no frames",
            suggestion="Scenarios need at least one frame.",
        )


class TooLarge(InputError):
    def __init__(self, size: int, limit: int) -> None:
        self.size = size
        self.limit = limit
        super().__init__(
            "Input too large for exhaustive enumeration",
            details=f"T1*T2={size} > {limit}",
            suggestion="Use graph_dtw for long sequences; the brute-force oracle is for tests only.",
        )


class TooManyNodes(InputError):
    def __init__(self, count: int, limit: int) -> None:
        self.count = count
        self.limit = limit
        super().__init__(
            "Graph has more nodes than the model supports",
            details=f"nodes={count}, max_nodes={limit}",
            suggestion="Raise ModelConfig.max_nodes or prune distant entities.",
        )


class ShapeMismatch(InputError):
    def __init__(self, details: str) -> None:
        super().__init__(
            "Tensor shape mismatch",
            details=details,
            suggestion="Check that inputs were produced with the same ModelConfig.",
        )


class LengthMismatch(InputError):
    def __init__(self, left: int, right: int) -> None:
        super().__init__(
            "Input lengths differ",
            details=f"{left} != {right}",
            suggestion="Predictions and targets must be aligned element by element.",
        )


class BatchTooSmall(InputError):
    def __init__(self, size: int) -> None:
        self.size = size
        super().__init__(
            "Batch too small for pairwise alignment",
            details=f"batch size {size} < 2",
            suggestion="The alignment loss needs at least two scenarios per batch.",
        )


class NumericalDivergence(InputError):
    def __init__(self, epoch: int, value: float) -> None:
        self.epoch = epoch
        self.value = value
        super().__init__(
            "Training diverged (non-finite loss)",
            details=f"epoch={epoch}, loss={value}",
            suggestion="Lower the learning rate or check the distance matrix for non-finite values.",
        )


class DimMismatch(InputError):
    def __init__(self, expected: int, found: int) -> None:
        self.expected = expected
        self.found = found
        super().__init__(
            "Vector dimension mismatch",
            details=f"expected {expected}, found {found}",
            suggestion="Query with vectors produced by the same checkpoint as the index.",
        )


class DuplicateId(InputError):
    def __init__(self, identifier: str) -> None:
        self.identifier = identifier
        super().__init__(
            "Duplicate scenario id",
            details=f"'{identifier}'",
            suggestion="Scenario ids must be unique within an index or dataset.",
        )


class NonFiniteVector(InputError):
    def __init__(self, identifier: str) -> None:
        self.identifier = identifier
        super().__init__(
            "Vector has non-finite components",
            details=f"'{identifier}'",
            suggestion="Embeddings must be finite and within float32 range; re-run embed.",
        )


class EmptyIndex(InputError):
    def __init__(self) -> None:
        super().__init__(
            "Cannot build an index from zero vectors",
            suggestion="Embed at least one scenario before building the index.",
        )


class UnknownId(InputError):
    def __init__(self, identifier: str, where: str = "labels") -> None:
        self.identifier = identifier
        super().__init__(
            f"Unknown scenario id in {where}",
            details=f"'{identifier}'",
            suggestion="Make sure the labels file covers every id stored in the index.",
        )


class ConfigError(InputError):
    def __init__(self, message: str, details: str | None = None) -> None:
        super().__init__(
            message,
            details=details,
            suggestion="Print a valid document with --dump-config and edit that.",
        )


# ======================================================================
# Storage errors (exit code 2)
# ======================================================================


class StorageError(ScenarioRagError):
    """Failure reading or writing an artifact."""

    exit_code = 2


class IoError(StorageError):
    def __init__(self, path: str, reason: str) -> None:
        self.path = path
        self.reason = reason
        super().__init__(
            "I/O error",
            details=f"{path}: {reason}",
            suggestion="Check that the path exists and is readable/writable.",
        )


class CorruptFile(StorageError):
    def __init__(self, offset: int, reason: str, path: str | None = None) -> None:
        self.offset = offset
        self.reason = reason
        details = f"offset {offset}: {reason}"
        if path:
            details = f"{path} " + details
        super().__init__(
            "Corrupt binary file",
            details=details,
            suggestion="Regenerate the artifact; the file is truncated or was written by another tool.",
        )


class VersionMismatch(StorageError):
    def __init__(self, expected: str, found: str) -> None:
        self.expected = expected
        self.found = found
        super().__init__(
            "Unsupported file format or version",
            details=f"expected {expected}, found {found}",
            suggestion="Rebuild the artifact with this version of scenario-rag.",
        )
