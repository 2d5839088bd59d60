# Copyright 2025 GATS Engine Developers
# SPDX-License-Identifier: Apache-2.0
"""
Custom exceptions for the GATS engine.

Every exception carries a short machine-parsable ``category`` that the command
line surface prints as ``error[<category>]: <message>``.
"""

from typing import Optional, Sequence


class GatsException(Exception):
    """
    Base exception for all engine errors.

    Parameters
    ----------
    component : str
        Name of the component or operation that raised the error
    message : str
        Human readable description of the failure
    category : str, optional
        Machine-parsable error category, by default ``"internal"``

    Attributes
    ----------
    component : str
        The component that generated the error
    message : str
        Original error message
    category : str
        Error category used by the CLI
    """

    category = "internal"

    def __init__(self, component: str, message, category: Optional[str] = None):
        self.component = component
        self.message = str(message)
        if category is not None:
            self.category = category
        super().__init__(self.message)

    def __str__(self):
        return f"{self.component}: {self.message}"

    def one_line(self) -> str:
        """Render the error as a single machine-parsable line."""
        text = " ".join(str(self).split())
        return f"error[{self.category}]: {text}"


class ShapeMismatchError(GatsException):
    """Raised when operand shapes are incompatible."""

    category = "shape"

    def __init__(self, op: str, *shapes: Sequence[int], detail: str = ""):
        self.shapes = [tuple(s) for s in shapes]
        rendered = " vs ".join(str(s) for s in self.shapes)
        message = f"shape mismatch {rendered}"
        if detail:
            message = f"{message} ({detail})"
        super().__init__(op, message)


class NonFiniteError(GatsException):
    """Raised when a forward op produces NaN or Inf."""

    category = "non_finite"

    def __init__(self, op: str, count: int):
        self.count = count
        super().__init__(op, f"{count} non-finite value(s) produced")


class VocabularyRangeError(GatsException):
    """Raised when token ids fall outside a vocabulary."""

    category = "vocab"

    def __init__(self, op: str, bad_id: int, vocab_size: int):
        self.bad_id = bad_id
        self.vocab_size = vocab_size
        super().__init__(op, f"id {bad_id} outside vocabulary of size {vocab_size}")


class DetachedTapeError(GatsException):
    """Raised when backward is requested for a value that was not recorded."""

    category = "tape"

    def __init__(self, message: str):
        super().__init__("backward", message)


class GatherError(GatsException):
    """Raised when a sequence references an unknown modality."""

    category = "gather"

    def __init__(self, message: str):
        super().__init__("gather", message)


class AlignmentError(GatsException):
    """Raised when attend outputs do not line up with the queried elements."""

    category = "alignment"

    def __init__(self, message: str):
        super().__init__("scatter", message)


class PlanError(GatsException):
    """Raised when an interleave plan cannot be built or does not fit the models."""

    category = "plan"

    def __init__(self, message: str):
        super().__init__("composer", message)


class TopologyMismatchError(GatsException):
    """Raised when a checkpoint's tensor names differ from the target model."""

    category = "topology"

    def __init__(self, missing: Sequence[str], unexpected: Sequence[str]):
        self.missing = list(missing)
        self.unexpected = list(unexpected)
        parts = []
        if self.missing:
            parts.append(f"expected but not found: {', '.join(self.missing)}")
        if self.unexpected:
            parts.append(f"found but not expected: {', '.join(self.unexpected)}")
        super().__init__("checkpoint", "; ".join(parts) or "topology descriptor differs")


class CheckpointError(GatsException):
    """Raised when a checkpoint cannot be read or written."""

    category = "checkpoint"

    def __init__(self, message: str):
        super().__init__("checkpoint", message)


class DivergenceError(GatsException):
    """Raised when a training loss becomes non-finite."""

    category = "divergence"

    def __init__(self, component: str, step: int, diagnostics: str = ""):
        self.step = step
        message = f"loss diverged at step {step}"
        if diagnostics:
            message = f"{message}; {diagnostics}"
        super().__init__(component, message)


class DatasetError(GatsException):
    """Raised for malformed dataset files or failed dataset writes."""

    category = "dataset"

    def __init__(self, message: str):
        super().__init__("dataset", message)


class GuidanceError(GatsException):
    """Raised when guidance inputs are inconsistent."""

    category = "guidance"

    def __init__(self, message: str):
        super().__init__("guidance", message)


class MissingArgumentsException(Exception):
    """Exception raised when required arguments are missing."""

    def __init__(self, missing: list):
        self.missing = missing
        super().__init__(missing)

    def __str__(self):
        from textwrap import dedent
        missing_str = "\n\t\t".join([f"{i}" for i in self.missing])
        message = f"""
        -----------------------------------------------------------------------------------
        Required arguments missing:
        \t{missing_str}
        These values must be specified as command-line arguments or environment variables
        -----------------------------------------------------------------------------------"""
        return dedent(message)


class ConfigurationError(GatsException):
    """Exception raised when configuration is invalid."""

    category = "config"

    def __init__(self, message: str):
        super().__init__("config", message)
