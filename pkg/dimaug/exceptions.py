"""Exception classes for dimaug."""

from typing import Any, Dict, List, Optional


class DimAugError(Exception):
    """Base exception class for dimaug."""

    pass


class TensorShapeError(DimAugError):
    """Exception raised when operand shapes do not conform to an op's rules."""

    pass


class DomainError(DimAugError):
    """Exception raised when log/div/sqrt inputs leave their domain in strict mode."""

    pass


class TapeError(DimAugError):
    """Exception raised when a backward pass is requested on an invalid output."""

    pass


class AugmentationError(DimAugError):
    """Exception raised when an augmentation receives an invalid magnitude or image."""

    pass


class PolicyFormatError(DimAugError):
    """Exception raised when a deployed policy document cannot be parsed."""

    pass


class LIDError(DimAugError):
    """Exception raised when an LID estimate cannot be computed."""

    pass


class ConfigurationError(DimAugError):
    """Exception raised when configuration is invalid or missing."""

    pass


class CorpusError(DimAugError):
    """Exception raised when an image corpus cannot be ingested."""

    pass


class CheckpointError(DimAugError):
    """Exception raised when a checkpoint container is malformed."""

    pass


class TrainingError(DimAugError):
    """Exception raised when contrastive training produces a non-finite loss.

    Attributes:
        snapshot: Diagnostic state at the time of failure (epoch, batch, policy state).
    """

    def __init__(self, message: str, snapshot: Optional[Dict[str, Any]] = None):
        """Initialize the error with an optional diagnostic snapshot."""
        super().__init__(message)
        self.snapshot = snapshot or {}


class SearchError(DimAugError):
    """Exception raised when the policy search produces a non-finite loss.

    Attributes:
        snapshot: The offending policy parameters and loop position.
    """

    def __init__(self, message: str, snapshot: Optional[Dict[str, Any]] = None):
        """Initialize the error with the offending policy snapshot."""
        super().__init__(message)
        self.snapshot = snapshot or {}


class PipelineStageError(DimAugError):
    """Exception raised when a pipeline stage fails.

    Attributes:
        stage: Name of the failing stage.
        persisted: Paths of the artifacts written before the failure.
    """

    def __init__(self, stage: str, message: str, persisted: Optional[List[str]] = None):
        """Initialize the error with the failing stage and persisted artifacts."""
        super().__init__(f'Stage {stage!r} failed: {message}')
        self.stage = stage
        self.persisted = persisted or []


class MetricsError(DimAugError):
    """Exception raised when metric rows would break the append-only stage/epoch order."""

    pass


class UsageError(DimAugError):
    """Exception raised for command-line usage errors.

    Attributes:
        usage: Usage line of the parser that rejected the arguments, if any.
        prog: Program or subcommand name to prefix the message with.
    """

    def __init__(self, message: str, usage: str = '', prog: str = 'dimaug'):
        """Initialize the error with the parser context."""
        super().__init__(message)
        self.usage = usage
        self.prog = prog
