"""Exception types shared across the pipeline."""


class JobsigError(Exception):
    """Base class for all errors raised by this package."""


class ParseError(JobsigError):
    """Malformed input row (wrong column count, non-numeric field)."""

    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


class EmptyInputError(JobsigError):
    """An input that must contain data was empty."""


class ValidationError(JobsigError):
    """A domain invariant was violated by otherwise well-formed input."""


class SchemaError(JobsigError):
    """Structurally inconsistent data (mismatched metric kinds, bad header)."""


class ContractViolation(JobsigError, ValueError):
    """A caller broke an operation precondition."""


class ConfigError(JobsigError, ValueError):
    """Invalid model or pipeline configuration."""


class TrainingDiverged(JobsigError):
    """Loss became non-finite during training."""


class ModelIOError(JobsigError):
    """A persisted model or signature file is unreadable or corrupt."""


class VisualizationError(JobsigError):
    """The signature cannot be rendered as an image (unsupported channels)."""
