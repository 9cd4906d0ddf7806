"""
Exception hierarchy for sorl-desk.

Library code raises these; only the CLI turns them into exit codes.
"""


class SorlError(Exception):
    """Base class for every error raised by this package."""


class PreconditionError(SorlError, ValueError):
    """An operation was called with arguments outside its contract."""


class ShapeError(SorlError, ValueError):
    """Tensor or array shapes do not line up."""


class NonFiniteError(SorlError, FloatingPointError):
    """A NaN or Inf reached an operation boundary."""


class GraphConsumedError(SorlError):
    """backward() was called twice on the same graph."""


class ActionBoundError(PreconditionError):
    """An action outside the environment's bound reached env_step."""


class UnknownEnvironmentError(PreconditionError):
    """The requested environment name is not registered."""

    def __init__(self, name: str, valid: list[str]):
        self.name = name
        self.valid = valid
        super().__init__(f"unknown environment {name!r}; valid environments: {', '.join(valid)}")


class UsageError(SorlError):
    """A command was invoked with arguments that cannot work together."""


class DatasetFormatError(SorlError):
    """A dataset file is malformed, truncated or dimension-inconsistent."""


class ModelFormatError(SorlError):
    """A serialized model file cannot be parsed."""
