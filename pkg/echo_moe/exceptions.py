"""
Custom exception hierarchy for echo-moe.

Defines specific exception types for the error conditions raised by the
numerics, model, training, data pipeline and command-line layers.
"""


class EchoMoEError(Exception):
    """Base exception for all echo-moe related errors."""

    pass


class ConfigurationError(EchoMoEError):
    """Raised when there's an invalid configuration."""

    pass


class DimensionError(EchoMoEError):
    """Raised when tensor shapes do not conform."""

    pass


class DataError(EchoMoEError):
    """Raised when input data is malformed or out of range."""

    pass


class ContractError(EchoMoEError):
    """Raised when an operation is called outside its preconditions."""

    pass


class TrainingError(EchoMoEError):
    """Raised when an optimization step cannot be completed."""

    pass


class CheckpointError(EchoMoEError):
    """Raised when a checkpoint cannot be written, read or validated."""

    pass


class InvariantError(EchoMoEError):
    """Raised when a runtime invariant check fails."""

    pass


class SerializationError(EchoMoEError):
    """Raised when serialization/deserialization fails."""

    pass


class GeneratorNotFoundError(EchoMoEError):
    """Raised when a requested instruction generator is not registered."""

    pass
