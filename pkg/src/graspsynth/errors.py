"""Exception types shared across the package."""


class GraspSynthError(Exception):
    """Base class for all package errors."""


class InvalidInputError(GraspSynthError):
    """Input data violates a documented precondition."""


class ConfigurationError(GraspSynthError):
    """A spec/config combination is inconsistent (e.g. unmapped fingertip)."""


class SchemaError(GraspSynthError):
    """A serialized document does not match its declared schema."""


class UnrecognizedObjectError(GraspSynthError):
    """No template in the library fits the observation under the loss ceiling."""
