"""Exception types shared across the package."""


class MimicError(Exception):
    """Base class for all package errors."""


class InvalidParameter(MimicError):
    """A scalar argument is outside its documented domain."""


class InvalidInput(MimicError):
    """Structured input (shape, emptiness, chaining) violates a precondition."""


class InvalidState(MimicError):
    """An object is not in a state that permits the requested operation."""


class InvalidMetric(MimicError):
    """A ground cost fails the metric axioms (nonnegativity, symmetry)."""


class ConfigError(MimicError):
    """A run configuration is missing, malformed, or inconsistent."""


class RunAborted(MimicError):
    """A training run hit a non-finite loss and dumped diagnostics."""
