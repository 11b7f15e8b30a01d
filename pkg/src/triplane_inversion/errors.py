class InvalidArgument(ValueError):
    """Raised when an argument violates an operation's precondition."""


class DependencyError(RuntimeError):
    """Raised when a required checkpoint or dataset is missing."""


class NoBackgroundError(RuntimeError):
    """Raised when a background mask selects no pixels."""
