"""Exception types shared across the package."""


class ValidationError(ValueError):
    """Input violates a documented precondition."""


class DomainError(ValueError):
    """Argument lies outside the domain of the function (e.g. a probability outside (0, 1))."""


class TrainingDivergedError(RuntimeError):
    """Raised when the training loss becomes non-finite."""
