"""Exception types shared across the package."""


class GacgError(Exception):
    """Base class for all package errors."""


class ShapeError(GacgError):
    """Operand shapes do not conform for the requested operation."""


class ParameterError(GacgError):
    """An argument is outside its documented domain."""


class ContractError(GacgError):
    """A caller violated a documented precondition."""


class NumericsError(GacgError):
    """A computation produced a non-finite value."""


class TrainingDivergedError(NumericsError):
    """Training produced a non-finite loss; carries the env step."""

    def __init__(self, step, message):
        super().__init__(message)
        self.step = step


class IntegrityError(GacgError):
    """Persisted data is inconsistent or truncated."""


class ConfigError(GacgError):
    """A run configuration is invalid; carries the offending key."""

    def __init__(self, key, message):
        super().__init__(f"config key '{key}': {message}")
        self.key = key
