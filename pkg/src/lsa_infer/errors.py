"""Exception types shared across modules."""


class LsaError(Exception):
    """Base class for package errors."""


class SingularMatrixError(LsaError, ValueError):
    pass


class DimensionError(LsaError, ValueError):
    pass


class DivergenceError(LsaError, ArithmeticError):
    """An iterate norm exceeded the divergence guard."""


class ConfigError(LsaError, ValueError):
    """Invalid experiment configuration; ``path`` names the offending key."""

    def __init__(self, message: str, path: str | None = None):
        self.path = path
        super().__init__(f"{path}: {message}" if path else message)
