"""Exception types shared across the package."""


class InputError(ValueError):
    """An argument violates an operation's preconditions."""


class ParseError(ValueError):
    """A text artifact is malformed; the message names the file and line."""


class ConfigError(ValueError):
    """A pipeline config file is invalid; the message names the field."""


class MissingArtifactError(FileNotFoundError):
    """A pipeline stage needs an artifact that has not been produced yet."""


class ConvergenceError(RuntimeError):
    """An iterative numerical routine ran out of iterations.

    Carries the final residual so callers can judge how far off it stopped.
    """

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual
