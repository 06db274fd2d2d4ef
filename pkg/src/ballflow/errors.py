"""Exception types shared across the package."""


class BallflowError(Exception):
    """Base class for all package errors."""


class ConfigError(BallflowError):
    """Scene or script configuration is invalid."""


class FormatError(BallflowError):
    """A data file violates its schema.

    Carries the offending path and 1-based line number when known.
    """

    def __init__(self, message: str, path: str | None = None, line: int | None = None):
        self.path = path
        self.line = line
        loc = ""
        if path is not None:
            loc = f" [{path}" + (f":{line}" if line is not None else "") + "]"
        super().__init__(message + loc)


class GraphError(BallflowError):
    """A graph violates a structural invariant."""


class InfeasibleModelError(BallflowError):
    """The optimization model admits no feasible solution.

    ``group`` names the violated constraint group when it can be identified.
    """

    def __init__(self, message: str, group: str | None = None):
        self.group = group
        super().__init__(message if group is None else f"{message} (constraint group: {group})")


class NumericalError(BallflowError):
    """The solver stalled or lost numerical control."""
