"""Exception hierarchy shared across the package."""


class GroupDetError(Exception):
    """Base class for all errors raised by this package."""


class ValidationError(GroupDetError):
    """An in-memory object violates one of its invariants."""


class ParseError(GroupDetError):
    """A dataset file could not be parsed; carries file and line context."""

    def __init__(self, message, path=None, line=None):
        self.path = path
        self.line = line
        loc = ""
        if path is not None:
            loc = f" [{path}" + (f":{line}" if line is not None else "") + "]"
        super().__init__(message + loc)


class CapacityError(ParseError):
    """A record references more subjects than the clip declares."""


class GenerationError(GroupDetError):
    """Synthetic scene construction is infeasible for the given parameters."""


class ConfigurationError(GroupDetError):
    """A config value is invalid or incompatible with the data."""


class TrainingError(GroupDetError):
    """Training diverged or otherwise failed; carries the epoch index."""

    def __init__(self, message, epoch=None):
        self.epoch = epoch
        if epoch is not None:
            message = f"{message} (epoch {epoch})"
        super().__init__(message)


class StateError(GroupDetError):
    """An operation was invoked on missing or incompatible model state."""
