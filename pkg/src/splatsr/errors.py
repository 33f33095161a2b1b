"""Exception types shared across the package."""


class InvalidInputError(ValueError):
    """An operation received arguments violating its documented preconditions."""


class ParseError(ValueError):
    """A file could not be parsed; ``offset`` locates the problem when known."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class PipelineError(RuntimeError):
    """A training stage or provider failed; the message names the stage."""
