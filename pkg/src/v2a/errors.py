"""Exception hierarchy shared by every stage of the pipeline."""


class V2AError(Exception):
    """Base class for all package errors."""


class InvalidArgument(V2AError, ValueError):
    pass


class InvalidState(V2AError, RuntimeError):
    pass


class InvalidToken(V2AError, ValueError):
    pass


class MalformedGrid(V2AError, ValueError):
    pass


class UndefinedSnr(V2AError, ValueError):
    pass


class UndefinedOffset(V2AError, ValueError):
    pass


class NumericOverflow(V2AError, FloatingPointError):
    pass


class IncompatibleArtifact(V2AError):
    """An artifact on disk was written by an incompatible format version."""

    def __init__(self, kind: str, found: int, expected: int):
        self.kind = kind
        self.found = found
        self.expected = expected
        super().__init__(
            f"incompatible {kind} artifact: file version {found}, this build reads version {expected}"
        )
