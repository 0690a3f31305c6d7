"""Exception hierarchy shared by all pipeline stages."""


class XdrflowError(Exception):
    """Base class for every error raised by this package."""


class EmptySeries(XdrflowError):
    """A sequence operation received no observations."""


class IoError(XdrflowError):
    """An input source could not be opened or read."""


class SchemaError(XdrflowError):
    """An input file does not match its declared schema."""


class ValidationError(XdrflowError):
    """A value violates a domain invariant."""


class DegenerateOrigin(XdrflowError):
    """A percentage was requested for an origin with zero base population."""


class DegenerateData(XdrflowError):
    """A statistic is undefined for the given data (e.g. zero variance)."""


class DegenerateGeometry(XdrflowError):
    """A geometric quantity is undefined (e.g. zero distance in a ratio)."""


class InsufficientData(XdrflowError):
    """Too few observations to compute the requested statistic."""


class PipelineOrderError(XdrflowError):
    """A pipeline stage ran before the stage that produces its inputs.

    Carries the name of the command that must run first.
    """

    def __init__(self, message: str, required_command: str | None = None):
        super().__init__(message)
        self.required_command = required_command
