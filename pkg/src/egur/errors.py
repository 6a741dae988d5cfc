"""Exception types shared across the package."""


class EgurError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(EgurError):
    """A file does not conform to one of the on-disk formats."""


class SpecError(EgurError):
    """A configuration or specification value is invalid."""


class DegenerateDataError(EgurError):
    """The data is too degenerate for the requested operation."""
