"""Exception hierarchy. The CLI maps these onto process exit codes."""


class HeraldImgError(Exception):
    """Base class for all package errors."""


class ParameterError(HeraldImgError, ValueError):
    """Invalid argument, configuration value or shape mismatch."""


class TooFewEventsError(ParameterError):
    """Not enough single-photon events to build a calibration."""


class NumericError(HeraldImgError, ArithmeticError):
    """A numerical procedure failed or produced an undefined result."""


class DegenerateError(NumericError):
    """The requested quantity vanishes (zero field, zero herald probability)."""


class UndefinedVisibilityError(NumericError):
    """All four projection counts are zero."""


class FormatError(HeraldImgError, OSError):
    """Malformed, missing or unreadable file."""
