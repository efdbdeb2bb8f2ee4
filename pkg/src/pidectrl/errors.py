"""Exception hierarchy shared across the package."""


class PidectrlError(Exception):
    """Base class for all package errors."""


class SizingError(PidectrlError):
    """Requested grid exceeds the configured cell budget."""


class DomainMismatchError(PidectrlError):
    """Two grids that must share a domain do not."""


class ConfigError(PidectrlError):
    """Invalid or incomplete run configuration; message names the field."""


class StabilityError(PidectrlError):
    """Time step violates a stability guard."""


class NumericalError(PidectrlError):
    """NaN/Inf detected or a positivity/mass budget was blown mid-run."""
