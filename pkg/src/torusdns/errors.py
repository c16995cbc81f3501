"""Exception types shared across the package."""


class TorusDnsError(Exception):
    """Base class for all package errors."""


class ConfigError(TorusDnsError):
    """Base class for configuration problems (CLI exit code 2)."""


class ParseError(ConfigError):
    """Config file could not be parsed; message carries the line number."""


class ValidationError(ConfigError):
    """A config value violates an invariant (e.g. delta <= 0)."""


class NumericalError(TorusDnsError):
    """Base class for runtime numerical failures (CLI exit code 3)."""


class CflViolation(NumericalError):
    """Time step too large for the current velocity maximum."""


class NonFinite(NumericalError):
    """A coefficient became NaN/Inf - the discretization blew up."""


class UnresolvedWavenumber(NumericalError):
    """No shell satisfies the determining-wavenumber conditions.

    Signals under-resolution for the given viscosity; refine N or raise nu.
    """


class WindowUnavailable(TorusDnsError):
    """Requested time window is not covered by the stored history."""


class GridMismatch(TorusDnsError):
    """Two fields or states live on different grids."""


class AllZero(TorusDnsError):
    """Every calibration sample is identically zero."""


class InsufficientData(TorusDnsError):
    """Not enough records above the noise floor to fit a decay rate."""


class DivisionByZeroKappa(TorusDnsError):
    """kappa_d = 0 while <Lambda> > lambda_0: internal consistency failure."""


class SnapshotFormatError(TorusDnsError):
    """Snapshot file has wrong magic bytes or unsupported version."""


class CheckFailure(TorusDnsError):
    """A check-mode verification failed (CLI exit code 4)."""
