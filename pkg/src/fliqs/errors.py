"""Exception hierarchy for the fliqs package.

Everything raised on purpose derives from FliqsError so callers can catch
library failures without swallowing programming errors.
"""


class FliqsError(Exception):
    """Base class for all errors raised by this package."""


class FormatSpecError(FliqsError):
    """Bad numeric format: unparseable name or parameters out of range."""


class DomainError(FliqsError):
    """Input values outside the function's domain (NaN, inf, bad shapes)."""


class ManifestError(FliqsError):
    """Malformed cost-model manifest or architecture/manifest mismatch."""


class ConfigError(FliqsError):
    """Bad run configuration: unknown keys, wrong types, missing fields."""


class ThresholdError(FliqsError):
    """Degenerate calibration statistics (zero-variance activations)."""


class NumericalError(FliqsError):
    """Non-finite values produced during training."""


class DataError(FliqsError):
    """Malformed data file or unsatisfiable batch plan."""


class FitError(FliqsError):
    """Curve fit failed to converge. Carries the best parameters found."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class AnalysisError(FliqsError):
    """Analysis statistic undefined on the given inputs."""


class SearchAbort(FliqsError):
    """A search loop died mid-run. Carries the step index and partial trace."""

    def __init__(self, message, step, trace):
        super().__init__(message)
        self.step = step
        self.trace = trace
