"""Exception hierarchy.

Every error carries a process exit code so the CLI can map failures onto its
documented contract: 2 for configuration/input problems, 3 for solution-guard
violations, 4 for divergence or stagnation of an iteration.
"""


class SpiralisError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ConfigError(SpiralisError):
    """Invalid grid, parameter, or configuration value."""

    exit_code = 2


class DataError(SpiralisError):
    """Input data is unusable (NaN/Inf samples, insufficient span, ...)."""

    exit_code = 2


class RangeError(SpiralisError):
    """A query point lies outside the range covered by the discretization."""

    exit_code = 2


class UnsupportedInputError(SpiralisError):
    """Operation is not defined on this input (e.g. forward application to an
    atom away from the singular point, which would create a dipole)."""

    exit_code = 2


class PathologicalExponentError(SpiralisError):
    """Fuchsian exponent s = -1, for which no bounded inverse exists."""

    exit_code = 2


class GuardViolationError(SpiralisError):
    """A positivity/smallness guard failed; names the violated inequality."""

    exit_code = 3

    def __init__(self, message, margins=None, last_state=None):
        super().__init__(message)
        self.margins = margins or {}
        self.last_state = last_state


class DivergenceError(SpiralisError):
    """An iteration failed to contract."""

    exit_code = 4


class StagnationError(SpiralisError):
    """Residual reduction fell below the configured progress threshold."""

    exit_code = 4

    def __init__(self, message, last_state=None, report=None):
        super().__init__(message)
        self.last_state = last_state
        self.report = report


class MissingBundleError(SpiralisError):
    """A per-mode solution bundle required by the operation is absent."""

    exit_code = 2
