"""Exception hierarchy shared across the package.

The CLI maps these onto exit codes (config 2, solver 3, verification 4),
so library code should raise the most specific type that applies.
"""


class ExactOedError(Exception):
    """Base class for all package-specific failures."""


class ConfigError(ExactOedError):
    """Invalid or inconsistent run configuration / arguments."""


class SolverFailure(ExactOedError):
    """An optimization subproblem failed to produce a usable solution."""


class RegionUnboundedError(SolverFailure):
    """A confidence region escaped the parameter search box.

    Carries the offending direction when known, so drivers can report
    which ray/anchor ran away.
    """

    def __init__(self, message, direction=None):
        super().__init__(message)
        self.direction = direction


class VerificationFailure(ExactOedError):
    """A solution failed its post-hoc global-optimality or consistency check."""
