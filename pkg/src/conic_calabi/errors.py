"""Exception hierarchy.

Every error carries the CLI exit code it maps to: 2 for bad input,
3 for numerical failures.
"""


class CalabiError(Exception):
    exit_code = 3


class DomainError(CalabiError, ValueError):
    exit_code = 2


class RangeError(CalabiError, ValueError):
    exit_code = 2


class RegimeError(CalabiError, ValueError):
    exit_code = 2


class ThetaError(CalabiError, ValueError):
    exit_code = 2


class WindowError(CalabiError):
    exit_code = 2


class ConvergenceError(CalabiError):
    pass


class FitError(CalabiError):
    pass


class BarrierError(CalabiError):
    pass


class NoRootError(CalabiError):
    pass


class NoSignChangeError(CalabiError):
    pass
