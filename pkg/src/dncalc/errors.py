"""Exception hierarchy for dncalc.

All library errors derive from :class:`DNCalcError` so callers can catch one
base class.  The CLI maps these onto process exit codes: input problems exit
with 2, numerical breakdowns with 3, and failed verification checks with 1.
"""


class DNCalcError(Exception):
    """Base class for all dncalc errors."""


class InputError(DNCalcError):
    """Raised when an argument violates a documented precondition.

    Analogue of ``ValueError`` kept separate so dncalc failures are
    distinguishable from built-in errors.
    """


class EvaluationError(DNCalcError):
    """Raised when a symbol evaluator returns NaN/inf; carries the point."""

    def __init__(self, msg, x=None, xi=None):
        super().__init__(msg)
        self.x = x
        self.xi = xi


class CapabilityError(DNCalcError):
    """Raised when a derivative is requested beyond the available budget."""


class NumericalError(DNCalcError):
    """Raised for numerical breakdowns that are not singularities."""


class SingularityError(NumericalError):
    """Raised when a matrix that must be inverted is (near-)singular.

    Carries the sample point so failures can be reported with a witness.
    """

    def __init__(self, msg, x=None, xi=None, lam=None, j=None):
        super().__init__(msg)
        self.x = x
        self.xi = xi
        self.lam = lam
        self.j = j


class QuadratureError(NumericalError):
    """Raised when contour quadrature fails to converge under refinement."""


class FitError(NumericalError):
    """Raised when a log-log slope fit has too few usable points."""


class ContourError(NumericalError):
    """Raised when a contour fails to enclose the value it must enclose."""


class ResourceError(DNCalcError):
    """Raised when a dense assembly would exceed the configured size cap."""


class ShiftNotFoundError(DNCalcError):
    """Raised when the spectral-shift search hits its cap without success."""

    def __init__(self, msg, alpha_cap=None):
        super().__init__(msg)
        self.alpha_cap = alpha_cap
