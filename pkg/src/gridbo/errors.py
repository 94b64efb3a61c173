"""Exception hierarchy shared by all gridbo modules."""


class GridboError(Exception):
    """Base class for errors raised by this package."""


class ShapeError(GridboError, ValueError):
    """Matrix or channel dimensions do not fit together."""


class DomainError(GridboError, ValueError):
    """A grid point lies outside its admissible box."""


class NumericalError(GridboError, ArithmeticError):
    """A numerical routine failed (non-convergence, bad residual...)."""


class StabilityError(NumericalError):
    """Operation requires a Hurwitz state matrix but got an unstable one."""


class ResonanceError(NumericalError):
    """Frequency response requested on an imaginary-axis pole."""

    def __init__(self, omega, rcond):
        super().__init__(f"(i*{omega:g}*I - A) is singular (rcond={rcond:.3g})")
        self.omega = omega
        self.rcond = rcond


class InfiniteNormError(NumericalError):
    """H2-type norm of a system with direct feedthrough."""


class WellPosednessError(NumericalError):
    """Algebraic loop of an interconnection cannot be solved."""


class ConditioningError(NumericalError):
    """A Gram/distance matrix is too ill-conditioned to factorize."""


class FitError(GridboError):
    """Every hyperparameter restart failed."""


class SynthesisError(GridboError):
    """No stabilizing controller was found within the budget."""

    def __init__(self, message, best_abscissa=float("inf"), best=None):
        super().__init__(message)
        self.best_abscissa = best_abscissa
        self.best = best


class AllocationError(GridboError):
    """Allocation aborted mid-loop; carries the partial results."""

    def __init__(self, message, selection=None, trace=None, controller=None):
        super().__init__(message)
        self.selection = selection
        self.trace = trace if trace is not None else []
        self.controller = controller
