"""Exception and warning classes raised by robustgrowth."""


class RobustGrowthError(Exception):
    """Base class for all package errors."""


class ModelError(RobustGrowthError, ValueError):
    """Invalid model, domain or grid definition."""


class InvalidDomain(ModelError):
    pass


class BadResolution(ModelError):
    pass


class EvaluatorFailure(ModelError):
    """A model evaluator returned non-finite values at an interior node."""


class ParamViolation(ModelError):
    pass


class PDViolation(ModelError):
    pass


class QuadratureOverflow(RobustGrowthError, ArithmeticError):
    pass


class DivideByZeroDensity(RobustGrowthError, ArithmeticError):
    pass


class SolverError(RobustGrowthError, RuntimeError):
    pass


class SingularSystem(SolverError):
    pass


class NoConvergence(SolverError):
    pass


class OutOfDomain(RobustGrowthError, ValueError):
    pass


class BadNesting(ModelError):
    pass


class MeanNotZero(SolverError):
    """Slice right-hand side fails the zero-mean compatibility condition."""


class SingularSlice(SolverError):
    pass


class WrongSetting(RobustGrowthError, ValueError):
    pass


class ResolutionTooCoarse(ModelError):
    pass


class StepRejectionOverflow(RobustGrowthError, RuntimeError):
    pass


class InsufficientPaths(RobustGrowthError, ValueError):
    pass


class BoundViolated(UserWarning):
    """Per-slice norm bound exceeded by more than the allowed slack."""


class ResolutionWarning(UserWarning):
    pass
