"""Exception hierarchy.

Every error raised on purpose by this package derives from :class:`TvldsError`.
The two families map onto CLI exit codes: :class:`ValidationError` (bad input,
exit 2) and :class:`NumericalError` (degenerate data or non-convergence,
exit 3).
"""


class TvldsError(Exception):
    """Base class for all package errors."""


class ValidationError(TvldsError, ValueError):
    """Input violates a documented invariant."""


class DimensionError(ValidationError):
    pass


class DomainError(ValidationError):
    """Argument outside the set where the operation is defined."""


class InstabilityError(ValidationError):
    """Transition matrix has spectral radius >= 1."""


class NumericalError(TvldsError, ArithmeticError):
    """Data or iterates are numerically degenerate."""


class NonConvergenceError(NumericalError):
    pass


class InsufficientDataError(NumericalError):
    pass


class SingularDesignError(NumericalError):
    """Regression Gram matrix is (numerically) rank deficient."""


class NearSingularSigmaError(NumericalError):
    """Estimated stationary covariance is too close to singular to invert.

    The offending smallest eigenvalue is kept on ``lambda_min``.
    """

    def __init__(self, message, lambda_min):
        super().__init__(message)
        self.lambda_min = lambda_min


class DegenerateError(NumericalError):
    """Base for Kalman filter / smoother / M-step degeneracies."""


class DegenerateInnovationError(DegenerateError):
    pass


class DegeneratePredictionError(DegenerateError):
    pass


class DegenerateMStepError(DegenerateError):
    pass
