"""Exception types shared across the package.

The CLI maps these onto its exit-code contract: usage errors exit with 2,
solver failures with 3, quantitative check failures with 1.
"""


class UsageError(ValueError):
    """Invalid arguments, configuration, or preconditions supplied by the caller."""


class DomainError(ValueError):
    """Numerically invalid state handed to an evaluator (e.g. non-finite input)."""


class SolverFailure(RuntimeError):
    """The implicit-step nonlinear solver did not reach the residual tolerance.

    Carries the last iterate and residual so callers can diagnose the step.
    """

    def __init__(self, message, last_iterate=None, residual=None, step_index=None):
        super().__init__(message)
        self.last_iterate = last_iterate
        self.residual = residual
        self.step_index = step_index
