"""Exception hierarchy shared by all modules.

Structural errors (malformed inputs, shape or index mismatches) are kept
distinct from numerical/domain failures so that callers -- most notably the
command line -- can map them onto different exit codes.
"""


class KKError(Exception):
    """Base class for every error raised by this package."""


class StructuralError(KKError):
    """Malformed input data: overlapping index sets, wrong shapes, bad schema."""


class DomainError(KKError, ValueError):
    """A numerical precondition is violated (non-finite input, singular matrix...)."""


class ChartDomainError(DomainError):
    """A coset coordinate lies outside the trusted chart ball."""


class DegenerateFrameError(DomainError):
    """The Maurer-Cartan coframe is (numerically) singular."""


class MetricError(DomainError):
    """A metric fails to be symmetric positive-definite."""

    def __init__(self, message, eigenvalue=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class FactorizationError(DomainError):
    """Cholesky-type factorization of a non positive-definite matrix."""

    def __init__(self, message, eigenvalue=None):
        super().__init__(message)
        self.eigenvalue = eigenvalue


class ExpressionError(StructuralError):
    """An instance-file expression could not be parsed or uses forbidden names."""


class RunFailure(KKError):
    """A simulation run was rejected (e.g. too many aborted paths)."""


class MetadataMismatch(KKError):
    """Two estimates or path ensembles do not come from compatible runs."""


class AbortRateWarning(UserWarning):
    """More than 1% of the simulated paths were aborted."""
