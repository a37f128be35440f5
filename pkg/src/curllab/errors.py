"""Typed failure modes shared across the solver and application layers."""

from __future__ import annotations


class CurlLabError(Exception):
    """Base class for the package's typed errors."""


class IncompatibleData(CurlLabError):
    """Problem data violates a solvability condition (e.g. int h != 0)."""


class NonSolenoidalSource(CurlLabError):
    """A source that must be discretely divergence-free (and compactly
    supported) is not."""


class IndefiniteOperator(CurlLabError):
    """Conjugate gradients met a direction of non-positive curvature; the
    operator breaks the SPD contract."""


class MaxIterExceeded(CurlLabError):
    """Iteration budget exhausted before the tolerance was met.

    Carries the best iterate and its residual so callers can inspect or
    accept the partial result.
    """

    def __init__(self, message, iterate=None, residual=None, iterations=None):
        super().__init__(message)
        self.iterate = iterate
        self.residual = residual
        self.iterations = iterations


class NonConvergence(CurlLabError):
    """A fixed-point outer loop did not converge.

    Carries the iteration trace and the best iterate reached.
    """

    def __init__(self, message, trace=None, best=None):
        super().__init__(message)
        self.trace = trace
        self.best = best
