"""Exception types raised by memstab."""


class MemstabError(Exception):
    """Base class for all memstab errors."""


class DefectivePair(MemstabError):
    """The two coupled eigenvalues of a mode coincide (or the eigenvector is singular)."""

    def __init__(self, sigma, message=None):
        self.sigma = sigma
        super().__init__(message or f"defective eigenpair at sigma={sigma!r}")


class GridTooCoarse(MemstabError):
    """Physical grid cannot represent the retained modes (or their products)."""


class ShiftOnEigenvalue(MemstabError):
    """-nu coincides (within tolerance) with the real part of an eigenvalue."""


class HautusFail(MemstabError):
    """Some unstable eigenspace is invisible to the control operator."""

    def __init__(self, offending):
        self.offending = list(offending)
        super().__init__(f"Hautus condition fails for modes {self.offending}")


class NoStabilizingSolution(MemstabError):
    """The Hamiltonian matrix has eigenvalues on (or near) the imaginary axis."""


class IllConditioned(MemstabError):
    """Stable invariant subspace basis is too ill-conditioned to recover P."""


class DimensionMismatch(MemstabError, ValueError):
    pass


class NoConvergence(MemstabError):
    def __init__(self, iterations, last_residual):
        self.iterations = iterations
        self.last_residual = last_residual
        super().__init__(
            f"no convergence after {iterations} iterations "
            f"(last residual {last_residual:.3e})"
        )


class BlowUp(MemstabError):
    """State norm left the configured guard; the run is outside the small-data regime."""

    def __init__(self, t, norm, guard):
        self.t = t
        self.norm = norm
        self.guard = guard
        super().__init__(f"|z| = {norm:.3e} exceeds guard {guard:.3e} at t = {t:.4g}")


class DegenerateFit(MemstabError):
    """Norm series underflowed; decay is faster than the measurement floor."""
