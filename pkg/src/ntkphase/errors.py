"""Exception types shared across the package."""


class NtkPhaseError(Exception):
    """Base class for all package-specific errors."""


class CovarianceDomainError(NtkPhaseError, ValueError):
    """Off-diagonal covariance outside the admissible range for the map."""


class NonConvergenceError(NtkPhaseError, RuntimeError):
    """Fixed-point iteration did not converge; carries the last iterate."""

    def __init__(self, message: str, last_iterate: float):
        super().__init__(f"{message} (last iterate: {last_iterate!r})")
        self.last_iterate = last_iterate


class BracketError(NtkPhaseError, ValueError):
    """Root-finding bracket does not enclose a sign change."""


class UndefinedPredictionError(NtkPhaseError, ValueError):
    """Requested asymptotic prediction is not defined for this configuration."""


class DiagonalDriftError(NtkPhaseError, RuntimeError):
    """Kernel diagonal drifted away from the variance fixed point."""


class ZeroRowError(NtkPhaseError, ValueError):
    """Input row has zero norm and cannot be normalized."""


class WindowError(NtkPhaseError, ValueError):
    """Convolution window exceeds the spatial extent."""


class StepSizeError(NtkPhaseError, RuntimeError):
    """ODE step size too large to hold the integration invariant."""


class SingularKernelError(NtkPhaseError, RuntimeError):
    """Train-train kernel is numerically singular; carries the minimum eigenvalue."""

    def __init__(self, message: str, min_eigenvalue: float):
        super().__init__(f"{message} (min eigenvalue: {min_eigenvalue:.3e})")
        self.min_eigenvalue = min_eigenvalue


class IllConditionedError(NtkPhaseError, RuntimeError):
    """Data-dependent block is too ill-conditioned for the requested identity."""
