"""Exception and warning types shared across the package."""


class DriftHomError(Exception):
    """Base class for all package errors."""


class ValidationError(DriftHomError, ValueError):
    """A parameter or config value violates a documented invariant."""


class ParseError(DriftHomError, ValueError):
    """Config file could not be parsed; carries line information when known."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DivergenceError(DriftHomError, ValueError):
    """Input vector field is not divergence-free to the required tolerance."""

    def __init__(self, max_divergence, tol):
        self.max_divergence = max_divergence
        self.tol = tol
        super().__init__(
            f"drift field is not divergence-free: max |div b| = {max_divergence:.3e} "
            f"exceeds tolerance {tol:.1e}"
        )


class NonConvergence(DriftHomError, RuntimeError):
    """Iterative solve exhausted its budget; carries the residual history."""

    def __init__(self, message, residual_history=()):
        self.residual_history = list(residual_history)
        super().__init__(message)


class IllPosed(DriftHomError, RuntimeError):
    """A delta = 0 solve whose zero-mode handling failed."""


class EllipticityViolation(DriftHomError, RuntimeError):
    """Computed effective matrix lost the guaranteed lower ellipticity bound,
    which signals a solver or discretization fault rather than a modeling one."""


class EllipticityError(DriftHomError, ValueError):
    """A coefficient matrix that must be elliptic is not."""


class ResolutionError(DriftHomError, ValueError):
    """Quadrature step too coarse to resolve the requested time compression."""


class StabilityError(DriftHomError, ValueError):
    """Time step violates the advective stability constraint."""


class BlowUp(DriftHomError, RuntimeError):
    """Solution exceeded the comparison-principle bound; the scheme is at fault."""


class InsufficientSamples(DriftHomError, ValueError):
    """Statistical test invoked with too few samples to mean anything."""


class DimensionMismatch(DriftHomError, ValueError):
    """Two samples that must share a dimension do not."""


class PlanarStreamWarning(UserWarning):
    """Stream-matrix recovery invoked in d = 2, where the whole-space existence
    theory needs d >= 3; the periodic discrete solve is well-posed anyway, so
    results are surrogate-only."""


class NonMonotoneWarning(UserWarning):
    """A sequence expected to shrink (regularization sweep) failed to."""


class SlowMixingWarning(UserWarning):
    """Lag-sum truncation tail has not decayed below the standard error."""
