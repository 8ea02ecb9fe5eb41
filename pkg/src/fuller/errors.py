"""Exception taxonomy shared across the package."""


class FullerError(Exception):
    """Base class for all package errors."""


# ---- model / class algebra ------------------------------------------------

class UnknownGenerator(FullerError):
    """A word uses a letter not declared by the model's alphabet."""


class ConstantClass(FullerError):
    """Operation requires a nonconstant free homotopy class."""


class UnsupportedModel(FullerError):
    """The model is outside the supported family for this operation."""


# ---- flows ----------------------------------------------------------------

class StepUnderflow(FullerError):
    """Adaptive step size fell below 1e-14."""


class NonFinite(FullerError):
    """A vector field evaluated to a non-finite value."""


class DegenerateFinslerHessian(FullerError):
    """Fiber Hessian of the Finsler energy is singular at a sampled point."""


# ---- orbits ---------------------------------------------------------------

class NoReturn(FullerError):
    """Trajectory did not re-cross the section within the time bound."""


class NewtonDiverged(FullerError):
    """Newton iteration failed to converge."""


class TangentialCrossing(FullerError):
    """Section crossing is not transverse."""


class IllConditioned(FullerError):
    """Flow-direction eigenvalue could not be separated from the spectrum."""


class DegenerateUnsupported(FullerError):
    """Degenerate multipliers with no applicable index fallback."""


class AmbiguousMultiplicity(FullerError):
    """Loop-shift and class-power multiplicity tests disagree."""


class IndexUndefined(FullerError):
    """An orbit has no defined fixed-point index."""


# ---- geodesics ------------------------------------------------------------

class NotHyperbolicElement(FullerError):
    """Word evaluates to a matrix with |trace| <= 2."""


class NoConvergence(FullerError):
    """A variational seed failed to converge (reported per seed)."""


class AllSeedsFailed(FullerError):
    """No variational seed converged."""


class SpectralGapTooSmall(FullerError):
    """Reparametrization zero mode cannot be separated from the spectrum."""


# ---- invariant ------------------------------------------------------------

class PerturbationRequired(FullerError):
    """A degenerate family of geodesics was detected; add a bump and retry."""


class ClassIsPower(FullerError):
    """The class is a proper power, so the Morse-count route does not apply."""


class OrbitBoundExceeded(FullerError):
    """Holonomy orbit closure exceeded its bound; infinite orbit suspected."""
