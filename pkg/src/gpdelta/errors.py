"""Exception and warning types shared across the package."""


class GpDeltaError(Exception):
    """Base class for all package-specific errors."""


class DimensionError(GpDeltaError, ValueError):
    """Array arguments disagree in shape or dimensionality."""


class NotPositiveDefinite(GpDeltaError):
    """Regularized kernel matrix is not positive definite.

    Usually means duplicated (or near-duplicated) training inputs with
    no noise/jitter on the diagonal; retry with a larger jitter.
    """


class ResourceLimit(GpDeltaError):
    """A requested computation exceeds a configured memory/size gate."""


class IoError(GpDeltaError, OSError):
    """File could not be read or written."""


class FormatError(GpDeltaError, ValueError):
    """File exists but is not a valid bundle/config of the expected version."""


class StaleBundle(GpDeltaError):
    """Derivative bundle does not match the model it is applied to."""


class DoubleApply(GpDeltaError):
    """Incremental correction applied twice for the same training point."""


class UnsupportedIncrementalMode(GpDeltaError):
    """Incremental application requested in a mode that does not support it."""


class InvalidRadius(GpDeltaError, ValueError):
    """Convergence radius must lie strictly inside (0, 1)."""


class DeltaBoundWarning(UserWarning):
    """A perturbation exceeded the documented validity bound (non-fatal)."""
