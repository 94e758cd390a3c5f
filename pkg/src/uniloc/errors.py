"""Exception types shared across the pipeline."""


class UnilocError(Exception):
    """Base class for all package errors."""


class ConfigError(UnilocError):
    """Invalid configuration value or missing required setting."""


class EmptyRegion(UnilocError):
    """A sampling filter selected an empty (measure-zero) region."""


class NoPaths(UnilocError):
    """Every candidate propagation path is blocked; map/config defect."""


class DegenerateInput(UnilocError):
    """Input matrix is identically zero or otherwise unusable."""


class EmptyEstimates(UnilocError):
    """An operation requiring at least one path estimate got none."""


class RangeTooShort(UnilocError):
    """c*tau does not reach the user height plane."""


class InfeasibleMarginals(UnilocError):
    """Transport marginals do not sum to the same mass."""


class NumericalUnderflow(UnilocError):
    """Sinkhorn kernel vanished in linear-domain mode."""


class DimensionMismatch(UnilocError):
    """Feature/model dimensions disagree."""


class DegenerateGeometry(UnilocError):
    """Reference points are collinear/rank-deficient for an affine fit."""


class LengthMismatch(UnilocError):
    """Paired sequences have different lengths."""


class StaleArtifact(UnilocError):
    """An artifact's provenance hash does not match its inputs."""
