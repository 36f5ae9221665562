"""Exception hierarchy shared by every module."""

from __future__ import annotations


class MMRiskError(Exception):
    """Base class for all library errors."""


class SchemaError(MMRiskError, ValueError):
    """Malformed model input: wrong keys, shapes, ranges or mixture weights.

    ``path`` names the offending field, e.g. ``laws[1].pos_law[0].w``.
    """

    def __init__(self, path: str, message: str) -> None:
        self.path = path
        super().__init__(f"{path}: {message}")


class ModelError(MMRiskError, ValueError):
    """Mathematically invalid model (non-generator Q, reducible chain, ...)."""

    def __init__(self, path: str, message: str) -> None:
        self.path = path
        super().__init__(f"{path}: {message}")


class UnsupportedError(MMRiskError):
    """Operation not defined for this model, e.g. nonzero switching jumps."""


class DriftError(MMRiskError):
    """The drift has the wrong sign for the requested quantity."""


class PipelineError(MMRiskError):
    """Numerical failure inside an analytic pipeline."""


class DomainError(PipelineError, ValueError):
    """Transform argument outside the region where the cumulant is finite."""


class SingularityError(PipelineError, ArithmeticError):
    """A matrix that must be inverted is (numerically) singular."""


class NoRootError(PipelineError):
    """No Lundberg exponent: k(r) has no sign change on (0, r_hi)."""


class SpectralError(PipelineError):
    """Eigenpair outside the Perron regime (not simple or not positive)."""


class MultiplicityError(PipelineError):
    """Repeated pole detected where simple poles are required."""


class ImproperRationalError(PipelineError):
    """Numerator degree exceeds denominator degree."""


class ConsistencyError(PipelineError):
    """Pipeline output violates a probabilistic constraint."""


class DegenerateSampleError(MMRiskError):
    """A simulation produced no events of the requested kind."""
