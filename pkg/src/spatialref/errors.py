"""Exception hierarchy shared by every module."""


class SpatialRefError(Exception):
    """Base class for all library errors."""


class ValidationError(SpatialRefError, ValueError):
    """Input data violates a type invariant or schema."""


class BoundsError(SpatialRefError, IndexError):
    """A pixel coordinate lies outside the image."""


class DomainError(SpatialRefError, ValueError):
    """A numeric argument is outside the operation's domain."""


class BehindCameraError(DomainError):
    """Projection of a point with non-positive depth."""


class ConfigurationError(SpatialRefError, ValueError):
    """A threshold or grid parameter is unusable."""


class UsageError(SpatialRefError, ValueError):
    """Wrong arity, missing binding or otherwise malformed call."""


class MissingAnnotationError(SpatialRefError, KeyError):
    """A relation needs an annotation (e.g. orientation) the object lacks."""


class InvalidQueryError(SpatialRefError, ValueError):
    """A free-space query cannot be posed on this scene."""


class GenerationError(SpatialRefError, RuntimeError):
    """QA generation could not satisfy the requested constraints."""


class ScoringError(SpatialRefError, ValueError):
    """A prediction cannot be scored (e.g. it holds no points)."""
