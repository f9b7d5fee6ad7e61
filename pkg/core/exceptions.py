"""Error hierarchy shared by every implicitnav app."""


class ImplicitNavError(Exception):
    """Base class for all library errors."""


class ConfigError(ImplicitNavError, ValueError):
    """Invalid or unknown configuration value."""


class DimensionError(ImplicitNavError, ValueError):
    """Arrays or images with incompatible shapes."""


class NearSingularityError(ImplicitNavError, ValueError):
    """Input lies at or too close to a singularity of the operation."""


class IngestionError(ImplicitNavError):
    """A dataset could not be read."""


class EmptySequenceError(IngestionError):
    """A dataset was read but yielded no usable observations."""


class EmptyInputError(ImplicitNavError, ValueError):
    """An operation received nothing to work on."""


class OutOfMapError(ImplicitNavError):
    """A query point has no stored map point within the search radius."""


class DivergenceError(ImplicitNavError):
    """An iterative optimization produced a non-finite or growing error."""


class SingularSystemError(ImplicitNavError):
    """A linear system was not positive definite."""


class InsufficientOverlapError(ImplicitNavError):
    """Too few observed points overlap the map for registration."""


class InsufficientDataError(ImplicitNavError, ValueError):
    """Too few samples to compute a statistic."""


class UndefinedSimilarityError(ImplicitNavError, ValueError):
    """Similarity requested between empty keypoint sets."""


class NoRouteError(ImplicitNavError):
    """Two frames are not connected in the topological map."""


class InvalidStartError(ImplicitNavError):
    """A plan was requested from a start in collision."""


class SegmentPlanningError(ImplicitNavError):
    """One segment of a multi-frame plan failed."""

    def __init__(self, message, segment_index=None, result=None):
        super().__init__(message)
        self.segment_index = segment_index
        self.result = result


class CheckpointError(ImplicitNavError):
    """A checkpoint file is malformed or has an unsupported version."""
