"""Exception types shared across the pipeline stages."""


class PipelineError(Exception):
    """Base class for all errors raised by this package."""


class FormatError(PipelineError):
    """A file does not match its declared on-disk format."""


class ShapeError(PipelineError):
    """Array dimensions disagree with what an operation requires."""


class DataError(PipelineError):
    """Values are invalid: non-finite entries, unknown labels, missing ground truth."""


class AlignmentError(PipelineError):
    """Two inputs that must share a clock or a shape do not line up."""


class ConfigError(PipelineError):
    """A configuration value is out of range or inconsistent."""


class NumericalError(PipelineError):
    """A numerical routine failed beyond recovery (singular covariance, NaN loss)."""


class StateError(PipelineError):
    """An operation was attempted in the wrong session or pipeline state."""


class EmptyDataError(PipelineError):
    """An operation received or produced no usable data."""
