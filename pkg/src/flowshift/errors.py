"""Exception hierarchy shared by every stage of the lifecycle."""


class FlowShiftError(Exception):
    """Base class for all package errors."""


class ConfigError(FlowShiftError):
    """Invalid or unknown configuration."""


class DataError(FlowShiftError):
    """Malformed or unusable input data (bad CSV, wrong dimension, single class)."""


class StateError(FlowShiftError):
    """An operation was called out of order, e.g. backward without forward."""


class NumericalError(FlowShiftError):
    """A non-finite value appeared in a loss or gradient."""


class SimilarityError(FlowShiftError):
    """Cosine similarity requested for a zero-norm vector."""


class BatchSkip(FlowShiftError):
    """A batch cannot produce a contrastive loss (too few normals or no abnormals)."""
