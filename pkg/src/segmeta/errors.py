"""Exception types shared across the toolkit."""


class SegmetaError(Exception):
    """Base class for all toolkit errors."""


class FormatError(SegmetaError):
    """A file does not follow its declared on-disk grammar."""


class TruncationError(FormatError):
    """A binary payload is shorter (or longer) than its header promises."""


class DataError(SegmetaError):
    """Values violate a numeric contract (non-finite, out of range)."""


class ShapeError(SegmetaError):
    """Dimension mismatch between inputs, or a disallowed shape."""


class EmptyDataError(SegmetaError):
    """An operation received no usable data."""


class InsufficientDataError(SegmetaError):
    """Too few groups, classes or samples to fit a model."""


class MissingLabelError(SegmetaError):
    """A (dataset, method) score cell is absent."""


class ConsistencyError(SegmetaError):
    """Two inputs that must describe the same datasets disagree."""


class ConfigError(SegmetaError):
    """Bad configuration file, flag or infeasible settings."""


class ConvergenceError(SegmetaError):
    """Training produced a non-finite loss."""
