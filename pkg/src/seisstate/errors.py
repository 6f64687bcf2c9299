"""Exception hierarchy shared across the package.

Every error raised on a documented contract violation derives from
:class:`SeisStateError`, so callers (notably the CLI) can separate data
problems from programming errors.
"""


class SeisStateError(Exception):
    """Base class for all contract violations raised by this package."""


class ConfigError(SeisStateError):
    """Invalid or inconsistent configuration."""


# --- ingestion -------------------------------------------------------------

class EmptyFile(SeisStateError):
    """Input file contains no data rows."""


class MalformedRow(SeisStateError):
    """A row could not be parsed into the documented schema."""


class NonUniformSampling(SeisStateError):
    """Consecutive timestamps do not advance by exactly one sample interval."""


class NoOverlap(SeisStateError):
    """Series spans have an empty intersection."""


class MixedSampleRate(SeisStateError):
    """Series in a batch disagree on the sample interval."""


# --- dsp -------------------------------------------------------------------

class InvalidSpec(SeisStateError):
    """A design/scenario specification violates its invariants."""


class SeriesTooShort(SeisStateError):
    """Series has too few samples for the requested operation."""


class StrideMismatch(SeisStateError):
    """Averaging stride is not an integer multiple of the sample interval."""


# --- features --------------------------------------------------------------

class WindowTooLong(SeisStateError):
    """Window length exceeds the available batch span."""


class EmptyWindow(SeisStateError):
    """A window contains no samples."""


class DegenerateInput(SeisStateError):
    """Not enough rows/points to fit the requested statistic."""


class NonPositiveForLog(SeisStateError):
    """log10 pre-transform requested on non-positive values."""


class DimensionMismatch(SeisStateError):
    """Vector length does not match the fitted dimensionality."""


# --- clustering ------------------------------------------------------------

class EmptyData(SeisStateError):
    """No data points supplied."""


class KTooLarge(SeisStateError):
    """Requested more clusters than data points."""


class ShapeMismatch(SeisStateError):
    """Array shapes are inconsistent."""


class SingleCluster(SeisStateError):
    """Validation index requires at least two non-empty clusters."""


class CoincidentCentroids(SeisStateError):
    """Two cluster centroids coincide; index is undefined."""


# --- labeling --------------------------------------------------------------

class RuleMatchesNoChannel(SeisStateError):
    """A threshold rule's predicate matches no channel in the layout."""


class LayoutMismatch(SeisStateError):
    """Vector length does not match the feature layout."""


class MissingLabel(SeisStateError):
    """A cluster id in the assignments has no label."""


# --- evaluation ------------------------------------------------------------

class EmptyTimeline(SeisStateError):
    """Timeline contains no windows."""
