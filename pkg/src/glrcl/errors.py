"""Exception types raised across the package."""


class GlrclError(Exception):
    """Base class for every error this package raises deliberately."""


class DimensionMismatch(GlrclError):
    """Operand shapes are incompatible."""


class NotPositiveDefinite(GlrclError):
    """Cholesky factorization hit a non-positive pivot."""


class TooFewSamples(GlrclError):
    """Fewer data rows than mixture components."""


class DegenerateData(GlrclError):
    """Data carries zero total variance; no covariance can be estimated."""


class MalformedGenerator(GlrclError):
    """Generator bytes fail magic/version/length/invariant checks."""


class InvalidArchitecture(GlrclError):
    """Layer dimension list cannot define a network."""


class LabelOutOfRange(GlrclError):
    """A class label falls outside [0, num_classes)."""


class ShapeMismatch(GlrclError):
    """Gradient or optimizer state shaped unlike the parameters."""


class DuplicateDomain(GlrclError):
    """The generator pool already holds entries for this domain."""


class MalformedFeatureFile(GlrclError):
    """Feature file fails magic/version/length/label checks."""


class InconsistentStream(GlrclError):
    """Feature files disagree on dimensionality or class alphabet."""


class InvalidSpec(GlrclError):
    """Synthetic stream specification violates its invariants."""


class IoFailure(GlrclError):
    """Filesystem write failed."""


class OutOfOrderRow(GlrclError):
    """Accuracy matrix rows must be recorded sequentially."""


class RangeViolation(GlrclError):
    """Accuracy outside the [0, 100] percent range."""


class IncompleteMatrix(GlrclError):
    """Metric requested before all rows were recorded."""


class UndefinedForSingleTask(GlrclError):
    """BWT needs at least two completed tasks."""


class ConfigError(GlrclError):
    """Experiment configuration failed validation."""
