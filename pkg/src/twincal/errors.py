"""Exception hierarchy shared across the toolkit."""


class TwincalError(Exception):
    """Base class for all toolkit errors."""


# --- file layer ---------------------------------------------------------


class ParseError(TwincalError):
    """A histogram or dark-record file violates the documented CSV format."""


class DuplicateEntry(ParseError):
    """The same joint-count cell appears on more than one row."""


class EmptyHistogram(ParseError):
    """A count table contains no entries."""


# --- moments ------------------------------------------------------------


class NegativeMeanAfterSubtraction(TwincalError):
    """Dark mean exceeds the raw mean; the two records are inconsistent."""


class ZeroMeanArm(TwincalError):
    """A ratio estimator was requested with a nonpositive mean in the denominator."""


# --- field model --------------------------------------------------------


class SubPoissonianComponent(TwincalError):
    """Moments with variance < mean have no multimode-thermal representation."""


class CutoffOverflow(TwincalError):
    """The truncation grid for the requested tail mass exceeds the configured maximum."""


# --- detector model -----------------------------------------------------


class NumericalInstability(TwincalError):
    """Cancellation left a response entry above its relative accuracy budget."""

    def __init__(self, message: str, c: int | None = None, n: int | None = None):
        super().__init__(message)
        self.c = c
        self.n = n


class DimensionMismatch(TwincalError):
    """A response matrix does not cover the photon-number grid it is applied to."""


# --- calibrator ---------------------------------------------------------


class NoFeasibleRegion(TwincalError):
    """No scanned efficiency pair admits a valid field decomposition."""


class NonpositiveCovariance(NoFeasibleRegion):
    """Photoelectron covariance is not positive; the data carry no pairing signal."""


class InfeasiblePoint(TwincalError):
    """A candidate (eta_s, eta_i, mean_pairs) lies outside its feasible interval."""
