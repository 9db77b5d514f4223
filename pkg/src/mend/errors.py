"""Exception types shared across the package.

The CLI maps these onto exit codes: ``DataError`` subclasses (and invalid
configuration) exit with 2, ``TooManySkips`` exits with 3.
"""


class MendError(Exception):
    """Base class for all package errors."""


class DataError(MendError):
    """Invalid input data: bad CSV, malformed dataset, mismatched shapes."""


class MissingColumn(DataError):
    pass


class NonNumericCell(DataError):
    pass


class LabelOutOfRange(DataError):
    """A time label is < 1, non-integer, or leaves some label in 1..T empty."""


class BadBinaryOutcome(DataError):
    """Outcome declared bernoulli but a value outside {0, 1} was found."""


class TooFewRows(DataError):
    pass


class FitError(MendError):
    """A model fit could not be completed."""


class SingularDesign(FitError):
    pass


class Separation(FitError):
    """Logistic-type fit did not converge; retry with ridge > 0."""


class AllRestartsDegenerate(FitError):
    """Every EM restart collapsed (mixing weight clamped and components identical)."""


class TooManySkips(MendError):
    """More than the tolerated fraction of CRT resamples were unusable."""


class SkipStatistic(Exception):
    """Control-flow signal: the statistic is undefined for this label vector.

    Raised by statistic functions when no candidate change point admits the
    required minimum segment sizes.  Not a subclass of :class:`MendError`;
    the CRT engine catches it per resample.
    """


class DegenerateDesign(UserWarning):
    """A zero-variance feature column was dropped (its coefficient forced to 0)."""
