"""Exception hierarchy shared by every module of the package."""


class EcmsaError(Exception):
    """Base class for all package errors."""


class ShapeError(EcmsaError, ValueError):
    pass


class NumericError(EcmsaError, FloatingPointError):
    """Raised when a forward op produces NaN or Inf."""


class UsageError(EcmsaError):
    pass


class ValidationError(EcmsaError, ValueError):
    pass


class EmptyCaption(ValidationError):
    pass


class MissingEmbedding(ValidationError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class DuplicateId(ValidationError):
    pass


class MissingPrediction(ValidationError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


class DegenerateGroundTruth(ValidationError):
    pass


class FormatError(ValidationError):
    """Malformed binary or text file."""
