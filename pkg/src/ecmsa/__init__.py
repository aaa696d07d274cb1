"""Cross-modal self-attention for language-conditioned saliency, on a small numpy autodiff core."""

__version__ = "0.1.0"

from .errors import (DegenerateGroundTruth, DuplicateId, EcmsaError, EmptyCaption, FormatError,
                     MissingEmbedding, MissingPrediction, NumericError, ShapeError, UsageError,
                     ValidationError)
from .rng import Rng, fnv1a64
from .tensor import Tensor, no_grad

__all__ = [
    "__version__", "Rng", "fnv1a64", "Tensor", "no_grad",
    "EcmsaError", "ShapeError", "NumericError", "UsageError", "ValidationError",
    "EmptyCaption", "MissingEmbedding", "DuplicateId", "MissingPrediction",
    "DegenerateGroundTruth", "FormatError",
]
