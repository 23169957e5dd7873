"""Dynamic creative optimization on synthetic data.

Stage 1 searches per-field-pair interaction operators for a CTR model and
distills an attention teacher into a listwise reranker; stage 2 runs a
context-free bandit over each product's top creatives. Everything is plain
numpy with hand-derived gradients.
"""
from .errors import (DcoError, EmptyDataset, IncompatibleModel, InvalidArgument, InvalidConfig,
                     NumericalFailure, SearchDiverged)
from .numerics import RngStream

__version__ = "0.1.0"

__all__ = ["DcoError", "EmptyDataset", "IncompatibleModel", "InvalidArgument", "InvalidConfig",
           "NumericalFailure", "RngStream", "SearchDiverged", "__version__"]
