"""Parallel-corpus semantic divergence toolkit.

Builds noisy synthetic supervision from any bitext, trains a cross-lingual
pairwise word interaction similarity model plus two baselines, evaluates them
with per-class precision/recall/F, and filters a corpus by divergence score.
"""

__version__ = "0.1.0"

from .errors import ConfigError, DataError, DivergescopeError, NumericalError

__all__ = [
    "ConfigError",
    "DataError",
    "DivergescopeError",
    "NumericalError",
    "__version__",
]
