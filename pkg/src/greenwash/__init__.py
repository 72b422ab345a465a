"""Scoring political ads for greenwashing with a two-stage ideal-point model.

Submodules cover ingest, keyword filtering, annotation, the IRT model,
impression-weighted aggregation, the page similarity network, OLS,
synthetic data and the command line.
"""

__version__ = "0.1.0"

from .matrix import MISSING, IndicatorMatrix, ItemDescriptor, load_matrix

__all__ = ["MISSING", "IndicatorMatrix", "ItemDescriptor", "load_matrix", "__version__"]
