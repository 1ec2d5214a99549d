"""Mixtures of transparent local linear models.

Trains, bounds, and evaluates PAC-Bayesian mixtures of local linear
predictors for binary classification and regression, with known or
trainable points of interest.
"""

__version__ = "0.1.0"

from .backend import BACKEND_NAME

__all__ = ["BACKEND_NAME", "__version__"]
