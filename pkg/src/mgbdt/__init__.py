"""Multi-layered gradient boosting decision trees trained by target propagation."""

from .gbdt_core import GBDTRegressor, RegressionTree, TreeGrowthParams, boost_more, fit_boosted, fit_tree, predict
from .layers import Layer, LinearClassifier, Loss
from .trainer import EpochTrace, MGBDTModel, TrainConfig, encode, fit, predict_model

__version__ = "0.1.0"

__all__ = [
    "GBDTRegressor", "RegressionTree", "TreeGrowthParams", "boost_more", "fit_boosted",
    "fit_tree", "predict", "Layer", "LinearClassifier", "Loss", "EpochTrace", "MGBDTModel",
    "TrainConfig", "encode", "fit", "predict_model",
]
