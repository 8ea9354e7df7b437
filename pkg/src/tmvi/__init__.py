"""Variational inference with monotone Bernstein transformation flows."""

__version__ = "0.1.0"

from .engine import GaussianFamily, MeanFieldPosterior, TMFamily, TrainConfig, train  # noqa: E402
from .estimator import VariationalPosterior  # noqa: E402
from .flow import FlowConfig  # noqa: E402
from .models import BernoulliModel, CauchyLocationModel, Dataset, MLPRegressionModel  # noqa: E402

__all__ = [
    "BernoulliModel",
    "CauchyLocationModel",
    "Dataset",
    "FlowConfig",
    "GaussianFamily",
    "MLPRegressionModel",
    "MeanFieldPosterior",
    "TMFamily",
    "TrainConfig",
    "VariationalPosterior",
    "train",
]
