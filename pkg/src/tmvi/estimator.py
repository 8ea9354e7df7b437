"""scikit-learn style front end for mean-field variational inference."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_array, check_is_fitted, column_or_1d

from . import autodiff as ad
from .engine import (
    GaussianFamily,
    MeanFieldPosterior,
    PredictiveBands,
    TMFamily,
    TrainConfig,
    negative_elbo,
    posterior_predictive,
    train,
)
from .flow import FlowConfig
from .models import BernoulliModel, Dataset, LikelihoodModel, MLPRegressionModel
from .oracles import DensityGrid

FAMILIES = ("tm", "gaussian")


class VariationalPosterior(BaseEstimator):
    """Fit a mean-field variational posterior for ``model`` by maximizing a Monte-Carlo ELBO.

    Parameters
    ----------
    model : LikelihoodModel
        Prior and likelihood. Defaults to ``BernoulliModel()``.
    family : {"tm", "gaussian"}
        Bernstein transformation flows or Gaussians, one per model parameter.
    degree : int
        Bernstein degree M (``family="tm"`` only).
    n_samples : int
        Monte-Carlo draws T per optimization step.
    n_steps : int
        Adam iterations.
    learning_rate : float
    init_low, init_high : float
        Initial support of the Bernstein stage.
    squash_output : bool or None
        Push draws through a final sigmoid; ``None`` uses the model default.
    gaussian_init_sd : float
        Starting standard deviation for ``family="gaussian"``.
    location_jitter : float
        Standard deviation of random offsets added to each starting location;
        wide networks need this to break the symmetry between hidden units.
    random_state : int
        Seed for the base-noise stream.

    Attributes
    ----------
    posterior_ : MeanFieldPosterior
    trace_ : ElboTrace
    n_params_ : int
    """

    def __init__(
        self,
        model: LikelihoodModel | None = None,
        family: str = "tm",
        degree: int = 10,
        n_samples: int = 50,
        n_steps: int = 3000,
        learning_rate: float = 0.01,
        init_low: float = -3.0,
        init_high: float = 3.0,
        squash_output: bool | None = None,
        gaussian_init_sd: float = 1.0,
        location_jitter: float = 0.0,
        random_state: int = 1,
    ):
        self.model = model
        self.family = family
        self.degree = degree
        self.n_samples = n_samples
        self.n_steps = n_steps
        self.learning_rate = learning_rate
        self.init_low = init_low
        self.init_high = init_high
        self.squash_output = squash_output
        self.gaussian_init_sd = gaussian_init_sd
        self.location_jitter = location_jitter
        self.random_state = random_state

    def _model(self) -> LikelihoodModel:
        return BernoulliModel() if self.model is None else self.model

    def _family(self):
        if self.family not in FAMILIES:
            raise ValueError(f"family must be one of {FAMILIES}, got {self.family!r}")
        squash = self._model().default_squash if self.squash_output is None else bool(self.squash_output)
        if self.family == "tm":
            return TMFamily(FlowConfig(self.degree, squash, self.init_low, self.init_high))
        return GaussianFamily(squash, init_sd=self.gaussian_init_sd)

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            T=int(self.n_samples),
            steps=int(self.n_steps),
            learning_rate=float(self.learning_rate),
            seed=int(self.random_state),
        )

    def _dataset(self, X, y) -> Dataset:
        model = self._model()
        if isinstance(model, MLPRegressionModel):
            if y is None:
                raise ValueError("regression models need targets y")
            X = check_array(X, ensure_2d=False)
            y = column_or_1d(check_array(y, ensure_2d=False), warn=True)
            X = X.ravel() if X.ndim == 1 or X.shape[1] == 1 else None
            if X is None:
                raise ValueError("MLP regression takes a single input feature")
            if X.size != y.size:
                raise ValueError(f"X has {X.size} rows but y has {y.size}")
            return Dataset(targets=y, inputs=X)
        # unconditional models: the observations are the data
        obs = X if y is None else y
        obs = check_array(obs, ensure_2d=False, ensure_min_samples=0)
        return Dataset(targets=np.ravel(obs))

    def fit(self, X, y=None):
        """Run the optimizer; unconditional models take their observations as ``X``."""
        data = self._dataset(X, y)
        model = self._model()
        family = self._family()
        jitter_rng = np.random.default_rng([int(self.random_state), 5])
        start = MeanFieldPosterior.initialize(family, model.n_params, float(self.location_jitter), jitter_rng)
        self.posterior_, self.trace_ = train(start, model, data, self.train_config())
        self.n_params_ = model.n_params
        return self

    def sample(self, n_samples: int = 1, random_state=None) -> np.ndarray:
        """Draws of shape (n_samples, n_params_)."""
        check_is_fitted(self, "posterior_")
        return self.posterior_.draw(n_samples, np.random.default_rng(random_state)).T

    def log_density(self, points, param_index: int = 0) -> np.ndarray:
        check_is_fitted(self, "posterior_")
        return self.posterior_.log_density(param_index, np.asarray(points, dtype=float))

    def density_grid(self, points, param_index: int = 0) -> DensityGrid:
        return DensityGrid(points, np.exp(self.log_density(points, param_index)))

    def predict_quantiles(self, X, n_draws: int = 2000, random_state=0) -> PredictiveBands:
        check_is_fitted(self, "posterior_")
        model = self._model()
        if not isinstance(model, MLPRegressionModel):
            raise TypeError("posterior predictive bands need a regression model")
        X = check_array(X, ensure_2d=False)
        return posterior_predictive(self.posterior_, model, np.ravel(X), n_draws, np.random.default_rng(random_state))

    def predict(self, X) -> np.ndarray:
        """Posterior-predictive mean of mu(x)."""
        return self.predict_quantiles(X).mean

    def score(self, X, y=None, n_draws: int = 1000, random_state=0) -> float:
        """Monte-Carlo ELBO of the fitted posterior on the given data."""
        check_is_fitted(self, "posterior_")
        data = self._dataset(X, y)
        z = np.random.default_rng(random_state).standard_normal((self.n_params_, n_draws))
        loss = negative_elbo(self.posterior_.raw.ravel(), self.posterior_.family, self._model(), data, z)
        return -float(ad.value(loss))
