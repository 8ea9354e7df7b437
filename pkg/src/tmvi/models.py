"""Priors and likelihoods for the Bernoulli, Cauchy-location and MLP regression experiments.

Every model evaluates a *batch* of joint parameter draws at once: ``w`` has
shape (P, T) with one row per model parameter and one column per
Monte-Carlo sample. ``log_lik`` returns shape (T,), ``log_prior`` returns
the elementwise (P, T) prior terms so that mean-field KL estimates can be
split per parameter.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import betaln

from . import autodiff as ad
from .flow import FlowSampleBatch

LOG_PI = math.log(math.pi)


@dataclass(frozen=True)
class Dataset:
    targets: np.ndarray
    inputs: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self):
        object.__setattr__(self, "targets", np.asarray(self.targets, dtype=float).ravel())
        object.__setattr__(self, "inputs", np.asarray(self.inputs, dtype=float).ravel())
        if self.inputs.size and self.inputs.size != self.targets.size:
            raise ValueError(f"{self.inputs.size} inputs but {self.targets.size} targets")

    @property
    def n(self) -> int:
        return self.targets.size


def _check_open_unit(pi):
    v = ad.value(pi)
    if np.any(~((v > 0.0) & (v < 1.0))):
        raise ValueError("Bernoulli probability must lie strictly inside (0, 1)")


def bernoulli_log_lik(pi, data: Dataset):
    """sum_i y_i log(pi) + (1 - y_i) log(1 - pi); broadcasts over arrays of pi."""
    _check_open_unit(pi)
    successes = float(data.targets.sum())
    return successes * ad.log(pi) + (data.n - successes) * ad.log(1.0 - pi)


def beta_log_prior(pi, alpha: float, beta: float):
    if alpha <= 0 or beta <= 0:
        raise ValueError("Beta parameters must be positive")
    _check_open_unit(pi)
    return (alpha - 1.0) * ad.log(pi) + (beta - 1.0) * ad.log(1.0 - pi) - float(betaln(alpha, beta))


def cauchy_log_lik(xi, model: "CauchyLocationModel", data: Dataset):
    """Cauchy(xi, gamma) log-likelihood; ``xi`` may be a scalar or a (T,) batch."""
    y = data.targets.reshape((-1,) + (1,) * np.ndim(ad.value(xi)))
    resid = y - xi
    terms = math.log(model.gamma) - LOG_PI - ad.log(model.gamma**2 + resid * resid)
    return ad.sum(terms, axis=0)


def normal_log_prior(w, sd: float = 1.0, mean: float = 0.0):
    """Elementwise log N(w; mean, sd^2)."""
    if sd <= 0:
        raise ValueError("prior sd must be positive")
    return ad.norm_logpdf((w - mean) / sd) - math.log(sd)


@dataclass(frozen=True)
class LikelihoodModel:
    """Shared surface used by the VI engine."""

    default_squash = False

    @property
    def n_params(self) -> int:
        return 1

    def log_lik(self, w, data: Dataset):
        raise NotImplementedError

    def log_prior(self, w):
        raise NotImplementedError


@dataclass(frozen=True)
class BernoulliModel(LikelihoodModel):
    prior_alpha: float = 1.1
    prior_beta: float = 1.1

    default_squash = True

    def __post_init__(self):
        if self.prior_alpha <= 0 or self.prior_beta <= 0:
            raise ValueError("Beta prior parameters must be positive")

    def log_lik(self, w, data):
        return bernoulli_log_lik(w[0], data)

    def log_prior(self, w):
        return beta_log_prior(w, self.prior_alpha, self.prior_beta)


@dataclass(frozen=True)
class CauchyLocationModel(LikelihoodModel):
    gamma: float = 0.5
    prior_mean: float = 0.0
    prior_sd: float = 10.0

    def __post_init__(self):
        if self.gamma <= 0 or self.prior_sd <= 0:
            raise ValueError("gamma and prior_sd must be positive")

    def log_lik(self, w, data):
        return cauchy_log_lik(w[0], self, data)

    def log_prior(self, w):
        return normal_log_prior(w, self.prior_sd, self.prior_mean)


@dataclass(frozen=True)
class NormalMeanModel(LikelihoodModel):
    """y_i ~ N(mu, noise_sd^2) with a normal prior on mu; the posterior is closed-form."""

    noise_sd: float = 1.0
    prior_mean: float = 0.0
    prior_sd: float = 1.0

    def log_lik(self, w, data):
        mu = w[0]
        resid = data.targets.reshape((-1,) + (1,) * np.ndim(ad.value(mu))) - mu
        return ad.sum(ad.norm_logpdf(resid / self.noise_sd), axis=0) - data.n * math.log(self.noise_sd)

    def log_prior(self, w):
        return normal_log_prior(w, self.prior_sd, self.prior_mean)

    def posterior(self, data: Dataset) -> tuple[float, float]:
        precision = 1.0 / self.prior_sd**2 + data.n / self.noise_sd**2
        mean = (self.prior_mean / self.prior_sd**2 + data.targets.sum() / self.noise_sd**2) / precision
        return float(mean), float(precision**-0.5)


ACTIVATIONS = {"tanh": ad.tanh, "sigmoid": ad.sigmoid}


@dataclass(frozen=True)
class MLPRegressionModel(LikelihoodModel):
    """Fully connected net with scalar input and output; mu(x) feeds N(mu(x), noise_sd).

    Weights are packed layer by layer: the (fan_in, fan_out) kernel in
    row-major order, then that layer's fan_out biases.
    """

    layer_sizes: tuple = (1, 3, 1)
    activation: str = "tanh"
    noise_sd: float = 0.1
    prior_sd_per_weight: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "layer_sizes", tuple(int(s) for s in self.layer_sizes))
        if len(self.layer_sizes) < 2 or self.layer_sizes[0] != 1 or self.layer_sizes[-1] != 1:
            raise ValueError("layer_sizes must start and end with 1")
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {self.activation!r}; choose from {sorted(ACTIVATIONS)}")
        if self.noise_sd <= 0 or self.prior_sd_per_weight <= 0:
            raise ValueError("noise_sd and prior_sd_per_weight must be positive")

    @property
    def n_params(self) -> int:
        return sum((fi + 1) * fo for fi, fo in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))

    def log_lik(self, w, data):
        return gaussian_log_lik(w, self, data)

    def log_prior(self, w):
        return normal_log_prior(w, self.prior_sd_per_weight)


def _mlp_batch(w, model: MLPRegressionModel, x: np.ndarray):
    """mu(x) for weights w of shape (W, T) and inputs x of shape (n,); returns (T, n)."""
    act = ACTIVATIONS[model.activation]
    n_samples = ad.value(w).shape[1]
    h = np.asarray(x, dtype=float).reshape(1, -1, 1)
    offset = 0
    n_layers = len(model.layer_sizes) - 1
    for layer, (fi, fo) in enumerate(zip(model.layer_sizes[:-1], model.layer_sizes[1:])):
        kernel = ad.transpose(ad.reshape(w[offset : offset + fi * fo], (fi, fo, n_samples)), (2, 0, 1))
        offset += fi * fo
        bias = ad.reshape(ad.transpose(w[offset : offset + fo], (1, 0)), (n_samples, 1, fo))
        offset += fo
        h = h @ kernel + bias
        if layer < n_layers - 1:
            h = act(h)
    return h[..., 0]


def mlp_forward(weights, model: MLPRegressionModel, x):
    """Network output mu(x).

    ``weights`` is a flat (W,) vector or a (W, T) batch; ``x`` is a scalar
    or an (n,) array. The result drops whichever of those axes was absent.
    """
    wv = ad.value(weights)
    if wv.shape[0] != model.n_params:
        raise ValueError(f"expected {model.n_params} weights for {model.layer_sizes}, got {wv.shape[0]}")
    single = wv.ndim == 1
    if single:
        weights = ad.reshape(weights, (-1, 1))
    scalar_x = np.ndim(x) == 0
    mu = _mlp_batch(weights, model, np.atleast_1d(x))
    if single:
        mu = mu[0]
    if scalar_x:
        mu = mu[..., 0]
    return mu


def gaussian_log_lik(weights, model: MLPRegressionModel, data: Dataset):
    mu = mlp_forward(weights, model, data.inputs)
    resid = (data.targets - mu) / model.noise_sd
    per_point = ad.norm_logpdf(resid) - math.log(model.noise_sd)
    return ad.sum(per_point, axis=-1)


@dataclass(frozen=True)
class GaussianVariational:
    mean_raw: float = 0.0
    sd_raw: float = 0.0

    @property
    def mean(self):
        return self.mean_raw

    @property
    def sd(self):
        return ad.softplus(self.sd_raw)


def gaussian_vi_sample_and_logq(params: GaussianVariational, T: int, rng: np.random.Generator) -> FlowSampleBatch:
    if T < 1:
        raise ValueError("need at least one sample")
    z = rng.standard_normal(T)
    sd = params.sd
    w = params.mean + sd * z
    log_q = ad.norm_logpdf(z) - ad.log(sd)
    return FlowSampleBatch(z=z, w=w, log_q=log_q)
