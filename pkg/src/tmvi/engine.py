"""Monte-Carlo ELBO, Adam and the mean-field training loop."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from . import autodiff as ad
from .flow import (
    ConstrainedFlowParams,
    FlowConfig,
    FlowSampleBatch,
    UnconstrainedFlowParams,
    constrain,
    density,
    image,
    init_vector,
    invert,
)
from .models import Dataset, GaussianVariational, LikelihoodModel, MLPRegressionModel, mlp_forward


class ElboError(FloatingPointError):
    """The ELBO estimate (or its gradient) stopped being finite."""

    def __init__(self, message: str, parameter_index: int | None = None):
        self.parameter_index = parameter_index
        super().__init__(message)


# ---------------------------------------------------------------- families


class TMFamily:
    """Bernstein transformation flow, one per model parameter."""

    name = "tm"

    def __init__(self, cfg: FlowConfig):
        self.cfg = cfg

    @property
    def n_raw(self) -> int:
        return self.cfg.n_params

    @property
    def location_index(self) -> int:
        return self.cfg.n_params - 1  # beta, the final shift

    def init_raw(self, n_params: int) -> np.ndarray:
        return np.tile(init_vector(self.cfg), (n_params, 1))

    def constrained(self, raw) -> ConstrainedFlowParams:
        return constrain(UnconstrainedFlowParams.from_vector(raw, self.cfg.degree))

    def sample(self, raw, z) -> FlowSampleBatch:
        w, log_q = density(self.constrained(raw), self.cfg, z)
        return FlowSampleBatch(z=z, w=w, log_q=log_q)

    def log_density(self, row: np.ndarray, grid: np.ndarray) -> np.ndarray:
        """log q on arbitrary points (-inf outside the image) via numerical inversion."""
        lam = self.constrained(np.asarray(row, dtype=float))
        lo, hi = _image(self, row)
        grid = np.asarray(grid, dtype=float)
        out = np.full(grid.shape, -np.inf)
        inside = (grid > lo) & (grid < hi)
        if np.any(inside):
            z = invert(lam, self.cfg, grid[inside])
            _, log_q = density(lam, self.cfg, z)
            out[inside] = log_q
        return out

    def describe(self) -> dict:
        return {"family": self.name, **asdict(self.cfg)}


class GaussianFamily:
    """Normal variational density ``mean + softplus(sd_raw) z``, optionally pushed through a sigmoid."""

    name = "gaussian"

    def __init__(self, squash_output: bool = False, init_mean: float = 0.0, init_sd: float = 1.0):
        self.squash_output = squash_output
        self.init_mean = init_mean
        self.init_sd = init_sd

    n_raw = 2
    location_index = 0

    def init_raw(self, n_params: int) -> np.ndarray:
        sd_raw = self.init_sd + math.log(-math.expm1(-self.init_sd))
        return np.tile([self.init_mean, sd_raw], (n_params, 1))

    def sample(self, raw, z) -> FlowSampleBatch:
        mean, sd = raw[..., 0:1], ad.softplus(raw[..., 1:2])
        w = mean + sd * z
        log_q = ad.norm_logpdf(z) - ad.log(sd)
        if self.squash_output:
            log_q = log_q - ad.log_sigmoid(w) - ad.log_sigmoid(-w)
            w = ad.sigmoid(w)
        return FlowSampleBatch(z=z, w=w, log_q=log_q)

    def log_density(self, row: np.ndarray, grid: np.ndarray) -> np.ndarray:
        mean, sd = float(row[0]), float(ad.softplus(row[1]))
        grid = np.asarray(grid, dtype=float)
        if not self.squash_output:
            return ad.norm_logpdf((grid - mean) / sd) - math.log(sd)
        out = np.full(grid.shape, -np.inf)
        inside = (grid > 0) & (grid < 1)
        p = grid[inside]
        logit = np.log(p) - np.log1p(-p)
        out[inside] = ad.norm_logpdf((logit - mean) / sd) - math.log(sd) - np.log(p) - np.log1p(-p)
        return out

    def describe(self) -> dict:
        return {
            "family": self.name,
            "squash_output": self.squash_output,
            "init_mean": self.init_mean,
            "init_sd": self.init_sd,
        }


def _image(family: TMFamily, row) -> tuple[float, float]:
    return image(family.constrained(np.asarray(row, dtype=float)), family.cfg)


# ---------------------------------------------------------------- posterior


@dataclass
class MeanFieldPosterior:
    """Independent variational densities, one row of ``raw`` per model parameter."""

    family: TMFamily | GaussianFamily
    raw: np.ndarray

    def __post_init__(self):
        self.raw = np.array(self.raw, dtype=float, ndmin=2)
        if self.raw.shape[1] != self.family.n_raw:
            raise ValueError(f"{self.family.name} rows need {self.family.n_raw} entries, got {self.raw.shape[1]}")

    @classmethod
    def initialize(cls, family, n_params: int, jitter: float = 0.0, rng: np.random.Generator | None = None) -> "MeanFieldPosterior":
        """Family default for every parameter; ``jitter > 0`` adds N(0, jitter^2) to each location.

        Identical starting points leave hidden units of a network interchangeable,
        so wide nets need the jitter to break that symmetry.
        """
        raw = family.init_raw(n_params)
        if jitter > 0:
            if rng is None:
                raise ValueError("jitter needs a random generator")
            raw[:, family.location_index] += jitter * rng.standard_normal(n_params)
        return cls(family, raw)

    @property
    def n_params(self) -> int:
        return self.raw.shape[0]

    @property
    def flows(self) -> list:
        if isinstance(self.family, TMFamily):
            return [(self.family.cfg, UnconstrainedFlowParams.from_vector(row, self.family.cfg.degree)) for row in self.raw]
        return [GaussianVariational(mean_raw=row[0], sd_raw=row[1]) for row in self.raw]

    def sample(self, z) -> FlowSampleBatch:
        """Joint draw for base noise ``z`` of shape (P, T)."""
        return self.family.sample(self.raw, z)

    def draw(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return ad.value(self.sample(rng.standard_normal((self.n_params, n))).w)

    def log_density(self, index: int, grid) -> np.ndarray:
        return self.family.log_density(self.raw[index], grid)


# ---------------------------------------------------------------- ELBO


@dataclass(frozen=True)
class TrainConfig:
    T: int = 50
    steps: int = 3000
    learning_rate: float = 0.01
    seed: int = 1
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8

    def __post_init__(self):
        if self.T < 1 or self.steps < 1:
            raise ValueError("T and steps must be at least 1")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        return cls(**d)


@dataclass(frozen=True)
class ElboRecord:
    step: int
    elbo: float
    ell: float
    kl: float


@dataclass
class ElboTrace:
    records: list[ElboRecord] = field(default_factory=list)

    def append(self, record: ElboRecord):
        self.records.append(record)

    def __len__(self):
        return len(self.records)

    @property
    def elbo(self) -> np.ndarray:
        return np.array([r.elbo for r in self.records])

    def smoothed(self, window: int = 100) -> np.ndarray:
        """Trailing moving average of the ELBO estimates (full windows only)."""
        e = self.elbo
        if len(e) < window:
            return np.array([e.mean()]) if len(e) else e
        c = np.cumsum(np.insert(e, 0, 0.0))
        return (c[window:] - c[:-window]) / window

    def final_smoothed(self, window: int = 100) -> float:
        return float(self.smoothed(window)[-1])


def expected_log_lik(model: LikelihoodModel, data: Dataset, batch: FlowSampleBatch):
    """(1/T) sum_t log p(D | w_t) over the joint draws in ``batch``."""
    return ad.mean(model.log_lik(batch.w, data))


def kl_per_parameter(model: LikelihoodModel, batch: FlowSampleBatch):
    return ad.mean(batch.log_q - model.log_prior(batch.w), axis=-1)


def kl_sample_estimate(model: LikelihoodModel, batch: FlowSampleBatch):
    """Sampled KL(q || prior) using the very draws that enter the likelihood term."""
    return ad.sum(kl_per_parameter(model, batch))


def negative_elbo(raw, family, model: LikelihoodModel, data: Dataset, z: np.ndarray, terms: dict | None = None):
    """-(ELL - KL) as a function of the flattened raw parameters, with base noise held fixed."""
    raw = ad.reshape(raw, (z.shape[0], family.n_raw))
    batch = family.sample(raw, z)
    ell = expected_log_lik(model, data, batch)
    kl = kl_sample_estimate(model, batch)
    if terms is not None:
        terms["ell"], terms["kl"] = float(ad.value(ell)), float(ad.value(kl))
    return kl - ell


def _offending_parameter(posterior: MeanFieldPosterior, model, z) -> int | None:
    with np.errstate(all="ignore"):
        try:
            batch = posterior.sample(z)
            w, log_q = ad.value(batch.w), ad.value(batch.log_q)
            bad = ~np.all(np.isfinite(w) & np.isfinite(log_q), axis=-1)
            if not np.any(bad):
                prior = ad.value(model.log_prior(w))
                bad = ~np.all(np.isfinite(prior), axis=-1)
        except ValueError:
            return None
    hits = np.flatnonzero(bad)
    return int(hits[0]) if hits.size else None


def elbo_step(posterior: MeanFieldPosterior, model, data: Dataset, cfg: TrainConfig, rng, step: int = 0):
    """Fresh base draws, then value and gradient of -ELBO w.r.t. all raw parameters."""
    z = rng.standard_normal((posterior.n_params, cfg.T))
    terms: dict = {}
    try:
        result = ad.grad(lambda v: negative_elbo(v, posterior.family, model, data, z, terms), posterior.raw.ravel())
    except (ad.NonFiniteError, ValueError) as err:
        index = _offending_parameter(posterior, model, z)
        raise ElboError(f"non-finite ELBO at step {step} (parameter {index}): {err}", index) from err
    record = ElboRecord(step=step, elbo=terms["ell"] - terms["kl"], ell=terms["ell"], kl=terms["kl"])
    if not math.isfinite(record.elbo):
        raise ElboError(f"non-finite ELBO at step {step}", _offending_parameter(posterior, model, z))
    return result, record


# ---------------------------------------------------------------- optimizer


@dataclass(frozen=True)
class AdamState:
    params: np.ndarray
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def start(cls, params) -> "AdamState":
        params = np.array(params, dtype=float)
        return cls(params, np.zeros_like(params), np.zeros_like(params), 0)


def adam_update(state: AdamState, gradient, cfg: TrainConfig) -> AdamState:
    g = np.asarray(gradient, dtype=float)
    if g.shape != state.params.shape:
        raise ValueError(f"gradient shape {g.shape} does not match parameters {state.params.shape}")
    t = state.t + 1
    m = cfg.adam_beta1 * state.m + (1.0 - cfg.adam_beta1) * g
    v = cfg.adam_beta2 * state.v + (1.0 - cfg.adam_beta2) * g * g
    m_hat = m / (1.0 - cfg.adam_beta1**t)
    v_hat = v / (1.0 - cfg.adam_beta2**t)
    params = state.params - cfg.learning_rate * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return AdamState(params, m, v, t)


def train(posterior: MeanFieldPosterior, model: LikelihoodModel, data: Dataset, cfg: TrainConfig):
    """Run ``cfg.steps`` Adam steps on -ELBO; returns the final posterior and the trace."""
    if posterior.n_params != model.n_params:
        raise ValueError(f"posterior has {posterior.n_params} entries but the model has {model.n_params} parameters")
    rng = np.random.default_rng(cfg.seed)
    state = AdamState.start(posterior.raw.ravel())
    current = posterior
    trace = ElboTrace()
    for step in range(cfg.steps):
        result, record = elbo_step(current, model, data, cfg, rng, step)
        trace.append(record)
        state = adam_update(state, result.gradient, cfg)
        current = replace(current, raw=state.params.reshape(posterior.raw.shape))
    return current, trace


# ---------------------------------------------------------------- prediction


@dataclass(frozen=True)
class PredictiveBands:
    x: np.ndarray
    mean: np.ndarray
    q05: np.ndarray
    q25: np.ndarray
    q75: np.ndarray
    q95: np.ndarray


def posterior_predictive(
    posterior: MeanFieldPosterior, model: MLPRegressionModel, xs, S: int, rng: np.random.Generator
) -> PredictiveBands:
    """Quantile bands of mu(x) from S joint weight draws."""
    if S < 100:
        raise ValueError("use at least 100 posterior draws")
    xs = np.asarray(xs, dtype=float).ravel()
    weights = posterior.draw(S, rng)
    mu = mlp_forward(weights, model, xs)  # (S, n_x)
    q05, q25, q75, q95 = np.quantile(mu, [0.05, 0.25, 0.75, 0.95], axis=0)
    return PredictiveBands(x=xs, mean=mu.mean(axis=0), q05=q05, q25=q25, q75=q75, q95=q95)
