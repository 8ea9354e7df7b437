"""End-to-end experiment runners that write plot-ready CSVs and a run record."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import math
import platform
from dataclasses import asdict, dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from . import oracles
from .engine import ElboError, ElboTrace, GaussianFamily, MeanFieldPosterior, TMFamily, TrainConfig, posterior_predictive, train
from .flow import FlowConfig
from .models import (
    BernoulliModel,
    CauchyLocationModel,
    Dataset,
    MLPRegressionModel,
    cauchy_log_lik,
    normal_log_prior,
)

SMOOTHING_WINDOW = 100


def load_defaults() -> dict:
    return json.loads(resources.files("tmvi").joinpath("defaults.json").read_text())


@dataclass
class RunRecord:
    experiment: str
    config: dict
    seed: int
    final_elbo: float | None = None
    kl_to_oracle: float | None = None
    artifact_paths: list[str] = field(default_factory=list)
    metrics: dict = field(default_factory=dict)
    checksums: dict = field(default_factory=dict)
    versions: dict = field(default_factory=dict)
    status: str = "ok"
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True, allow_nan=True) + "\n"

    @classmethod
    def from_json(cls, text: str) -> "RunRecord":
        return cls(**json.loads(text))


def _versions() -> dict:
    return {"tmvi": __version__, "numpy": np.__version__, "python": platform.python_version()}


def _fmt(x) -> str:
    return repr(float(x))


def _csv_text(header: list[str], rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([v if isinstance(v, (int, np.integer)) else _fmt(v) for v in row])
    return buf.getvalue()


def trace_csv(trace: ElboTrace) -> str:
    return _csv_text(["step", "elbo", "ell", "kl"], ((r.step, r.elbo, r.ell, r.kl) for r in trace.records))


def predictive_csv(bands) -> str:
    return _csv_text(
        ["x", "mean", "q05", "q25", "q75", "q95"],
        zip(bands.x, bands.mean, bands.q05, bands.q25, bands.q75, bands.q95),
    )


class _Writer:
    """Collects artifacts for one run and finalizes the record."""

    def __init__(self, out_dir, record: RunRecord):
        self.out_dir = Path(out_dir)
        self.out_dir.mkdir(parents=True, exist_ok=True)
        self.record = record

    def write(self, name: str, text: str) -> Path:
        path = self.out_dir / name
        path.write_text(text)
        self.record.artifact_paths.append(name)
        self.record.checksums[name] = hashlib.sha256(text.encode()).hexdigest()
        return path

    def finish(self, name: str) -> RunRecord:
        self.record.versions = _versions()
        (self.out_dir / name).write_text(self.record.to_json())
        return self.record


def _grid(spec: dict) -> np.ndarray:
    return oracles.uniform_grid(spec["lo"], spec["hi"], spec["n"])


def _family(name: str, degree: int, squash: bool, defaults: dict, init: dict | None = None):
    init = init or {}
    if name == "tm":
        lo = init.get("init_low", defaults["flow"]["init_low"])
        hi = init.get("init_high", defaults["flow"]["init_high"])
        return TMFamily(FlowConfig(degree, squash, lo, hi))
    if name == "gaussian":
        gauss = dict(defaults["gaussian"])
        if "gaussian_init_sd" in init:
            gauss["init_sd"] = init["gaussian_init_sd"]
        return GaussianFamily(squash, **gauss)
    raise ValueError(f"unknown family {name!r}")


def _tag(experiment: str, family) -> str:
    return f"{experiment}_{family.name}" + (f"_M{family.cfg.degree}" if family.name == "tm" else "")


def _fail(writer: _Writer, name: str, err: ElboError) -> RunRecord:
    writer.record.status = "failed"
    writer.record.error = str(err)
    writer.record.metrics["offending_parameter"] = err.parameter_index
    return writer.finish(name)


# ---------------------------------------------------------------- Bernoulli


def run_bernoulli(M: int, train_cfg: TrainConfig, out_dir, family: str = "tm", defaults: dict | None = None) -> RunRecord:
    """Fit the Bernoulli probability with a sigmoid-squashed flow and compare to the Beta posterior."""
    defaults = defaults or load_defaults()
    cfg = defaults["bernoulli"]
    model = BernoulliModel(cfg["prior_alpha"], cfg["prior_beta"])
    data = Dataset(cfg["targets"])
    fam = _family(family, M, True, defaults)
    tag = _tag("bernoulli", fam)
    record = RunRecord(
        experiment="bernoulli",
        config={"train": train_cfg.to_dict(), "model": asdict(model), "targets": cfg["targets"], **fam.describe()},
        seed=train_cfg.seed,
    )
    writer = _Writer(out_dir, record)
    try:
        post, trace = train(MeanFieldPosterior.initialize(fam, 1), model, data, train_cfg)
    except ElboError as err:
        return _fail(writer, f"{tag}_record.json", err)

    grid = _grid(cfg["grid"])
    a_post, b_post = oracles.conjugate_beta_posterior(model.prior_alpha, model.prior_beta, data.targets)
    exact = oracles.beta_density_grid(a_post, b_post, grid)
    q = oracles.DensityGrid(grid, np.exp(post.log_density(0, grid)))

    writer.write(f"{tag}_density.csv", q.to_csv())
    writer.write("bernoulli_posterior_density.csv", exact.to_csv())
    writer.write(f"{tag}_trace.csv", trace_csv(trace))
    record.final_elbo = trace.final_smoothed(SMOOTHING_WINDOW)
    record.kl_to_oracle = oracles.quadrature_kl(q, exact)
    record.metrics.update(
        posterior_alpha=a_post,
        posterior_beta=b_post,
        grid_mass=q.mass(),
        tail_mass=1.0 - q.mass(),
        raw_params=post.raw.ravel().tolist(),
    )
    return writer.finish(f"{tag}_record.json")


# ---------------------------------------------------------------- Cauchy


def cauchy_log_posterior(model: CauchyLocationModel, data: Dataset):
    def log_post(xi):
        return float(cauchy_log_lik(float(xi), model, data) + normal_log_prior(float(xi), model.prior_sd, model.prior_mean))

    return log_post


def mcmc_calibration(mcmc: dict, seed: int) -> dict:
    """Run the sampler on a N(0, 1) target with the production settings."""
    chain = oracles.metropolis(
        lambda x: -0.5 * x * x,
        mcmc["init"],
        mcmc["steps"],
        mcmc["proposal_sd"],
        mcmc["burn_in"],
        mcmc["thin"],
        np.random.default_rng([seed, 7]),
    )
    mean, sd = float(chain.samples.mean()), float(chain.samples.std())
    return {"mean": mean, "sd": sd, "acceptance_rate": chain.acceptance_rate, "passed": abs(mean) < 0.05 and abs(sd - 1) < 0.05}


def run_cauchy(M: int, train_cfg: TrainConfig, out_dir, defaults: dict | None = None) -> RunRecord:
    """MCMC reference, TM-VI and Gaussian-VI for the bimodal Cauchy-location posterior."""
    defaults = defaults or load_defaults()
    cfg = defaults["cauchy"]
    model = CauchyLocationModel(cfg["gamma"], cfg["prior_mean"], cfg["prior_sd"])
    data = Dataset(cfg["targets"])
    tm_family = _family("tm", M, False, defaults)
    gauss_family = _family("gaussian", M, False, defaults)
    record = RunRecord(
        experiment="cauchy",
        config={
            "train": train_cfg.to_dict(),
            "model": asdict(model),
            "targets": cfg["targets"],
            "mcmc": cfg["mcmc"],
            "tm": tm_family.describe(),
            "gaussian": gauss_family.describe(),
        },
        seed=train_cfg.seed,
    )
    tag = f"cauchy_tm_M{M}"
    writer = _Writer(out_dir, record)
    grid = _grid(cfg["grid"])
    prominence = cfg["mode_prominence"]

    calibration = mcmc_calibration(cfg["mcmc"], train_cfg.seed)
    log_post = cauchy_log_posterior(model, data)
    m = cfg["mcmc"]
    chain = oracles.metropolis(
        log_post, m["init"], m["steps"], m["proposal_sd"], m["burn_in"], m["thin"], np.random.default_rng([train_cfg.seed, 11])
    )
    reference = oracles.histogram_density_grid(chain.samples, grid, cfg["histogram_bins"])
    exact = oracles.posterior_density_grid(np.vectorize(log_post), grid)

    densities, traces = {}, {}
    for fam in (tm_family, gauss_family):
        try:
            post, trace = train(MeanFieldPosterior.initialize(fam, 1), model, data, train_cfg)
        except ElboError as err:
            return _fail(writer, f"{tag}_record.json", err)
        densities[fam.name] = oracles.DensityGrid(grid, np.exp(post.log_density(0, grid)))
        traces[fam.name] = trace

    writer.write("cauchy_mcmc_density.csv", reference.to_csv())
    writer.write(f"cauchy_tm_M{M}_density.csv", densities["tm"].to_csv())
    writer.write("cauchy_gaussian_density.csv", densities["gaussian"].to_csv())
    writer.write(f"cauchy_tm_M{M}_trace.csv", trace_csv(traces["tm"]))
    writer.write("cauchy_gaussian_trace.csv", trace_csv(traces["gaussian"]))

    record.final_elbo = traces["tm"].final_smoothed(SMOOTHING_WINDOW)
    record.kl_to_oracle = oracles.quadrature_kl(densities["tm"], exact)
    record.metrics.update(
        mcmc_calibration=calibration,
        mcmc_acceptance_rate=chain.acceptance_rate,
        mcmc_samples=int(chain.samples.size),
        modes_mcmc=oracles.count_modes(reference.normalized(), prominence).tolist(),
        modes_exact=oracles.count_modes(exact, prominence).tolist(),
        modes_tm=oracles.count_modes(densities["tm"], prominence).tolist(),
        modes_gaussian=oracles.count_modes(densities["gaussian"], prominence).tolist(),
        tv_tm_mcmc=oracles.total_variation(densities["tm"].normalized(), reference),
        tv_gaussian_mcmc=oracles.total_variation(densities["gaussian"].normalized(), reference),
        kl_gaussian_exact=oracles.quadrature_kl(densities["gaussian"], exact),
        final_elbo_gaussian=traces["gaussian"].final_smoothed(SMOOTHING_WINDOW),
        grid_mass_tm=densities["tm"].mass(),
        grid_mass_gaussian=densities["gaussian"].mass(),
    )
    return writer.finish(f"{tag}_record.json")


# ---------------------------------------------------------------- neural net


def run_nn(arch: str, family: str, M: int, train_cfg: TrainConfig, out_dir, defaults: dict | None = None) -> RunRecord:
    """Mean-field Bayesian MLP on the two-cluster sine data; writes predictive bands of mu(x)."""
    defaults = defaults or load_defaults()
    cfg = defaults["nn"]
    if arch not in cfg["architectures"]:
        raise ValueError(f"unknown architecture {arch!r}")
    model = MLPRegressionModel(tuple(cfg["architectures"][arch]), cfg["activation"], cfg["noise_sd"], cfg["prior_sd"])
    data = Dataset(cfg["targets"], cfg["inputs"])
    init = cfg["init"][arch]
    fam = _family(family, M, False, defaults, init)
    tag = _tag(f"nn_{arch}", fam)
    record = RunRecord(
        experiment="nn",
        config={
            "train": train_cfg.to_dict(),
            "model": asdict(model),
            "arch": arch,
            "location_jitter": init["location_jitter"],
            **fam.describe(),
        },
        seed=train_cfg.seed,
    )
    writer = _Writer(out_dir, record)
    start = MeanFieldPosterior.initialize(fam, model.n_params, init["location_jitter"], np.random.default_rng([train_cfg.seed, 5]))
    try:
        post, trace = train(start, model, data, train_cfg)
    except ElboError as err:
        return _fail(writer, f"{tag}_record.json", err)

    pred = cfg["predictive"]
    rng = np.random.default_rng([train_cfg.seed, 23])
    bands = posterior_predictive(post, model, _grid(pred), pred["draws"], rng)
    at_data = posterior_predictive(post, model, data.inputs, pred["draws"], rng)
    at_zero = posterior_predictive(post, model, [0.0], pred["draws"], rng)

    writer.write(f"{tag}_predictive.csv", predictive_csv(bands))
    writer.write("nn_training_points.csv", _csv_text(["x", "y"], zip(data.inputs, data.targets)))
    writer.write(f"{tag}_trace.csv", trace_csv(trace))
    record.final_elbo = trace.final_smoothed(SMOOTHING_WINDOW)
    record.metrics.update(
        n_weights=model.n_params,
        rmse_train=float(math.sqrt(np.mean((at_data.mean - data.targets) ** 2))),
        band_width_90_at_0=float(at_zero.q95[0] - at_zero.q05[0]),
        band_width_50_at_0=float(at_zero.q75[0] - at_zero.q25[0]),
    )
    return writer.finish(f"{tag}_record.json")
