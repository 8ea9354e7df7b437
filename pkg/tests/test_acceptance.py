"""End-to-end acceptance gates. Each test appends one PASS/FAIL line that is printed after the run."""

import csv
import io
import math
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np
import pytest
from conftest import ACCEPTANCE_LINES, TOY_NOISE_SD, TOY_PRIOR_SD, TOY_TARGETS, random_flow, random_raw
from scipy import stats

from tmvi import autodiff as ad
from tmvi.cli import parse_and_dispatch
from tmvi.engine import GaussianFamily, MeanFieldPosterior, TMFamily, TrainConfig, negative_elbo, train
from tmvi.experiments import RunRecord, load_defaults
from tmvi.flow import SIGMOID_EPS, FlowConfig, bernstein_eval, density, forward, log_det_jacobian
from tmvi.models import BernoulliModel, CauchyLocationModel, Dataset, NormalMeanModel

pytestmark = pytest.mark.slow

# tolerances and budgets
GRAD_TOL = 1e-4
GRAD_CONFIGS = 100
GRAD_BUDGET_S = 10
FLOW_JACOBIAN_TOL = 1e-5
FLOW_NORMALIZATION_TOL = 1e-3
FLOW_DEGREES = (1, 10, 30)
FLOWS_PER_DEGREE = 20
FLOW_BUDGET_S = 30
BERNOULLI_KL_MAX = 0.05
BERNOULLI_BUDGET_S = 120
CAUCHY_MODE_TOL = 1.5
CAUCHY_MODE_TARGETS = (-2.5, 2.5)
MCMC_CALIBRATION_TOL = 0.05
CAUCHY_BUDGET_S = 180
NN_ELBO_SLACK = 0.5
NN_RMSE_FACTOR = 3.0
NN_BUDGET_S = 300
TOY_REL_TOL = 0.05
TOY_BUDGET_S = 30

SEED = "1"
RUNS = {
    "bernoulli_tm": ["--experiment", "bernoulli", "--degree", "1", "10", "30", "--seed", SEED],
    "bernoulli_gaussian": ["--experiment", "bernoulli", "--family", "gaussian", "--seed", SEED],
    "cauchy": ["--experiment", "cauchy", "--degree", "30", "--seed", SEED],
    "nn_tm": ["--experiment", "nn", "--arch", "small", "--family", "tm", "--degree", "10", "--seed", SEED],
    "nn_gaussian": ["--experiment", "nn", "--arch", "small", "--family", "gaussian", "--seed", SEED],
}


@contextmanager
def criterion(number: int, title: str, budget_s: float | None = None):
    """Time the block, check the budget and record one summary line."""
    details: list[str] = []
    start = time.perf_counter()
    status = "FAIL"
    try:
        yield details
        elapsed = time.perf_counter() - start
        if budget_s is not None and elapsed >= budget_s:
            details.append(f"over budget {budget_s:.0f}s")
            raise AssertionError(f"criterion {number} took {elapsed:.1f}s, budget {budget_s}s")
        status = "PASS"
    finally:
        elapsed = time.perf_counter() - start
        note = "; ".join(details)
        ACCEPTANCE_LINES.append(f"[{status}] criterion {number}: {title} ({elapsed:.1f}s){': ' + note if note else ''}")


def _record(out: Path, name: str) -> RunRecord:
    return RunRecord.from_json((out / name).read_text())


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    """Output of the first pass of every experiment; tests add wall-clock times as they run."""
    return tmp_path_factory.mktemp("acceptance_runs")


def _run(name: str, out: Path) -> tuple[int, float]:
    start = time.perf_counter()
    code = parse_and_dispatch([*RUNS[name], "--out", str(out)])
    return code, time.perf_counter() - start


# ---------------------------------------------------------------- 1


def test_criterion_1_gradient_correctness():
    with criterion(1, "ELBO gradients match central differences", GRAD_BUDGET_S) as notes:
        worst = {}
        setups = {
            "bernoulli": (BernoulliModel(), Dataset([1, 1]), True),
            "cauchy": (CauchyLocationModel(), Dataset(load_defaults()["cauchy"]["targets"]), False),
        }
        for name, (model, data, squash) in setups.items():
            fam = TMFamily(FlowConfig(10, squash_output=squash))
            errors = []
            for seed in range(GRAD_CONFIGS):
                rng = np.random.default_rng([seed, 1 if squash else 2])
                raw = random_raw(rng, 10)
                z = rng.standard_normal((1, 50))
                errors.append(ad.check_gradient(lambda v: negative_elbo(v, fam, model, data, z), raw))
            worst[name] = max(errors)
            notes.append(f"{name} max err {worst[name]:.2e} over {GRAD_CONFIGS}")
        assert all(err < GRAD_TOL for err in worst.values())


# ---------------------------------------------------------------- 2


def _flow_checks(lam, cfg) -> dict:
    z = np.linspace(-8, 8, 4001)
    w, log_q = density(lam, cfg, z)
    theta = lam.theta
    # strictly increasing wherever the sigmoid clamp is inactive, flat (never decreasing) beyond it
    active = np.abs(float(lam.a[0]) * z + float(lam.b[0])) < math.log((1 - SIGMOID_EPS) / SIGMOID_EPS)
    steps = np.diff(w)
    h = 1e-5
    zc = np.linspace(-4, 4, 41)
    fd = (forward(lam, cfg, zc + h) - forward(lam, cfg, zc - h)) / (2 * h)
    jac = np.exp(log_det_jacobian(lam, cfg, zc))
    return {
        "monotone": bool(np.all(steps[active[:-1] & active[1:]] > 0) and np.all(steps >= 0)),
        "endpoints": bernstein_eval(theta, 0.0) == theta[0] and bernstein_eval(theta, 1.0) == theta[-1],
        "jacobian": float(np.max(np.abs(jac - fd) / jac)),
        "normalization": abs(float(np.trapezoid(np.exp(log_q), w)) - 1.0),
    }


def test_criterion_2_flow_calculus():
    with criterion(2, "flow monotone, exact endpoints, Jacobian and normalization", FLOW_BUDGET_S) as notes:
        ok = True
        for M in FLOW_DEGREES:
            cfg = FlowConfig(M)
            results = [_flow_checks(random_flow(np.random.default_rng([M, k]), M), cfg) for k in range(FLOWS_PER_DEGREE)]
            jac = max(r["jacobian"] for r in results)
            norm = max(r["normalization"] for r in results)
            mono = all(r["monotone"] for r in results)
            ends = all(r["endpoints"] for r in results)
            notes.append(f"M={M} jac {jac:.1e} norm {norm:.1e}")
            ok &= mono and ends and jac < FLOW_JACOBIAN_TOL and norm < FLOW_NORMALIZATION_TOL
        assert ok


# ---------------------------------------------------------------- 3


def test_criterion_3_bernoulli(run_dir):
    with criterion(3, "Bernoulli KL falls with degree and beats Gaussian-VI", BERNOULLI_BUDGET_S) as notes:
        codes = [_run("bernoulli_tm", run_dir)[0], _run("bernoulli_gaussian", run_dir)[0]]
        assert codes == [0, 0]
        kl = {M: _record(run_dir, f"bernoulli_tm_M{M}_record.json").kl_to_oracle for M in (1, 10, 30)}
        kl_gauss = _record(run_dir, "bernoulli_gaussian_record.json").kl_to_oracle
        notes.append(f"KL M1 {kl[1]:.5f} M10 {kl[10]:.5f} M30 {kl[30]:.5f} gaussian {kl_gauss:.5f}")
        assert kl[1] > kl[10] > kl[30]
        assert kl[30] < BERNOULLI_KL_MAX
        assert kl_gauss > kl[30]


def test_bernoulli_oracle_is_independent():
    """The analytic Beta(3.1, 1.1) oracle agrees with brute-force quadrature of prior times likelihood."""
    grid = np.linspace(1e-4, 1 - 1e-4, 4001)
    unnorm = stats.beta(1.1, 1.1).pdf(grid) * grid**2
    brute = unnorm / np.trapezoid(unnorm, grid)
    assert np.max(np.abs(brute - stats.beta(3.1, 1.1).pdf(grid))) < 1e-3


# ---------------------------------------------------------------- 4


def test_criterion_4_cauchy(run_dir):
    with criterion(4, "Cauchy: TM-VI bimodal, Gaussian-VI unimodal, TV ordering", CAUCHY_BUDGET_S) as notes:
        code, _ = _run("cauchy", run_dir)
        assert code == 0
        metrics = _record(run_dir, "cauchy_tm_M30_record.json").metrics
        cal = metrics["mcmc_calibration"]
        notes.append(f"calibration mean {cal['mean']:.4f} sd {cal['sd']:.4f}")
        assert abs(cal["mean"]) < MCMC_CALIBRATION_TOL and abs(cal["sd"] - 1) < MCMC_CALIBRATION_TOL
        modes_tm, modes_gauss = metrics["modes_tm"], metrics["modes_gaussian"]
        notes.append(f"TM modes {np.round(modes_tm, 3).tolist()} Gaussian modes {np.round(modes_gauss, 3).tolist()}")
        notes.append(f"TV TM {metrics['tv_tm_mcmc']:.3f} Gaussian {metrics['tv_gaussian_mcmc']:.3f}")
        assert len(modes_tm) == 2
        assert all(abs(m - t) <= CAUCHY_MODE_TOL for m, t in zip(sorted(modes_tm), CAUCHY_MODE_TARGETS))
        assert len(modes_gauss) == 1
        assert metrics["tv_tm_mcmc"] < metrics["tv_gaussian_mcmc"]


# ---------------------------------------------------------------- 5


def _check_predictive_file(path: Path) -> None:
    rows = list(csv.reader(io.StringIO(path.read_text())))
    assert rows[0] == ["x", "mean", "q05", "q25", "q75", "q95"]
    data = np.array(rows[1:], dtype=float)
    assert data.shape == (201, 6) and np.all(np.isfinite(data))
    np.testing.assert_allclose(data[:, 0], np.linspace(-3, 3, 201), atol=1e-12)
    q = data[:, 2:]
    assert np.all(np.diff(q, axis=1) >= 0)


def test_criterion_5_neural_net(run_dir):
    with criterion(5, "small MLP: TM-VI ELBO within 0.5 of Gaussian-VI, RMSE and bands", NN_BUDGET_S) as notes:
        codes = [_run("nn_tm", run_dir)[0], _run("nn_gaussian", run_dir)[0]]
        assert codes == [0, 0]
        tm = _record(run_dir, "nn_small_tm_M10_record.json")
        gauss = _record(run_dir, "nn_small_gaussian_record.json")
        noise_sd = load_defaults()["nn"]["noise_sd"]
        notes.append(f"ELBO TM {tm.final_elbo:.3f} Gaussian {gauss.final_elbo:.3f}")
        notes.append(f"RMSE TM {tm.metrics['rmse_train']:.3f} Gaussian {gauss.metrics['rmse_train']:.3f}")
        notes.append(f"90% width at 0: TM {tm.metrics['band_width_90_at_0']:.3f} Gaussian {gauss.metrics['band_width_90_at_0']:.3f}")
        assert tm.final_elbo >= gauss.final_elbo - NN_ELBO_SLACK
        for rec in (tm, gauss):
            assert rec.metrics["rmse_train"] < NN_RMSE_FACTOR * noise_sd
        _check_predictive_file(run_dir / "nn_small_tm_M10_predictive.csv")
        _check_predictive_file(run_dir / "nn_small_gaussian_predictive.csv")


# ---------------------------------------------------------------- 6


def test_criterion_6_conjugate_toy():
    with criterion(6, "Gaussian-VI recovers the conjugate-normal posterior", TOY_BUDGET_S) as notes:
        model = NormalMeanModel(noise_sd=TOY_NOISE_SD, prior_sd=TOY_PRIOR_SD)
        data = Dataset(TOY_TARGETS)
        mean, sd = model.posterior(data)
        post, _ = train(MeanFieldPosterior.initialize(GaussianFamily(), 1), model, data, TrainConfig(T=50, steps=3000, seed=1))
        fit_mean, fit_sd = float(post.raw[0, 0]), float(ad.softplus(post.raw[0, 1]))
        rel_mean, rel_sd = abs(fit_mean - mean) / abs(mean), abs(fit_sd - sd) / sd
        notes.append(f"mean {fit_mean:.4f} vs {mean:.4f}, sd {fit_sd:.4f} vs {sd:.4f}")
        assert rel_mean < TOY_REL_TOL and rel_sd < TOY_REL_TOL


# ---------------------------------------------------------------- 7


def test_criterion_7_determinism(run_dir, tmp_path):
    with criterion(7, "reruns emit byte-identical CSVs and run records") as notes:
        first = sorted(p.name for p in run_dir.iterdir())
        assert len(first) > 0, "criteria 3-5 must run first"
        for name in RUNS:
            assert _run(name, tmp_path)[0] == 0
        second = sorted(p.name for p in tmp_path.iterdir())
        assert first == second
        mismatched = [n for n in first if (run_dir / n).read_bytes() != (tmp_path / n).read_bytes()]
        notes.append(f"{len(first)} files compared, {len(mismatched)} differ")
        assert not mismatched
        for name in first:
            if name.endswith("_record.json"):
                rec = _record(tmp_path, name)
                assert all(math.isfinite(v) for v in [rec.final_elbo] if v is not None)
