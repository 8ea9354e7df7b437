"""Reference answers that do not go through the VI code path.

Conjugate posteriors, grid quadrature, a random-walk Metropolis sampler and
density-shape diagnostics.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy import stats
from scipy.signal import find_peaks

from .flow import ConstrainedFlowParams, FlowConfig, density, image, invert


@dataclass(frozen=True)
class DensityGrid:
    points: np.ndarray
    density: np.ndarray

    def __post_init__(self):
        points = np.asarray(self.points, dtype=float)
        dens = np.asarray(self.density, dtype=float)
        if points.ndim != 1 or points.shape != dens.shape or points.size < 2:
            raise ValueError("points and density must be 1-D arrays of equal length >= 2")
        gaps = np.diff(points)
        if np.any(gaps <= 0) or np.ptp(gaps) > 1e-12 * max(1.0, np.abs(points).max()):
            raise ValueError("grid points must be strictly increasing with constant spacing")
        if np.any(dens < 0) or not np.all(np.isfinite(dens)):
            raise ValueError("density values must be finite and non-negative")
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "density", dens)

    @property
    def spacing(self) -> float:
        return float(self.points[1] - self.points[0])

    def mass(self) -> float:
        return float(np.trapezoid(self.density, self.points))

    def normalized(self) -> "DensityGrid":
        m = self.mass()
        if m <= 0:
            raise ValueError("cannot normalize a grid with zero mass")
        return DensityGrid(self.points, self.density / m)

    def same_points(self, other: "DensityGrid") -> bool:
        return self.points.shape == other.points.shape and bool(np.all(self.points == other.points))

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["grid", "density"])
        for x, d in zip(self.points, self.density):
            writer.writerow([repr(float(x)), repr(float(d))])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str) -> "DensityGrid":
        rows = list(csv.reader(io.StringIO(text)))
        if rows[0] != ["grid", "density"]:
            raise ValueError("expected a 'grid,density' header")
        data = np.array(rows[1:], dtype=float)
        return cls(data[:, 0], data[:, 1])


def uniform_grid(lo: float, hi: float, n: int = 4001) -> np.ndarray:
    return np.linspace(lo, hi, n)


# ---------------------------------------------------------------- closed forms


def conjugate_beta_posterior(alpha: float, beta: float, data) -> tuple[float, float]:
    y = np.asarray(data, dtype=float).ravel()
    if np.any((y != 0) & (y != 1)):
        raise ValueError("Bernoulli data must be 0 or 1")
    s = float(y.sum())
    return alpha + s, beta + y.size - s


def beta_density_grid(alpha: float, beta: float, points) -> DensityGrid:
    return DensityGrid(points, stats.beta(alpha, beta).pdf(points))


def normal_density_grid(mean: float, sd: float, points) -> DensityGrid:
    return DensityGrid(points, stats.norm(mean, sd).pdf(points))


def posterior_density_grid(log_post: Callable[[np.ndarray], np.ndarray], points) -> DensityGrid:
    """Normalized exp(log_post) on a grid; a brute-force 1-D posterior."""
    points = np.asarray(points, dtype=float)
    lp = np.asarray(log_post(points), dtype=float)
    return DensityGrid(points, np.exp(lp - lp.max())).normalized()


# ---------------------------------------------------------------- divergences


def quadrature_kl(q: DensityGrid, p: DensityGrid) -> float:
    """Trapezoid estimate of KL(q || p) with 0 log 0 = 0; inf where q > 0 = p."""
    if not q.same_points(p):
        raise ValueError("KL needs both densities on the same grid")
    qd, pd = q.density, p.density
    if np.any((qd > 0) & (pd <= 0)):
        return math.inf
    integrand = np.zeros_like(qd)
    pos = qd > 0
    integrand[pos] = qd[pos] * (np.log(qd[pos]) - np.log(pd[pos]))
    return float(np.trapezoid(integrand, q.points))


def total_variation(q: DensityGrid, p: DensityGrid) -> float:
    if not q.same_points(p):
        raise ValueError("total variation needs both densities on the same grid")
    return 0.5 * float(np.trapezoid(np.abs(q.density - p.density), q.points))


# ---------------------------------------------------------------- MCMC


@dataclass(frozen=True)
class McmcChain:
    samples: np.ndarray
    acceptance_rate: float
    burn_in: int
    thinning: int
    n_accepted: int
    n_proposed: int


def metropolis(
    log_post: Callable[[float], float],
    init: float,
    steps: int,
    proposal_sd: float,
    burn_in: int,
    thin: int,
    rng: np.random.Generator,
) -> McmcChain:
    """Random-walk Metropolis with normal proposals; keeps every ``thin``-th draw after burn-in."""
    if steps <= burn_in:
        raise ValueError("steps must exceed burn_in")
    if thin < 1 or proposal_sd <= 0:
        raise ValueError("thin must be >= 1 and proposal_sd positive")
    x = float(init)
    lp = float(log_post(x))
    proposals = rng.normal(0.0, proposal_sd, size=steps)
    log_u = np.log(rng.random(size=steps))
    chain = np.empty(steps)
    accepted = 0
    for i in range(steps):
        candidate = x + proposals[i]
        lp_candidate = float(log_post(candidate))
        if log_u[i] < lp_candidate - lp:
            x, lp = candidate, lp_candidate
            accepted += 1
        chain[i] = x
    return McmcChain(
        samples=chain[burn_in::thin].copy(),
        acceptance_rate=accepted / steps,
        burn_in=burn_in,
        thinning=thin,
        n_accepted=accepted,
        n_proposed=steps,
    )


def histogram_density_grid(samples, points, n_bins: int = 160) -> DensityGrid:
    """Piecewise-constant histogram density read off at the grid points, normalized on the grid."""
    points = np.asarray(points, dtype=float)
    edges = np.linspace(points[0], points[-1], n_bins + 1)
    counts, _ = np.histogram(np.asarray(samples, dtype=float), bins=edges)
    width = edges[1] - edges[0]
    heights = counts / (max(counts.sum(), 1) * width)
    idx = np.clip(np.searchsorted(edges, points, side="right") - 1, 0, n_bins - 1)
    return DensityGrid(points, heights[idx]).normalized()


# ---------------------------------------------------------------- flows on grids


def flow_density_grid(lam: ConstrainedFlowParams, cfg: FlowConfig, points) -> DensityGrid:
    """q_lambda on arbitrary points by inverting the flow; zero outside its image."""
    points = np.asarray(points, dtype=float)
    lo, hi = image(lam, cfg)
    dens = np.zeros_like(points)
    inside = (points > lo) & (points < hi)
    if np.any(inside):
        z = invert(lam, cfg, points[inside])
        _, log_q = density(lam, cfg, z)
        dens[inside] = np.exp(log_q)
    return DensityGrid(points, dens)


def count_modes(grid: DensityGrid, min_prominence: float = 0.1) -> np.ndarray:
    """Interior local maxima with topographic prominence >= min_prominence * max density."""
    peak_height = grid.density.max()
    if peak_height <= 0:
        return np.empty(0)
    peaks, _ = find_peaks(grid.density, prominence=min_prominence * peak_height)
    return grid.points[peaks]
