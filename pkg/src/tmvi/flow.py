"""Monotone Bernstein transformation flow ``h = f3 . f2 . sigmoid . f1``.

``f1(z) = a z + b`` and ``f3(u) = alpha u + beta`` are affine with positive
slopes; ``f2`` is a Bernstein polynomial with increasing coefficients, so
the whole chain is strictly increasing. An optional trailing sigmoid maps
the output into (0, 1).

All functions accept plain arrays or :class:`tmvi.autodiff.Var` values for
the parameter fields. Parameter fields may carry leading batch dimensions
(one row per independent flow); ``z`` must then have the matching leading
shape with samples on the last axis.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad

SIGMOID_EPS = 1e-7


def softplus(x):
    return ad.softplus(x)


def softplus_inv(y):
    """ln(e^y - 1), stable for large and small y."""
    y = np.asarray(y, dtype=float)
    if np.any(y <= 0):
        raise ValueError("softplus inverse is defined for positive values only")
    return y + np.log(-np.expm1(-y))


@dataclass(frozen=True)
class FlowConfig:
    degree: int = 10
    squash_output: bool = False
    init_low: float = -3.0
    init_high: float = 3.0

    def __post_init__(self):
        if int(self.degree) != self.degree or self.degree < 1:
            raise ValueError(f"degree must be an integer >= 1, got {self.degree!r}")
        if not self.init_low < self.init_high:
            raise ValueError(f"init_low ({self.init_low}) must be below init_high ({self.init_high})")

    @property
    def n_params(self) -> int:
        return self.degree + 5


@dataclass(frozen=True)
class UnconstrainedFlowParams:
    a_raw: object
    b: object
    theta_raw: object
    alpha_raw: object
    beta: object

    def to_vector(self) -> np.ndarray:
        """Pack as ``(a_raw, b, theta_raw..., alpha_raw, beta)``."""
        return np.concatenate(
            [np.atleast_1d(ad.value(v)) for v in (self.a_raw, self.b, self.theta_raw, self.alpha_raw, self.beta)]
        )

    @classmethod
    def from_vector(cls, vec, degree: int) -> "UnconstrainedFlowParams":
        """Inverse of :meth:`to_vector`; also slices a (..., M+5) matrix row-wise.

        Scalar fields keep a trailing axis of length 1 so they broadcast
        against sample arrays of shape (..., T).
        """
        k = degree + 1
        if ad.value(vec).shape[-1] != k + 4:
            raise ValueError(f"expected {k + 4} flow parameters for degree {degree}, got {ad.value(vec).shape[-1]}")
        return cls(
            a_raw=vec[..., 0:1],
            b=vec[..., 1:2],
            theta_raw=vec[..., 2 : 2 + k],
            alpha_raw=vec[..., 2 + k : 3 + k],
            beta=vec[..., 3 + k : 4 + k],
        )


@dataclass(frozen=True)
class ConstrainedFlowParams:
    a: object
    b: object
    theta: object
    alpha: object
    beta: object

    @property
    def degree(self) -> int:
        return ad.value(self.theta).shape[-1] - 1

    def validate(self):
        a, alpha, theta = (ad.value(v) for v in (self.a, self.alpha, self.theta))
        if np.any(a <= 0) or np.any(alpha <= 0):
            raise ValueError("flow slopes a and alpha must be positive")
        if np.any(np.diff(theta, axis=-1) <= 0):
            raise ValueError("Bernstein coefficients must be strictly increasing")
        return self


@dataclass(frozen=True)
class FlowSampleBatch:
    z: np.ndarray
    w: object
    log_q: object


def constrain(raw: UnconstrainedFlowParams) -> ConstrainedFlowParams:
    theta0 = raw.theta_raw[..., 0:1]
    steps = ad.softplus(raw.theta_raw[..., 1:])
    theta = ad.concatenate([theta0, theta0 + ad.cumsum(steps, axis=-1)], axis=-1)
    return ConstrainedFlowParams(
        a=ad.softplus(raw.a_raw),
        b=raw.b,
        theta=theta,
        alpha=ad.softplus(raw.alpha_raw),
        beta=raw.beta,
    )


def init_params(cfg: FlowConfig) -> UnconstrainedFlowParams:
    """Start with a = alpha = 1, b = beta = 0 and theta spread evenly over [init_low, init_high]."""
    step = (cfg.init_high - cfg.init_low) / cfg.degree
    if step <= 0:
        raise ValueError("init range must be increasing")
    one = float(softplus_inv(1.0))
    theta_raw = np.full(cfg.degree + 1, float(softplus_inv(step)))
    theta_raw[0] = cfg.init_low
    return UnconstrainedFlowParams(a_raw=one, b=0.0, theta_raw=theta_raw, alpha_raw=one, beta=0.0)


def init_vector(cfg: FlowConfig) -> np.ndarray:
    return init_params(cfg).to_vector()


def bernstein_eval(theta, zp):
    """Bernstein polynomial ``sum_i Be_i(zp) theta_i / (M+1)`` for scalar or array ``zp``."""
    zp_arr = np.asarray(ad.value(zp))
    if np.any((zp_arr < 0.0) | (zp_arr > 1.0)) or np.any(np.isnan(zp_arr)):
        raise ValueError("Bernstein argument must lie in [0, 1]")
    if zp_arr.ndim == 0:
        return ad.bernstein(theta, ad.reshape(zp, (1,)) if isinstance(zp, ad.Var) else zp_arr.reshape(1))[..., 0]
    return ad.bernstein(theta, zp)


def bernstein_derivative(theta, zp):
    """d f2 / d zp, via the degree-(M-1) Bernstein form of the coefficient differences."""
    degree = ad.value(theta).shape[-1] - 1
    return bernstein_eval(degree * (theta[..., 1:] - theta[..., :-1]), zp)


def _chain(lam: ConstrainedFlowParams, cfg: FlowConfig, z):
    """Forward values and log|dh/dz| for z of shape (..., T)."""
    f1 = lam.a * z + lam.b
    s = ad.clip(ad.sigmoid(f1), SIGMOID_EPS, 1.0 - SIGMOID_EPS)
    u = ad.bernstein(lam.theta, s)
    y = lam.alpha * u + lam.beta
    slope = ad.bernstein(cfg.degree * (lam.theta[..., 1:] - lam.theta[..., :-1]), s)
    log_det = ad.log(lam.a) + ad.log_sigmoid(f1) + ad.log_sigmoid(-f1) + ad.log(slope) + ad.log(lam.alpha)
    if cfg.squash_output:
        log_det = log_det + ad.log_sigmoid(y) + ad.log_sigmoid(-y)
        y = ad.sigmoid(y)
    return y, log_det


def _as_samples(z):
    if isinstance(z, ad.Var):
        return z, False
    z = np.asarray(z, dtype=float)
    return (z.reshape(1), True) if z.ndim == 0 else (z, False)


def _unwrap(x, scalar: bool):
    if not scalar:
        return x
    out = x[..., 0]
    return out if isinstance(out, ad.Var) or np.ndim(out) else float(out)


def forward(lam: ConstrainedFlowParams, cfg: FlowConfig, z):
    zs, scalar = _as_samples(z)
    w, _ = _chain(lam, cfg, zs)
    return _unwrap(w, scalar)


def log_det_jacobian(lam: ConstrainedFlowParams, cfg: FlowConfig, z):
    zs, scalar = _as_samples(z)
    _, log_det = _chain(lam, cfg, zs)
    return _unwrap(log_det, scalar)


def density(lam: ConstrainedFlowParams, cfg: FlowConfig, z):
    """``(w, log q(w))`` at base draws ``z`` by change of variables."""
    zs, scalar = _as_samples(z)
    w, log_det = _chain(lam, cfg, zs)
    log_q = ad.norm_logpdf(zs) - log_det
    return _unwrap(w, scalar), _unwrap(log_q, scalar)


def image(lam: ConstrainedFlowParams, cfg: FlowConfig) -> tuple[float, float]:
    """Open interval the flow maps onto (before the sigmoid clamp)."""
    theta = ad.value(lam.theta)
    alpha, beta = float(np.ravel(ad.value(lam.alpha))[0]), float(np.ravel(ad.value(lam.beta))[0])
    lo, hi = alpha * theta[..., 0] + beta, alpha * theta[..., -1] + beta
    lo, hi = float(np.ravel(lo)[0]), float(np.ravel(hi)[0])
    if cfg.squash_output:
        lo, hi = float(ad.sigmoid(lo)), float(ad.sigmoid(hi))
    return lo, hi


def invert(lam: ConstrainedFlowParams, cfg: FlowConfig, w, lo: float = -40.0, hi: float = 40.0, tol: float = 1e-10):
    """Base point z with forward(z) = w, by bisection on [lo, hi] then Newton polishing.

    Targets beyond what the clamped chain reaches inside [lo, hi] resolve to
    the bracket end.
    """
    w_arr = np.asarray(w, dtype=float)
    scalar = w_arr.ndim == 0
    w_arr = np.atleast_1d(w_arr)
    img_lo, img_hi = image(lam, cfg)
    if np.any(~((w_arr > img_lo) & (w_arr < img_hi))):
        bad = w_arr[~((w_arr > img_lo) & (w_arr < img_hi))][0]
        raise ValueError(f"w={bad!r} lies outside the flow image ({img_lo!r}, {img_hi!r})")

    left = np.full_like(w_arr, lo)
    right = np.full_like(w_arr, hi)
    for _ in range(200):
        mid = 0.5 * (left + right)
        below = forward(lam, cfg, mid) < w_arr
        left = np.where(below, mid, left)
        right = np.where(below, right, mid)
        if np.all(right - left < 1e-13):
            break
    z = 0.5 * (left + right)
    for _ in range(3):
        resid = forward(lam, cfg, z) - w_arr
        if np.all(np.abs(resid) < tol):
            break
        slope = np.exp(log_det_jacobian(lam, cfg, z))
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(slope > 0, resid / slope, 0.0)
        candidate = np.clip(z - step, left, right)
        better = np.abs(forward(lam, cfg, candidate) - w_arr) < np.abs(resid)
        z = np.where(better, candidate, z)
    return float(z[0]) if scalar else z


def sample_batch(lam: ConstrainedFlowParams, cfg: FlowConfig, T: int, rng: np.random.Generator) -> FlowSampleBatch:
    if T < 1:
        raise ValueError("need at least one sample")
    z = rng.standard_normal(T)
    w, log_q = density(lam, cfg, z)
    return FlowSampleBatch(z=z, w=w, log_q=log_q)

