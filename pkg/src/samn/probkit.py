"""Probability primitives: diagonal Gaussians, closed-form KL, Bernoulli
pixel likelihoods and diffusion noise schedules.

The elementwise helpers (`bernoulli_log_pmf`, `kl_to_std_normal`) are written
against the diffcore op set, so they work both on plain numpy arrays and on
tape Vars inside training losses.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc

LOG_2PI = float(np.log(2.0 * np.pi))
BERNOULLI_EPS = 1e-7  # clamp for saturated decoder outputs


@dataclass
class DiagGaussian:
    mean: np.ndarray
    log_variance: np.ndarray

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        self.log_variance = np.atleast_1d(
            np.asarray(self.log_variance, dtype=np.float64)
        )
        if self.mean.shape != self.log_variance.shape:
            raise ValueError("mean and log_variance shapes differ")
        dc.require_finite(self.mean, "mean")
        dc.require_finite(self.log_variance, "log_variance")

    @classmethod
    def from_variance(cls, mean, variance):
        return cls(np.asarray(mean, float), np.log(np.asarray(variance, float)))

    @property
    def variance(self):
        return np.exp(self.log_variance)

    @property
    def dim(self):
        return self.mean.size

    def sample(self, rng, n=None):
        size = self.dim if n is None else (n, self.dim)
        return self.mean + np.sqrt(self.variance) * rng.standard_normal(size)


def gaussian_log_pdf(x, dist):
    """Exact diagonal-Gaussian log density; batched if x is (n, d)."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[-1] != dist.dim:
        raise ValueError(f"dimension mismatch: x has {x.shape[-1]}, dist {dist.dim}")
    z2 = (x - dist.mean) ** 2 / dist.variance
    return -0.5 * np.sum(LOG_2PI + dist.log_variance + z2, axis=-1)


def kl_diag_gaussians(a, b):
    """D_KL(a || b), closed form; >= 0, zero iff a == b."""
    if a.dim != b.dim:
        raise ValueError("dimension mismatch between the two Gaussians")
    var_ratio = a.variance / b.variance
    dmean2 = (a.mean - b.mean) ** 2 / b.variance
    return float(
        0.5 * np.sum(var_ratio + dmean2 - 1.0 + b.log_variance - a.log_variance)
    )


def bernoulli_log_pmf(x, probs):
    """sum x*ln p + (1-x)*ln(1-p) with p clamped to [eps, 1-eps].

    Supports real-valued x in [0, 1] (binary cross-entropy convention) and
    batched inputs (sum over the last axis). Var-friendly.
    """
    xv, pv = dc.value_of(x), dc.value_of(probs)
    if xv.shape[-1] != pv.shape[-1]:
        raise ValueError("dimension mismatch between x and probs")
    p = dc.clip(probs, BERNOULLI_EPS, 1.0 - BERNOULLI_EPS)
    return dc.vsum(x * dc.log(p) + (1.0 - x) * dc.log(1.0 - p), axis=-1)


def kl_to_std_normal(mean, log_var):
    """D_KL(N(mean, exp(log_var)) || N(0, I)), summed over the last axis.

    Var-friendly; this is the VAE posterior-to-prior KL term.
    """
    return 0.5 * dc.vsum(
        dc.exp(log_var) + mean * mean - 1.0 - log_var, axis=-1
    )


@dataclass(frozen=True)
class NoiseSchedule:
    """Diffusion constants: betas in (0,1) for t=1..T and their running
    alpha-bar products (strictly decreasing, alpha_bar_0 == 1)."""

    betas: np.ndarray
    alpha_bars: np.ndarray

    @property
    def T(self):
        return self.betas.size

    def beta(self, t):
        self._check_t(t)
        return float(self.betas[t - 1])

    def alpha_bar(self, t):
        if t == 0:
            return 1.0
        self._check_t(t)
        return float(self.alpha_bars[t - 1])

    def _check_t(self, t):
        if not 1 <= t <= self.T:
            raise ValueError(f"timestep {t} out of range [1, {self.T}]")


def build_linear_schedule(T, beta_start, beta_end):
    if T < 1:
        raise ValueError("T must be >= 1")
    if not (0.0 < beta_start <= beta_end < 1.0):
        raise ValueError("need 0 < beta_start <= beta_end < 1")
    betas = np.linspace(beta_start, beta_end, T)
    alpha_bars = np.cumprod(1.0 - betas)
    return NoiseSchedule(betas=betas, alpha_bars=alpha_bars)


def forward_noise(schedule, x0, t, eps):
    """x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps. Var-friendly
    in x0/eps; t may be a scalar or a per-row integer array."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=int))
    if np.any(t_arr < 1) or np.any(t_arr > schedule.T):
        raise ValueError(f"timestep out of range [1, {schedule.T}]")
    ab = schedule.alpha_bars[t_arr - 1]
    if np.isscalar(t) or np.asarray(t).ndim == 0:
        ab = float(ab[0])
        return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
    ab = ab[:, None]
    return np.sqrt(ab) * x0 + np.sqrt(1.0 - ab) * eps
