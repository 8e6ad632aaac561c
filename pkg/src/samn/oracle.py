"""Closed-form Gaussian worlds that numerically check the forgetting
guarantee: fitting the surrogate distribution can only lower the expected
true-data log-likelihood, and the gap equals -KL(p || q) exactly when the
surrogate fit is exact.

Expected log-density of one diagonal Gaussian under another has the closed
form  E_{N(m1,s1^2)}[log N(x; m2, s2^2)]
      = -1/2 log(2 pi s2^2) - (s1^2 + (m1 - m2)^2) / (2 s2^2)
summed over coordinates; every check below reduces to it.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .probkit import DiagGaussian, LOG_2PI, gaussian_log_pdf, kl_diag_gaussians


@dataclass
class GaussianWorld:
    """Two disjoint classes (forget / remember) with diagonal-Gaussian
    conditionals and a surrogate for the forget class."""

    phi_f: float
    phi_r: float
    p_f: DiagGaussian  # true p(x | c_f)
    p_r: DiagGaussian  # true p(x | c_r)
    q_f: DiagGaussian  # surrogate q(x | c_f)

    def __post_init__(self):
        if self.phi_f <= 0 or self.phi_r <= 0:
            raise ValueError("mixture weights must be positive")
        if abs(self.phi_f + self.phi_r - 1.0) > 1e-12:
            raise ValueError("mixture weights must sum to 1")
        if not (self.p_f.dim == self.p_r.dim == self.q_f.dim):
            raise ValueError("all component dimensions must match")


def random_world(rng, dim=3, strict=True):
    """A seeded random world; strict mode guarantees q_f != p_f."""
    def draw():
        return DiagGaussian(
            mean=rng.normal(0.0, 2.0, dim),
            log_variance=rng.normal(0.0, 0.5, dim),
        )

    phi_f = float(rng.uniform(0.1, 0.9))
    p_f, p_r, q_f = draw(), draw(), draw()
    if strict and kl_diag_gaussians(p_f, q_f) < 1e-6:
        q_f = DiagGaussian(q_f.mean + 1.0, q_f.log_variance)
    return GaussianWorld(phi_f, 1.0 - phi_f, p_f, p_r, q_f)


def fit_gaussian_mle(samples=None, moments=None):
    """Diagonal-Gaussian MLE: sample mean and biased (1/n) variance.

    Exact-moment mode (`moments` = a DiagGaussian) returns the moments
    verbatim, realizing the asymptotic assumption that the fitted model
    reproduces its target distribution exactly.
    """
    if moments is not None:
        return DiagGaussian(moments.mean.copy(), moments.log_variance.copy())
    samples = np.atleast_2d(np.asarray(samples, dtype=np.float64))
    if samples.shape[0] < 2:
        raise ValueError("need at least 2 samples for an MLE fit")
    mean = samples.mean(axis=0)
    var = samples.var(axis=0)  # biased 1/n estimator: the MLE
    if np.any(var < 1e-12):
        raise ValueError("degenerate sample variance")
    return DiagGaussian.from_variance(mean, var)


def expected_log_density(d1, d2):
    """E_{x ~ d1}[log d2(x)] in closed form."""
    if d1.dim != d2.dim:
        raise ValueError("dimension mismatch")
    return float(
        np.sum(
            -0.5 * (LOG_2PI + d2.log_variance)
            - (d1.variance + (d1.mean - d2.mean) ** 2) / (2.0 * d2.variance)
        )
    )


def theorem1_gap(p_f, q_f):
    """The log-likelihood gap between the surrogate-fitted and original
    models on forget-class data: -KL(p_f || q_f), always <= 0."""
    return -kl_diag_gaussians(p_f, q_f)


@dataclass
class TheoremReport:
    lhs_closed: float  # E_{p_f}[log p(x | theta_q)]
    rhs_closed: float  # E_{p_f}[log p(x | theta_*)]
    gap_closed: float
    gap_formula: float  # -KL(p_f || q_f)
    lhs_mc: float
    rhs_mc: float
    mc_stderr: float
    inequality_holds: bool
    gap_matches: bool
    mc_consistent: bool

    @property
    def passed(self):
        return self.inequality_holds and self.gap_matches and self.mc_consistent

    def lines(self):
        return [
            f"lhs_closed={self.lhs_closed:.10f}",
            f"rhs_closed={self.rhs_closed:.10f}",
            f"gap_closed={self.gap_closed:.10f}",
            f"gap_formula={self.gap_formula:.10f}",
            f"lhs_mc={self.lhs_mc:.10f}",
            f"rhs_mc={self.rhs_mc:.10f}",
            f"mc_stderr={self.mc_stderr:.10f}",
            f"inequality_holds={str(self.inequality_holds).lower()}",
            f"gap_matches={str(self.gap_matches).lower()}",
            f"mc_consistent={str(self.mc_consistent).lower()}",
        ]


def verify_theorem1(world, n_mc=100_000, seed=0, gap_tol=1e-10):
    """Check the inequality and its gap both in closed form and by Monte
    Carlo over samples from the true forget-class conditional."""
    if n_mc < 10_000:
        raise ValueError("need n_mc >= 10^4 for a meaningful MC check")
    # Exact-moment fits: the full-data optimum reproduces each class
    # conditional, the surrogate optimum reproduces q.
    theta_star_f = fit_gaussian_mle(moments=world.p_f)
    theta_q_f = fit_gaussian_mle(moments=world.q_f)

    lhs = expected_log_density(world.p_f, theta_q_f)
    rhs = expected_log_density(world.p_f, theta_star_f)
    gap = lhs - rhs
    gap_formula = theorem1_gap(world.p_f, world.q_f)

    rng = np.random.default_rng(seed)
    x = world.p_f.sample(rng, n_mc)
    lq = gaussian_log_pdf(x, theta_q_f)
    ls = gaussian_log_pdf(x, theta_star_f)
    diff = lq - ls
    mc_stderr = float(np.std(diff) / np.sqrt(n_mc))
    gap_mc = float(np.mean(diff))

    return TheoremReport(
        lhs_closed=lhs,
        rhs_closed=rhs,
        gap_closed=gap,
        gap_formula=gap_formula,
        lhs_mc=float(np.mean(lq)),
        rhs_mc=float(np.mean(ls)),
        mc_stderr=mc_stderr,
        inequality_holds=lhs <= rhs + gap_tol,
        gap_matches=abs(gap - gap_formula) <= gap_tol,
        mc_consistent=abs(gap_mc - gap) <= 3.0 * mc_stderr + 1e-12,
    )
