"""Diagonal Fisher information over the ELBO, and the quadratic
parameter-anchoring (EWC) penalty it weights."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import diffcore as dc


@dataclass
class FisherInfo:
    """Per-parameter mean squared ELBO gradient, aligned with a ParamStore."""

    values: np.ndarray
    sample_count: int
    source: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64).ravel()
        if np.any(self.values < 0):
            raise ValueError("Fisher values must be nonnegative")
        dc.require_finite(self.values, "FisherInfo values")

    def require_aligned(self, params):
        if self.values.size != len(params):
            raise dc.AlignmentError(
                f"FIM length {self.values.size} != param length {len(params)}"
            )


def estimate_fim(params, samples, elbo_fn, source=""):
    """Mean over samples of squared per-parameter ELBO gradients.

    `samples` is an iterable of (x, c) pairs drawn from the frozen model
    (never the training set); `elbo_fn(param_vars, x, c)` returns a scalar
    Var. Accumulation order is the iteration order, so results are
    deterministic under a fixed seed.
    """
    acc = np.zeros(len(params))
    count = 0
    for x, c in samples:
        _, grads = dc.value_and_grad(lambda pv: elbo_fn(pv, x, c), params)
        acc += grads.values**2
        count += 1
    if count < 1:
        raise ValueError("need at least one sample to estimate the FIM")
    return FisherInfo(values=acc / count, sample_count=count, source=source)


def ewc_penalty(params, ref, fim, lam):
    """lambda * sum_i F_i/2 (theta_i - theta*_i)^2 and its gradient."""
    if lam < 0:
        raise ValueError("lambda must be >= 0")
    params.require_aligned(ref, "reference ParamStore")
    fim.require_aligned(params)
    delta = params.values - ref.values
    value = float(lam * 0.5 * np.sum(fim.values * delta * delta))
    grad = params.zeros_like()
    grad.values[:] = lam * fim.values * delta
    return value, grad


def ewc_penalty_term(param_vars, params, ref, fim, lam):
    """The same penalty as a tape node over per-segment leaves, for use
    inside a combined training objective."""
    fim.require_aligned(params)
    params.require_aligned(ref, "reference ParamStore")
    total = 0.0
    for name, shape, offset in params.segments:
        size = int(np.prod(shape, dtype=int))
        f = fim.values[offset : offset + size].reshape(shape)
        d = param_vars[name] - ref.get(name)
        total = total + dc.vsum(f * d * d)
    return (lam * 0.5) * total
