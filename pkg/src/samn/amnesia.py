"""The forgetting trainer: surrogate datasets for the class to forget,
replay buffers sampled from the frozen original model, and the combined
objective (surrogate ELBO ascent + parameter anchoring + replay ELBO),
with the naive variant (descent on the forget-class ELBO) kept for
ablation.

All losses are minimized; the combined loss is
    -ELBO(forget batch) + penalty - replay_weight * ELBO(replay batch)
where for objective="naive" the first term flips sign (the forget batch
then holds frozen-model samples of the true forget classes rather than
surrogate draws).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from . import fisher as fi
from . import genmodels as gm


@dataclass
class SurrogateSpec:
    """The user's choice of replacement distribution for the forget class."""

    kind: str  # "uniform" | "remap" | "explicit"
    size: int
    seed: int = 0
    target: int | None = None  # remap target class
    path: str | None = None  # explicit sample file (.npy, values in [0, 1])

    def __post_init__(self):
        if self.kind not in ("uniform", "remap", "explicit"):
            raise ValueError(f"unknown surrogate kind {self.kind!r}")
        if self.kind == "remap" and self.target is None:
            raise ValueError("remap surrogate needs a target class")
        if self.kind == "explicit" and not self.path:
            raise ValueError("explicit surrogate needs a sample path")


@dataclass
class ReplayBuffer:
    """(x, c) pairs generated by the frozen original model, labels drawn
    only from the remember classes."""

    images: np.ndarray
    labels: np.ndarray
    source: str = ""

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=int)
        if self.images.shape[0] != self.labels.shape[0]:
            raise ValueError("images and labels count mismatch")


@dataclass
class SAConfig:
    lam: float
    steps: int
    forget_batch: int = 256
    replay_batch: int = 256
    lr: float = 1e-4
    seed: int = 0
    objective: str = "surrogate"  # or "naive"
    use_replay: bool = True
    forget_classes: tuple = (0,)
    replay_weight: float = 1.0
    guidance_scale: float = 2.0  # DDPM sampling during surrogate/replay builds
    log_every: int = 100

    def __post_init__(self):
        if self.lam < 0:
            raise ValueError("lambda must be >= 0")
        if self.objective not in ("surrogate", "naive"):
            raise ValueError(f"unknown objective {self.objective!r}")


def _sample_frozen(model, c, n, seed, guidance_w=2.0):
    if isinstance(model, gm.ConditionalVAE):
        return gm.vae_sample(model, c, n, seed)
    if isinstance(model, gm.ConditionalDenoiser):
        return gm.ddpm_sample_cfg(model, c, guidance_w, n, seed)
    raise TypeError(f"unsupported model type {type(model).__name__}")


def build_surrogate(spec, frozen_model, forget_classes, guidance_w=2.0):
    """Sample set over the forget classes from the chosen q(x|c_f).

    uniform: i.i.d. Uniform[0, 1] pixels. remap: frozen-model samples
    conditioned on the target class, relabeled with the forget classes.
    explicit: loaded verbatim from spec.path.
    """
    forget_classes = tuple(int(c) for c in forget_classes)
    data_dim = (
        frozen_model.input_dim
        if isinstance(frozen_model, gm.ConditionalVAE)
        else frozen_model.data_dim
    )
    rng = np.random.default_rng(spec.seed)
    if spec.kind == "uniform":
        images = rng.random((spec.size, data_dim))
    elif spec.kind == "remap":
        if spec.target in forget_classes:
            raise ValueError("remap target must not be a forget class")
        images = _sample_frozen(
            frozen_model, spec.target, spec.size, spec.seed, guidance_w
        )
    else:
        images = np.asarray(np.load(spec.path), dtype=np.float64)
        if images.ndim != 2 or images.shape[1] != data_dim:
            raise ValueError(
                f"explicit samples have shape {images.shape}, expected (n, {data_dim})"
            )
        images = images[: spec.size]
    labels = np.asarray(forget_classes, dtype=int)[
        rng.integers(0, len(forget_classes), size=images.shape[0])
    ]
    return images, labels


def build_replay(frozen_model, remember_classes, n, seed, guidance_w=2.0):
    """Stratified conditional samples from the frozen model: n split as
    evenly as possible over the remember classes."""
    remember_classes = sorted(int(c) for c in remember_classes)
    if not remember_classes:
        raise ValueError("remember class set is empty")
    if n < 1:
        raise ValueError("replay size must be >= 1")
    counts = [n // len(remember_classes)] * len(remember_classes)
    for i in range(n - sum(counts)):
        counts[i] += 1
    images, labels = [], []
    for i, (c, count) in enumerate(zip(remember_classes, counts)):
        if count == 0:
            continue
        images.append(_sample_frozen(frozen_model, c, count, seed + i, guidance_w))
        labels.append(np.full(count, c, dtype=int))
    return ReplayBuffer(
        images=np.concatenate(images, axis=0),
        labels=np.concatenate(labels),
        source=f"frozen {type(frozen_model).__name__}, seed {seed}",
    )


def _batch_elbo_term(model, pv, x, labels, rng):
    """Mean per-sample ELBO of a batch as a Var (negated DDPM loss)."""
    if isinstance(model, gm.ConditionalVAE):
        c_onehot = gm.one_hot(labels, model.class_count)
        noise = rng.standard_normal((x.shape[0], model.latent_dim))
        recon, kl = gm.vae_elbo_parts(model, pv, x, c_onehot, noise)
        return dc.vmean(recon - kl)
    t = rng.integers(1, model.schedule.T + 1, size=x.shape[0])
    eps = rng.standard_normal(x.shape)
    losses = gm.ddpm_loss_batch(model, pv, x, t, eps, np.asarray(labels, dtype=int))
    return -dc.vmean(losses)


def sa_objective(model, forget_batch, replay_batch, fim, ref_params, config, rng=None):
    """One evaluation of the combined loss and its gradient.

    Returns (loss value, gradient ParamStore, dict of the three term values).
    `forget_batch`/`replay_batch` are (images, labels) pairs; replay may be
    None only when config.use_replay is false.
    """
    rng = np.random.default_rng(config.seed) if rng is None else rng
    fx, fc = forget_batch
    if fx.shape[0] == 0:
        raise ValueError("forget batch is empty")
    if config.use_replay:
        if replay_batch is None or replay_batch[0].shape[0] == 0:
            raise ValueError("replay batch is empty but use_replay is set")
        rx, rc = replay_batch
    forget_sign = 1.0 if config.objective == "naive" else -1.0
    terms = {}

    def record(name, compute):
        try:
            term = compute()
            value = float(dc.value_of(term))
        except dc.NonFiniteError as exc:
            raise dc.NonFiniteError(f"non-finite {name} term ({exc})") from exc
        if not np.isfinite(value):
            raise dc.NonFiniteError(f"non-finite {name} term")
        terms[name] = value
        return term

    def loss_fn(pv):
        total = record(
            "forget", lambda: forget_sign * _batch_elbo_term(model, pv, fx, fc, rng)
        )
        if config.lam > 0:
            total = total + record(
                "ewc",
                lambda: fi.ewc_penalty_term(pv, model.params, ref_params, fim, config.lam),
            )
        else:
            terms["ewc"] = 0.0
        if config.use_replay:
            total = total + record(
                "replay",
                lambda: -config.replay_weight * _batch_elbo_term(model, pv, rx, rc, rng),
            )
        else:
            terms["replay"] = 0.0
        return total

    value, grads = dc.value_and_grad(loss_fn, model.params)
    return value, grads, dict(terms)


def run_forgetting(model, config, fim, ref_params, surrogate, replay):
    """The forgetting loop; mutates model.params, returns (params, log).

    `surrogate` is the (images, labels) pair from build_surrogate (for the
    naive objective: frozen-model samples of the true forget classes);
    `replay` is a ReplayBuffer or None. Each log entry records the three
    loss terms separately.
    """
    model.params.require_aligned(ref_params, "reference ParamStore")
    fim.require_aligned(model.params)
    rng = np.random.default_rng(config.seed)
    state = dc.AdamState.for_params(model.params)
    sx, sc = surrogate
    log = []
    for step in range(config.steps):
        idx = rng.integers(0, sx.shape[0], size=config.forget_batch)
        forget_batch = (sx[idx], sc[idx])
        replay_batch = None
        if config.use_replay:
            ridx = rng.integers(0, replay.images.shape[0], size=config.replay_batch)
            replay_batch = (replay.images[ridx], replay.labels[ridx])
        try:
            value, grads, terms = sa_objective(
                model, forget_batch, replay_batch, fim, ref_params, config, rng
            )
        except dc.NonFiniteError as exc:
            raise dc.NonFiniteError(f"step {step}: {exc}") from exc
        dc.adam_step(model.params, grads, state, config.lr)
        if step % config.log_every == 0 or step == config.steps - 1:
            terms["step"], terms["loss"] = step, value
            log.append(terms)
    return model.params, log
