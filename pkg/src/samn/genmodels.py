"""Conditional generative models: a one-hot-concatenation conditional VAE
with a Bernoulli pixel decoder, and a conditional denoiser (MLP with
sinusoidal time embedding and FiLM class modulation) trained to predict the
forward-process noise.

Sign convention: the denoiser's training loss is a sum of squared noise
prediction errors; wherever an ELBO of the diffusion model is required (FIM
estimation, the forgetting objective) the NEGATED loss is used as the
surrogate ELBO.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from . import probkit as pk


def one_hot(labels, count):
    labels = np.atleast_1d(np.asarray(labels, dtype=int))
    if np.any(labels < 0) or np.any(labels >= count):
        raise ValueError(f"label out of range [0, {count})")
    out = np.zeros((labels.size, count))
    out[np.arange(labels.size), labels] = 1.0
    return out


# ---------------------------------------------------------------------------
# Conditional VAE


@dataclass
class ConditionalVAE:
    encoder: dc.NetworkSpec  # x || onehot(c) -> (mean, log_var) over z
    decoder: dc.NetworkSpec  # z || onehot(c) -> Bernoulli probs over pixels
    params: dc.ParamStore  # segments prefixed "enc." / "dec."
    latent_dim: int
    class_count: int
    input_dim: int


def make_conditional_vae(input_dim, class_count, latent_dim=8, hidden=(256, 512), seed=0):
    rng = np.random.default_rng(seed)
    enc = dc.NetworkSpec(
        in_dim=input_dim,
        widths=tuple(hidden) + (2 * latent_dim,),
        activations=("relu",) * len(hidden) + ("identity",),
        cond_dim=class_count,
        conditioning="concat",
    )
    dec = dc.NetworkSpec(
        in_dim=latent_dim,
        widths=tuple(hidden) + (input_dim,),
        activations=("relu",) * len(hidden) + ("sigmoid",),
        cond_dim=class_count,
        conditioning="concat",
    )
    enc_params = dc.init_params(enc, rng, prefix="enc.")
    dec_params = dc.init_params(dec, rng, prefix="dec.")
    named = [(n, enc_params.get(n)) for n in enc_params.names()]
    named += [(n, dec_params.get(n)) for n in dec_params.names()]
    params = dc.ParamStore.from_arrays(named)
    return ConditionalVAE(enc, dec, params, latent_dim, class_count, input_dim)


def vae_encode(model, params, x, c_onehot):
    out = dc.forward(model.encoder, params, x, c_onehot, prefix="enc.")
    k = model.latent_dim
    return dc.slice_cols(out, 0, k), dc.slice_cols(out, k, 2 * k)


def vae_decode(model, params, z, c_onehot):
    return dc.forward(model.decoder, params, z, c_onehot, prefix="dec.")


def vae_elbo_parts(model, params, x, c_onehot, noise):
    """Per-sample (reconstruction, KL) for a batch. Var-friendly."""
    mean, log_var = vae_encode(model, params, x, c_onehot)
    # the clamp keeps exp(log_var) bounded: an unconstrained encoder variance
    # lets ELBO-descent objectives diverge through the KL term alone
    log_var = dc.clip(log_var, -10.0, 10.0)
    z = mean + dc.exp(0.5 * log_var) * noise
    probs = vae_decode(model, params, z, c_onehot)
    recon = pk.bernoulli_log_pmf(x, probs)
    kl = pk.kl_to_std_normal(mean, log_var)
    return recon, kl


def vae_elbo(model, x, c, noise):
    """Single-sample ELBO = reconstruction - KL at the given reparameterized
    noise draw; plain numpy evaluation."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    noise = np.atleast_2d(np.asarray(noise, dtype=np.float64))
    c_onehot = one_hot(c, model.class_count)
    if c_onehot.shape[0] == 1 and x.shape[0] > 1:
        c_onehot = np.repeat(c_onehot, x.shape[0], axis=0)
    recon, kl = vae_elbo_parts(model, model.params, x, c_onehot, noise)
    elbo = recon - kl
    return float(elbo[0]) if elbo.size == 1 else elbo


def vae_sample(model, c, n, seed, params=None):
    """Decoder probabilities for z ~ N(0, I); expected-pixel convention."""
    params = model.params if params is None else params
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((n, model.latent_dim))
    c_onehot = np.repeat(one_hot(c, model.class_count), n, axis=0)
    return vae_decode(model, params, z, c_onehot)


# ---------------------------------------------------------------------------
# Conditional DDPM (MLP denoiser)


@dataclass
class ConditionalDenoiser:
    net: dc.NetworkSpec  # (x_t || time_emb) with FiLM class conditioning -> eps_hat
    params: dc.ParamStore  # includes "embed.W": (class_count + 1, emb_dim)
    schedule: pk.NoiseSchedule
    class_count: int
    data_dim: int
    time_dim: int
    emb_dim: int

    @property
    def null_class(self):
        # reserved embedding row for unconditional prediction
        return self.class_count


def make_conditional_denoiser(
    data_dim,
    class_count,
    schedule,
    hidden=(128, 128),
    time_dim=16,
    emb_dim=8,
    seed=0,
):
    rng = np.random.default_rng(seed)
    net = dc.NetworkSpec(
        in_dim=data_dim + time_dim,
        widths=tuple(hidden) + (data_dim,),
        activations=("relu",) * len(hidden) + ("identity",),
        cond_dim=emb_dim,
        conditioning="film",
    )
    net_params = dc.init_params(net, rng, prefix="net.")
    embed = rng.normal(0.0, np.sqrt(2.0 / (class_count + 1)), (class_count + 1, emb_dim))
    named = [(n, net_params.get(n)) for n in net_params.names()]
    named.append(("embed.W", embed))
    params = dc.ParamStore.from_arrays(named)
    return ConditionalDenoiser(
        net, params, schedule, class_count, data_dim, time_dim, emb_dim
    )


def time_embedding(t, T, dim):
    """Sinusoidal embedding of integer timesteps; t is scalar or (n,)."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-np.log(10000.0) * np.arange(half) / max(half - 1, 1))
    ang = t_arr[:, None] / T * 1000.0 * freqs[None, :]
    emb = np.concatenate([np.sin(ang), np.cos(ang)], axis=1)
    if emb.shape[1] < dim:
        emb = np.concatenate([emb, np.zeros((emb.shape[0], dim - emb.shape[1]))], axis=1)
    return emb


def denoise(model, params, x_t, t, class_idx):
    """eps_hat for a batch; class_idx is per-row int (null_class allowed)."""
    t_arr = np.atleast_1d(np.asarray(t, dtype=int))
    temb = time_embedding(t_arr, model.schedule.T, model.time_dim)
    onehot = one_hot(class_idx, model.class_count + 1)
    if onehot.shape[0] == 1 and temb.shape[0] > 1:
        onehot = np.repeat(onehot, temb.shape[0], axis=0)
    get = dc._getter(params)
    cond = onehot @ get("embed.W")
    inp = dc.concat([x_t, temb], axis=-1)
    return dc.forward(model.net, params, inp, cond, prefix="net.")


def ddpm_loss(model, x0, c, t, eps, params=None):
    """Squared noise-prediction error at one (x0, t, eps); c may be None for
    the unconditional (null token) branch. Plain numpy evaluation."""
    params = model.params if params is None else params
    losses = ddpm_loss_batch(
        model,
        params,
        np.atleast_2d(np.asarray(x0, dtype=np.float64)),
        np.atleast_1d(np.asarray(t, dtype=int)),
        np.atleast_2d(np.asarray(eps, dtype=np.float64)),
        np.atleast_1d(model.null_class if c is None else int(c)),
    )
    losses = dc.value_of(losses)
    return float(losses[0]) if losses.size == 1 else losses


def ddpm_loss_batch(model, params, x0, t, eps, class_idx):
    """Per-sample ||eps_hat - eps||^2 for a batch. Var-friendly in params."""
    x_t = pk.forward_noise(model.schedule, x0, t, eps)
    eps_hat = denoise(model, params, x_t, t, class_idx)
    diff = eps_hat - eps
    return dc.vsum(diff * diff, axis=-1)


def cfg_prediction(model, params, x_t, t, c, guidance_w):
    """eps_null + w * (eps_cond - eps_null); exactly conditional at w == 1."""
    n = np.atleast_2d(x_t).shape[0]
    cond_idx = np.full(n, int(c))
    eps_c = denoise(model, params, x_t, t, cond_idx)
    if guidance_w == 1.0:
        return eps_c
    null_idx = np.full(n, model.null_class)
    eps_u = denoise(model, params, x_t, t, null_idx)
    return eps_u + guidance_w * (eps_c - eps_u)


def ddpm_sample_cfg(model, c, guidance_w, n, seed, params=None, clip_range=(0.0, 1.0)):
    """Ancestral sampling with classifier-free guidance; Gaussian transition
    noise (variance beta_t) at every step except t == 1."""
    params = model.params if params is None else params
    rng = np.random.default_rng(seed)
    sched = model.schedule
    x = rng.standard_normal((n, model.data_dim))
    for t in range(sched.T, 0, -1):
        beta = sched.beta(t)
        ab = sched.alpha_bar(t)
        eps_hat = cfg_prediction(model, params, x, np.full(n, t), c, guidance_w)
        x = (x - beta / np.sqrt(1.0 - ab) * eps_hat) / np.sqrt(1.0 - beta)
        if t > 1:
            x = x + np.sqrt(beta) * rng.standard_normal((n, model.data_dim))
    if clip_range is not None:
        x = np.clip(x, *clip_range)
    return x


# ---------------------------------------------------------------------------
# Training


@dataclass
class TrainConfig:
    steps: int
    batch_size: int = 256
    lr: float = 1e-4
    seed: int = 0
    cond_drop_rate: float = 0.1  # DDPM only
    log_every: int = 100


def train_generative(model, dataset, config):
    """MLE/ELBO training with Adam; returns (trained ParamStore, loss log).

    `dataset` exposes .images (n, d) in [0, 1] and .labels (n,). The model's
    own ParamStore is updated in place.
    """
    if isinstance(model, ConditionalVAE):
        return _train_vae(model, dataset, config)
    if isinstance(model, ConditionalDenoiser):
        return _train_ddpm(model, dataset, config)
    raise TypeError(f"unsupported model type {type(model).__name__}")


def _train_vae(model, dataset, config):
    if dataset.images.shape[0] == 0:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(config.seed)
    params = model.params
    state = dc.AdamState.for_params(params)
    log = []
    n = dataset.images.shape[0]
    for step in range(config.steps):
        idx = rng.integers(0, n, size=config.batch_size)
        x = dataset.images[idx]
        c_onehot = one_hot(dataset.labels[idx], model.class_count)
        noise = rng.standard_normal((config.batch_size, model.latent_dim))

        def loss_fn(pv):
            recon, kl = vae_elbo_parts(model, pv, x, c_onehot, noise)
            return -dc.vmean(recon - kl)

        value, grads = dc.value_and_grad(loss_fn, params)
        dc.adam_step(params, grads, state, config.lr)
        if step % config.log_every == 0 or step == config.steps - 1:
            log.append((step, value))
    return params, log


def _train_ddpm(model, dataset, config):
    if dataset.images.shape[0] == 0:
        raise ValueError("dataset is empty")
    rng = np.random.default_rng(config.seed)
    params = model.params
    state = dc.AdamState.for_params(params)
    log = []
    n = dataset.images.shape[0]
    T = model.schedule.T
    for step in range(config.steps):
        idx = rng.integers(0, n, size=config.batch_size)
        x0 = dataset.images[idx]
        class_idx = dataset.labels[idx].astype(int).copy()
        drop = rng.random(config.batch_size) < config.cond_drop_rate
        class_idx[drop] = model.null_class
        t = rng.integers(1, T + 1, size=config.batch_size)
        eps = rng.standard_normal(x0.shape)

        def loss_fn(pv):
            return dc.vmean(ddpm_loss_batch(model, pv, x0, t, eps, class_idx))

        value, grads = dc.value_and_grad(loss_fn, params)
        dc.adam_step(params, grads, state, config.lr)
        if step % config.log_every == 0 or step == config.steps - 1:
            log.append((step, value))
    return params, log


# ---------------------------------------------------------------------------
# Per-sample ELBO closures (consumed by the Fisher estimator and the
# forgetting objective)


def vae_elbo_sample_fn(model, rng):
    """elbo(params_vars, x, c) -> Var, one fresh noise draw per call."""

    def elbo_fn(pv, x, c):
        noise = rng.standard_normal((1, model.latent_dim))
        c_onehot = one_hot(c, model.class_count)
        recon, kl = vae_elbo_parts(model, pv, np.atleast_2d(x), c_onehot, noise)
        return dc.vsum(recon - kl)

    return elbo_fn


def ddpm_elbo_sample_fn(model, rng, k_timesteps=10):
    """Negated noise-prediction loss averaged over K uniform timesteps."""

    def elbo_fn(pv, x, c):
        t = rng.integers(1, model.schedule.T + 1, size=k_timesteps)
        x0 = np.repeat(np.atleast_2d(x), k_timesteps, axis=0)
        eps = rng.standard_normal(x0.shape)
        class_idx = np.full(k_timesteps, int(c))
        losses = ddpm_loss_batch(model, pv, x0, t, eps, class_idx)
        return -dc.vmean(losses)

    return elbo_fn
