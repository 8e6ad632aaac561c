"""Session-scoped trained fixtures shared by the acceptance tests.

Training the digit VAE and the shapes denoiser dominates the suite's
runtime, so each world is built once and reused by every criterion that
needs it.
"""

import time

import numpy as np
import pytest

import samn.amnesia as am
import samn.evalsuite as ev
import samn.fisher as fi
import samn.genmodels as gm
import samn.probkit as pk
from samn.shell import datasets as ds


@pytest.fixture(scope="session")
def digits_world():
    """Digit dataset, eval classifier, pretrained conditional VAE, its FIM,
    a replay buffer over classes 1-9 and a uniform surrogate for class 0."""
    data = ds.load_builtin_digits()
    # jitter plus label smoothing keep the classifier calibrated on
    # off-manifold inputs (forgotten-class samples) at >=0.97 held-out acc
    clf = ev.train_classifier(
        data.images, data.labels, 10,
        ev.ClassifierConfig(hidden=(256,), epochs=30, seed=0,
                            augment_noise=0.4, label_smoothing=0.05),
    )
    t_start = time.monotonic()
    model = gm.make_conditional_vae(64, 10, latent_dim=8, hidden=(256, 512), seed=0)
    gm.train_generative(
        model, data, gm.TrainConfig(steps=20000, batch_size=256, lr=1e-4, seed=0)
    )
    pretrain_seconds = time.monotonic() - t_start

    ref = model.params.copy()
    fim_x, fim_c = [], []
    for c in range(10):
        fim_x.append(gm.vae_sample(model, c, 2000, seed=200 + c))
        fim_c.append(np.full(2000, c))
    perm = np.random.default_rng(42).permutation(20000)
    fim_x = np.concatenate(fim_x)[perm]
    fim_c = np.concatenate(fim_c)[perm]
    t_start = time.monotonic()
    fim = fi.estimate_fim(
        model.params,
        list(zip(fim_x, fim_c)),
        gm.vae_elbo_sample_fn(model, np.random.default_rng(43)),
        source="frozen digit vae, 2000 per class",
    )
    fim_seconds = time.monotonic() - t_start

    replay = am.build_replay(model, list(range(1, 10)), 4500, seed=11)
    surrogate = am.build_surrogate(
        am.SurrogateSpec("uniform", 5000, seed=12), model, (0,)
    )
    real_rem = data.images[data.labels != 0]
    rr_idx = np.random.default_rng(5).choice(real_rem.shape[0], 600, replace=False)
    return {
        "data": data,
        "clf": clf,
        "model": model,
        "ref": ref,
        "fim": fim,
        "replay": replay,
        "surrogate": surrogate,
        "real_remember_feats": ev.features(clf, real_rem[rr_idx]),
        "pretrain_seconds": pretrain_seconds,
        "fim_seconds": fim_seconds,
    }


def _clone_vae(world):
    m = gm.make_conditional_vae(64, 10, latent_dim=8, hidden=(256, 512), seed=0)
    m.params.values[:] = world["ref"].values
    return m


def vae_eval(world, model, forget_target=0):
    """Standard post-forgetting readout: class-0 sample stats plus
    remember-class Fréchet proxy and accuracy."""
    clf = world["clf"]
    s0 = gm.vae_sample(model, 0, 500, seed=77)
    prob, _ = ev.forgotten_class_prob(clf, s0, forget_target)
    ent, _ = ev.classifier_entropy(clf, s0)
    gen = np.concatenate([gm.vae_sample(model, c, 67, seed=300 + c) for c in range(1, 10)])
    labels = np.concatenate([np.full(67, c) for c in range(1, 10)])
    fd = ev.frechet_distance(world["real_remember_feats"], ev.features(clf, gen))
    racc = ev.accuracy(clf, gen, labels)
    return {"prob": prob, "entropy": ent, "frechet": fd, "remember_acc": racc}


@pytest.fixture(scope="session")
def digits_forgotten(digits_world):
    """The headline forgetting run: uniform surrogate, lambda=100, 10K steps."""
    model = _clone_vae(digits_world)
    cfg = am.SAConfig(
        lam=100.0, steps=10000, forget_batch=256, replay_batch=256,
        lr=1e-4, seed=21, objective="surrogate", forget_classes=(0,),
    )
    t_start = time.monotonic()
    am.run_forgetting(
        model, cfg, digits_world["fim"], digits_world["ref"],
        digits_world["surrogate"], digits_world["replay"],
    )
    seconds = time.monotonic() - t_start
    stats = vae_eval(digits_world, model)
    stats["seconds"] = seconds
    stats["model"] = model
    return stats


@pytest.fixture(scope="session")
def digits_naive(digits_world):
    """Ablation: descend the true forget-class likelihood instead of
    ascending a surrogate's."""
    model = _clone_vae(digits_world)
    frozen_forget = (
        gm.vae_sample(digits_world["model"], 0, 5000, seed=13),
        np.zeros(5000, dtype=int),
    )
    cfg = am.SAConfig(
        lam=100.0, steps=10000, forget_batch=256, replay_batch=256,
        lr=1e-4, seed=21, objective="naive", forget_classes=(0,),
    )
    am.run_forgetting(
        model, cfg, digits_world["fim"], digits_world["ref"],
        frozen_forget, digits_world["replay"],
    )
    stats = vae_eval(digits_world, model)
    stats["model"] = model
    return stats


@pytest.fixture(scope="session")
def digits_remapped(digits_world):
    """Forget class 0 by remapping it onto frozen-model samples of class 1."""
    model = _clone_vae(digits_world)
    surrogate = am.build_surrogate(
        am.SurrogateSpec("remap", 5000, seed=14, target=1), digits_world["model"], (0,)
    )
    cfg = am.SAConfig(
        lam=100.0, steps=10000, forget_batch=256, replay_batch=256,
        lr=1e-4, seed=22, objective="surrogate", forget_classes=(0,),
    )
    am.run_forgetting(
        model, cfg, digits_world["fim"], digits_world["ref"],
        surrogate, digits_world["replay"],
    )
    stats = vae_eval(digits_world, model, forget_target=1)
    stats["model"] = model
    return stats


@pytest.fixture(scope="session")
def shapes_world():
    """Synthetic shapes dataset, eval classifier, pretrained conditional
    denoiser, a replay buffer over classes 1-2 (reused as FIM samples) and
    a uniform surrogate for class 0."""
    data = ds.make_synthetic_dataset("shapes-8x8", 3, 2000, seed=0)
    clf = ev.train_classifier(
        data.images, data.labels, 3,
        ev.ClassifierConfig(hidden=(64,), epochs=10, seed=0),
    )
    schedule = pk.build_linear_schedule(200, 5e-4, 0.1)
    model = gm.make_conditional_denoiser(64, 3, schedule, hidden=(256, 256), seed=0)
    gm.train_generative(
        model, data,
        gm.TrainConfig(steps=20000, batch_size=128, lr=1e-3, seed=0, cond_drop_rate=0.1),
    )
    ref = model.params.copy()
    # replay is drawn at guidance 1 (exactly conditional); stronger guidance
    # sharpens samples off-manifold and rehearsing on those hurts the
    # remember classes more than having no replay at all
    replay = am.build_replay(model, [1, 2], 1500, seed=11, guidance_w=1.0)
    fim = fi.estimate_fim(
        model.params,
        list(zip(replay.images, replay.labels)),
        gm.ddpm_elbo_sample_fn(model, np.random.default_rng(43), 10),
        source="replay buffer, classes 1-2",
    )
    surrogate = am.build_surrogate(
        am.SurrogateSpec("uniform", 1500, seed=12), model, (0,)
    )
    real_rem = data.images[data.labels != 0]
    rr_idx = np.random.default_rng(5).choice(real_rem.shape[0], 300, replace=False)
    return {
        "data": data,
        "clf": clf,
        "schedule": schedule,
        "model": model,
        "ref": ref,
        "fim": fim,
        "replay": replay,
        "surrogate": surrogate,
        "real_remember_feats": ev.features(clf, real_rem[rr_idx]),
    }


def _clone_denoiser(world):
    m = gm.make_conditional_denoiser(64, 3, world["schedule"], hidden=(256, 256), seed=0)
    m.params.values[:] = world["ref"].values
    return m


def ddpm_eval(world, model, guidance_w=1.0):
    clf = world["clf"]
    s0 = gm.ddpm_sample_cfg(model, 0, guidance_w, 300, seed=77)
    prob, _ = ev.forgotten_class_prob(clf, s0, 0)
    gen = np.concatenate(
        [gm.ddpm_sample_cfg(model, c, guidance_w, 150, seed=300 + c) for c in (1, 2)]
    )
    labels = np.concatenate([np.full(150, 1), np.full(150, 2)])
    fd = ev.frechet_distance(world["real_remember_feats"], ev.features(clf, gen))
    racc = ev.accuracy(clf, gen, labels)
    return {"prob": prob, "frechet": fd, "remember_acc": racc}


def run_ddpm_forgetting(world, lam, use_replay=True, steps=2000, lr=1e-4, seed=21):
    model = _clone_denoiser(world)
    cfg = am.SAConfig(
        lam=lam, steps=steps, forget_batch=64, replay_batch=64,
        lr=lr, seed=seed, objective="surrogate", use_replay=use_replay,
        forget_classes=(0,),
    )
    am.run_forgetting(
        model, cfg, world["fim"], world["ref"], world["surrogate"],
        world["replay"] if use_replay else None,
    )
    return model


@pytest.fixture(scope="session")
def shapes_sweep(shapes_world):
    """Fréchet proxies for lambda in {1, 10, 100} with replay, plus the
    replay-off run at lambda=10."""
    out = {}
    for lam in (1.0, 10.0, 100.0):
        model = run_ddpm_forgetting(shapes_world, lam)
        out[lam] = ddpm_eval(shapes_world, model)
    model = run_ddpm_forgetting(shapes_world, 10.0, use_replay=False)
    out["no_replay"] = ddpm_eval(shapes_world, model)
    return out
