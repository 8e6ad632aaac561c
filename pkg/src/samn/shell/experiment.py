"""Experiment orchestration: pretrain -> replay/surrogate -> FIM -> forget
-> evaluate, with every stage checkpointed under the configured output
directory."""

from __future__ import annotations

import os

import numpy as np

from .. import amnesia as am
from .. import diffcore as dc
from .. import evalsuite as ev
from .. import fisher as fi
from .. import genmodels as gm
from .. import probkit as pk
from . import datasets as ds
from .checkpoints import Checkpoint, load_checkpoint, save_checkpoint
from .imaging import write_image_grid


class StageError(RuntimeError):
    def __init__(self, stage, cause):
        super().__init__(f"stage {stage!r} failed: {cause}")
        self.stage = stage
        self.cause = cause


def load_dataset(cfg):
    kind = cfg["data.kind"]
    if kind == "digits":
        return ds.load_builtin_digits()
    if kind == "idx":
        return ds.load_idx_dataset(cfg["data.images_path"], cfg["data.labels_path"])
    return ds.make_synthetic_dataset(
        kind, cfg["data.class_count"], cfg["data.n_per_class"], cfg["data.seed"]
    )


def build_model(cfg, input_dim, class_count):
    if cfg["model.kind"] == "vae":
        return gm.make_conditional_vae(
            input_dim,
            class_count,
            latent_dim=cfg["model.latent_dim"],
            hidden=cfg["model.hidden"],
            seed=cfg["model.seed"],
        )
    schedule = pk.build_linear_schedule(
        cfg["model.timesteps"], cfg["model.beta_start"], cfg["model.beta_end"]
    )
    return gm.make_conditional_denoiser(
        input_dim,
        class_count,
        schedule,
        hidden=cfg["model.hidden"],
        time_dim=cfg["model.time_dim"],
        emb_dim=cfg["model.emb_dim"],
        seed=cfg["model.seed"],
    )


def model_meta(cfg, input_dim, class_count):
    return {
        "model": {
            "kind": cfg["model.kind"],
            "input_dim": input_dim,
            "class_count": class_count,
            "latent_dim": cfg["model.latent_dim"],
            "hidden": list(cfg["model.hidden"]),
            "time_dim": cfg["model.time_dim"],
            "emb_dim": cfg["model.emb_dim"],
        },
        "seeds": {
            "model": cfg["model.seed"],
            "train": cfg["train.seed"],
            "fim": cfg["fim.seed"],
            "amnesia": cfg["amnesia.seed"],
        },
    }


def model_from_checkpoint(ckpt):
    m = ckpt.meta["model"]
    if ckpt.kind == "vae":
        model = gm.make_conditional_vae(
            m["input_dim"],
            m["class_count"],
            latent_dim=m["latent_dim"],
            hidden=tuple(m["hidden"]),
        )
    else:
        model = gm.make_conditional_denoiser(
            m["input_dim"],
            m["class_count"],
            ckpt.schedule,
            hidden=tuple(m["hidden"]),
            time_dim=m["time_dim"],
            emb_dim=m["emb_dim"],
        )
    model.params.require_aligned(ckpt.params, "checkpoint params")
    model.params.values[:] = ckpt.params.values
    return model


def model_checkpoint(cfg, model, meta, fim=None):
    schedule = model.schedule if isinstance(model, gm.ConditionalDenoiser) else None
    return Checkpoint(
        kind=cfg["model.kind"],
        meta=meta,
        params=model.params,
        fim=fim,
        schedule=schedule,
    )


def sample_model(model, c, n, seed, guidance_w=2.0):
    if isinstance(model, gm.ConditionalVAE):
        return gm.vae_sample(model, c, n, seed)
    return gm.ddpm_sample_cfg(model, c, guidance_w, n, seed)


def _fim_samples_vae(model, count, seed):
    """(x, c) pairs from the frozen model, c uniform over all classes."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(0, model.class_count, size=count)
    pairs = []
    for c in range(model.class_count):
        n_c = int(np.sum(labels == c))
        if n_c == 0:
            continue
        imgs = gm.vae_sample(model, c, n_c, seed + 1 + c)
        pairs.extend((imgs[i], c) for i in range(n_c))
    rng.shuffle(pairs)
    return pairs


def run_experiment(cfg, progress=None):
    """Execute the full pipeline; returns (MetricsReport, artifact paths)."""
    outdir = cfg["output.dir"]
    os.makedirs(outdir, exist_ok=True)
    say = progress or (lambda msg: None)
    paths = {}

    def path(name):
        paths[name] = os.path.join(outdir, name)
        return paths[name]

    with open(path("config.txt"), "w", encoding="utf-8") as f:
        f.write(cfg.dumps())

    # -- data + evaluation classifier ---------------------------------------
    try:
        dataset = load_dataset(cfg)
        train_set, holdout = dataset.split(cfg["data.holdout_fraction"], cfg["data.seed"])
        clf = ev.train_classifier(
            dataset.images,
            dataset.labels,
            dataset.class_count,
            ev.ClassifierConfig(
                hidden=cfg["classifier.hidden"],
                epochs=cfg["classifier.epochs"],
                batch_size=cfg["classifier.batch_size"],
                lr=cfg["classifier.lr"],
                seed=cfg["classifier.seed"],
                holdout_fraction=cfg["data.holdout_fraction"],
                augment_noise=cfg["classifier.augment_noise"],
                label_smoothing=cfg["classifier.label_smoothing"],
            ),
        )
        say(f"classifier held-out accuracy {clf.held_out_accuracy:.4f}")
    except Exception as exc:
        raise StageError("classifier", exc) from exc

    meta = model_meta(cfg, dataset.dim, dataset.class_count)

    # -- pretrain ------------------------------------------------------------
    try:
        model = build_model(cfg, dataset.dim, dataset.class_count)
        train_cfg = gm.TrainConfig(
            steps=cfg["train.steps"],
            batch_size=cfg["train.batch_size"],
            lr=cfg["train.lr"],
            seed=cfg["train.seed"],
            cond_drop_rate=cfg["train.cond_drop_rate"],
        )
        gm.train_generative(model, train_set, train_cfg)
        save_checkpoint(model_checkpoint(cfg, model, meta), path("pretrained.samn"))
        say(f"pretrained for {train_cfg.steps} steps")
    except StageError:
        raise
    except Exception as exc:
        raise StageError("pretrain", exc) from exc

    frozen = model_from_checkpoint(load_checkpoint(paths["pretrained.samn"]))
    forget_classes = cfg["amnesia.forget_classes"]
    remember_classes = sorted(set(range(dataset.class_count)) - set(forget_classes))
    guidance_w = cfg["model.guidance_scale"]

    # -- surrogate & replay ---------------------------------------------------
    try:
        spec = am.SurrogateSpec(
            kind=cfg["surrogate.kind"],
            size=cfg["surrogate.size"],
            seed=cfg["surrogate.seed"],
            target=(cfg["surrogate.target"] if cfg["surrogate.target"] >= 0 else None),
            path=cfg["surrogate.path"] or None,
        )
        if cfg["amnesia.objective"] == "naive":
            # the naive ablation descends on the (frozen-model) forget-class ELBO
            sx = np.concatenate(
                [
                    sample_model(frozen, c, spec.size // len(forget_classes), spec.seed + i, guidance_w)
                    for i, c in enumerate(forget_classes)
                ]
            )
            sc = np.repeat(forget_classes, spec.size // len(forget_classes))
            surrogate = (sx, np.asarray(sc, dtype=int))
        else:
            surrogate = am.build_surrogate(spec, frozen, forget_classes, guidance_w)
        replay = None
        if cfg["amnesia.use_replay"] or cfg["fim.use_replay_samples"]:
            replay = am.build_replay(
                frozen, remember_classes, cfg["replay.size"], cfg["replay.seed"], guidance_w
            )
        say("surrogate and replay built")
    except StageError:
        raise
    except Exception as exc:
        raise StageError("surrogate", exc) from exc

    # -- Fisher information ---------------------------------------------------
    try:
        rng = np.random.default_rng(cfg["fim.seed"])
        if isinstance(frozen, gm.ConditionalVAE):
            elbo_fn = gm.vae_elbo_sample_fn(frozen, rng)
            samples = _fim_samples_vae(frozen, cfg["fim.samples"], cfg["fim.seed"])
        else:
            elbo_fn = gm.ddpm_elbo_sample_fn(frozen, rng, cfg["fim.timesteps_per_sample"])
            if cfg["fim.use_replay_samples"]:
                take = min(cfg["fim.samples"], replay.images.shape[0])
                samples = list(zip(replay.images[:take], replay.labels[:take]))
            else:
                samples = [
                    (img, int(lab))
                    for lab in range(dataset.class_count)
                    for img in sample_model(
                        frozen,
                        lab,
                        cfg["fim.samples"] // dataset.class_count,
                        cfg["fim.seed"] + lab,
                        guidance_w,
                    )
                ]
        fim = fi.estimate_fim(
            frozen.params, samples, elbo_fn, source=f"frozen {cfg['model.kind']}"
        )
        save_checkpoint(model_checkpoint(cfg, frozen, meta, fim=fim), path("fim.samn"))
        say(f"FIM estimated over {fim.sample_count} samples")
    except StageError:
        raise
    except Exception as exc:
        raise StageError("fim", exc) from exc

    # -- forgetting ------------------------------------------------------------
    try:
        sa_cfg = am.SAConfig(
            lam=cfg["amnesia.lambda"],
            steps=cfg["amnesia.steps"],
            forget_batch=cfg["amnesia.forget_batch"],
            replay_batch=cfg["amnesia.replay_batch"],
            lr=cfg["amnesia.lr"],
            seed=cfg["amnesia.seed"],
            objective=cfg["amnesia.objective"],
            use_replay=cfg["amnesia.use_replay"],
            forget_classes=forget_classes,
            replay_weight=cfg["amnesia.replay_weight"],
            guidance_scale=guidance_w,
        )
        ref_params = frozen.params.copy()
        _, log = am.run_forgetting(model, sa_cfg, fim, ref_params, surrogate, replay)
        save_checkpoint(model_checkpoint(cfg, model, meta), path("forgotten.samn"))
        with open(path("forgetting_log.txt"), "w", encoding="utf-8") as f:
            for entry in log:
                f.write(
                    f"step={entry['step']} loss={entry['loss']:.6f} "
                    f"forget={entry['forget']:.6f} ewc={entry['ewc']:.6f} "
                    f"replay={entry['replay']:.6f}\n"
                )
        say(f"forgetting trained for {sa_cfg.steps} steps")
    except StageError:
        raise
    except Exception as exc:
        raise StageError("forget", exc) from exc

    # -- evaluation --------------------------------------------------------------
    try:
        report = evaluate_model(
            cfg, model, clf, dataset, forget_classes, remember_classes
        )
        with open(path("metrics.txt"), "w", encoding="utf-8") as f:
            f.write("\n".join(report.lines()) + "\n")
            f.write(
                "summary "
                f"prob={report.forgotten_class_prob:.4f} "
                f"entropy={report.entropy:.4f} "
                f"frechet={report.frechet_proxy:.4f} "
                f"precision={report.precision:.4f} recall={report.recall:.4f}\n"
            )
        grid = sample_model(model, forget_classes[0], 16, cfg["eval.seed"], guidance_w)
        if int(round(np.sqrt(dataset.dim))) ** 2 == dataset.dim:
            write_image_grid(grid, 4, 4, path("forget_samples.pgm"))
        say("evaluation complete")
    except StageError:
        raise
    except Exception as exc:
        raise StageError("evaluate", exc) from exc

    return report, paths


def evaluate_model(cfg, model, clf, dataset, forget_classes, remember_classes):
    guidance_w = cfg["model.guidance_scale"]
    n_eval = cfg["eval.samples"]
    forget_samples = sample_model(
        model, forget_classes[0], n_eval, cfg["eval.seed"], guidance_w
    )
    n_rem = cfg["eval.remember_samples"]
    per_class = max(1, n_rem // len(remember_classes))
    gen_remember = np.concatenate(
        [
            sample_model(model, c, per_class, cfg["eval.seed"] + 1 + c, guidance_w)
            for c in remember_classes
        ]
    )
    _, remember_mask = dataset.partition(forget_classes)
    real = dataset.images[remember_mask]
    rng = np.random.default_rng(cfg["eval.seed"])
    take = min(real.shape[0], gen_remember.shape[0])
    real = real[rng.permutation(real.shape[0])[:take]]
    return ev.metrics_report(
        clf,
        forget_samples,
        forget_classes[0],
        real,
        gen_remember,
        k=cfg["eval.knn_k"],
    )
