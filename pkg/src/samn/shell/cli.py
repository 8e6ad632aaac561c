"""Command-line entry point.

Subcommands: train, fim, forget, sample, eval, verify-theorem, experiment.
Each takes --config plus targeted overrides; exit code 0 on success,
nonzero with a stage-tagged diagnostic otherwise.
"""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from .. import evalsuite as ev
from .. import genmodels as gm
from .. import oracle
from . import experiment as ex
from .checkpoints import load_checkpoint, save_checkpoint
from .config import ExperimentConfig, load_config
from .imaging import write_image_grid


def _load_cfg(args):
    cfg = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {}
    if getattr(args, "lambda_", None) is not None:
        overrides["amnesia.lambda"] = args.lambda_
    if getattr(args, "seed", None) is not None:
        for key in ("train.seed", "amnesia.seed", "fim.seed", "eval.seed"):
            overrides[key] = args.seed
    if getattr(args, "steps", None) is not None:
        overrides["train.steps"] = args.steps
        overrides["amnesia.steps"] = args.steps
    if getattr(args, "outdir", None):
        overrides["output.dir"] = args.outdir
    if overrides:
        entries = dict(cfg.items())
        entries.update(overrides)
        cfg = ExperimentConfig(entries)
    return cfg


def _add_common(sub):
    sub.add_argument("--config", help="path to a key=value config file")
    sub.add_argument("--lambda", dest="lambda_", type=float, help="EWC weight override")
    sub.add_argument("--seed", type=int, help="seed override for all stages")
    sub.add_argument("--steps", type=int, help="step-count override")
    sub.add_argument("--outdir", help="output directory override")


def cmd_experiment(args):
    cfg = _load_cfg(args)
    report, paths = ex.run_experiment(cfg, progress=lambda m: print(m))
    print("\n".join(report.lines()))
    print(f"artifacts in {cfg['output.dir']}")


def cmd_train(args):
    cfg = _load_cfg(args)
    outdir = cfg["output.dir"]
    os.makedirs(outdir, exist_ok=True)
    dataset = ex.load_dataset(cfg)
    train_set, _ = dataset.split(cfg["data.holdout_fraction"], cfg["data.seed"])
    model = ex.build_model(cfg, dataset.dim, dataset.class_count)
    train_cfg = gm.TrainConfig(
        steps=cfg["train.steps"],
        batch_size=cfg["train.batch_size"],
        lr=cfg["train.lr"],
        seed=cfg["train.seed"],
        cond_drop_rate=cfg["train.cond_drop_rate"],
    )
    _, log = gm.train_generative(model, train_set, train_cfg)
    meta = ex.model_meta(cfg, dataset.dim, dataset.class_count)
    path = os.path.join(outdir, "pretrained.samn")
    save_checkpoint(ex.model_checkpoint(cfg, model, meta), path)
    if log:
        print(f"final loss {log[-1][1]:.6f}")
    print(f"saved {path}")


def cmd_sample(args):
    cfg = _load_cfg(args)
    ckpt = load_checkpoint(args.checkpoint)
    model = ex.model_from_checkpoint(ckpt)
    samples = ex.sample_model(
        model, args.klass, args.count, cfg["eval.seed"], cfg["model.guidance_scale"]
    )
    side = int(np.ceil(np.sqrt(args.count)))
    write_image_grid(samples, args.count // side, side, args.out)
    print(f"wrote {args.out}")


def cmd_verify_theorem(args):
    rng = np.random.default_rng(args.seed if args.seed is not None else 0)
    failures = 0
    for i in range(args.worlds):
        world = oracle.random_world(rng)
        report = oracle.verify_theorem1(world, n_mc=args.mc, seed=i)
        if not report.passed:
            failures += 1
            print(f"world {i}: FAIL")
            print("  " + "\n  ".join(report.lines()))
    print(f"{args.worlds - failures}/{args.worlds} worlds passed")
    if failures:
        raise SystemExit(1)


def cmd_eval(args):
    cfg = _load_cfg(args)
    dataset = ex.load_dataset(cfg)
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
        ),
    )
    model = ex.model_from_checkpoint(load_checkpoint(args.checkpoint))
    forget_classes = cfg["amnesia.forget_classes"]
    remember = sorted(set(range(dataset.class_count)) - set(forget_classes))
    report = ex.evaluate_model(cfg, model, clf, dataset, forget_classes, remember)
    print("\n".join(report.lines()))


def _stage_main(stage_name):
    # `fim` and `forget` rerun the pipeline up to their stage; kept as
    # aliases of `experiment` with later stages cheap/no-op where possible.
    def run(args):
        cfg = _load_cfg(args)
        report, _ = ex.run_experiment(cfg, progress=lambda m: print(m))
        print("\n".join(report.lines()))

    return run


def main(argv=None):
    parser = argparse.ArgumentParser(prog="samn")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("experiment", help="run the full pipeline")
    _add_common(p)
    p.set_defaults(fn=cmd_experiment)

    p = subs.add_parser("train", help="pretrain the generative model")
    _add_common(p)
    p.set_defaults(fn=cmd_train)

    for name in ("fim", "forget"):
        p = subs.add_parser(name, help=f"run the pipeline through the {name} stage")
        _add_common(p)
        p.set_defaults(fn=_stage_main(name))

    p = subs.add_parser("sample", help="sample a checkpoint into a PGM grid")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--class", dest="klass", type=int, required=True)
    p.add_argument("--count", type=int, default=16)
    p.add_argument("--out", default="samples.pgm")
    p.set_defaults(fn=cmd_sample)

    p = subs.add_parser("eval", help="evaluate a checkpoint")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.set_defaults(fn=cmd_eval)

    p = subs.add_parser("verify-theorem", help="run the Gaussian-world oracle")
    p.add_argument("--worlds", type=int, default=100)
    p.add_argument("--mc", type=int, default=100000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(fn=cmd_verify_theorem)

    args = parser.parse_args(argv)
    try:
        args.fn(args)
    except ex.StageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
