"""Flat key=value experiment configuration with dotted section prefixes.

One declarative document drives the whole pipeline; the schema is closed
(unknown keys are rejected) and every value is type-checked before any
compute starts.
"""

from __future__ import annotations

import numpy as np


class ConfigError(ValueError):
    pass


def _int_list(text):
    if isinstance(text, (tuple, list)):
        return tuple(int(x) for x in text)
    return tuple(int(part) for part in str(text).split(",") if part.strip() != "")


def _bool(text):
    if isinstance(text, bool):
        return text
    low = str(text).strip().lower()
    if low in ("true", "1", "yes"):
        return True
    if low in ("false", "0", "no"):
        return False
    raise ConfigError(f"not a boolean: {text!r}")


# key -> (converter, default). Defaults target the desk-scale digits VAE.
SCHEMA = {
    "data.kind": (str, "digits"),  # digits | idx | shapes-8x8 | gaussian-mixture-2d
    "data.images_path": (str, ""),
    "data.labels_path": (str, ""),
    "data.class_count": (int, 3),
    "data.n_per_class": (int, 2000),
    "data.seed": (int, 0),
    "data.holdout_fraction": (float, 0.2),
    "model.kind": (str, "vae"),  # vae | ddpm
    "model.latent_dim": (int, 8),
    "model.hidden": (_int_list, (256, 512)),
    "model.seed": (int, 0),
    "model.timesteps": (int, 200),
    "model.beta_start": (float, 5e-4),
    "model.beta_end": (float, 0.1),
    "model.time_dim": (int, 16),
    "model.emb_dim": (int, 8),
    "model.guidance_scale": (float, 2.0),
    "train.steps": (int, 20000),
    "train.batch_size": (int, 256),
    "train.lr": (float, 1e-4),
    "train.seed": (int, 0),
    "train.cond_drop_rate": (float, 0.1),
    "fim.samples": (int, 50000),
    "fim.timesteps_per_sample": (int, 10),
    "fim.seed": (int, 0),
    "fim.use_replay_samples": (_bool, False),
    "surrogate.kind": (str, "uniform"),  # uniform | remap | explicit
    "surrogate.size": (int, 5000),
    "surrogate.seed": (int, 0),
    "surrogate.target": (int, -1),
    "surrogate.path": (str, ""),
    "replay.size": (int, 5000),
    "replay.seed": (int, 0),
    "amnesia.lambda": (float, 100.0),
    "amnesia.steps": (int, 10000),
    "amnesia.forget_batch": (int, 256),
    "amnesia.replay_batch": (int, 256),
    "amnesia.lr": (float, 1e-4),
    "amnesia.seed": (int, 0),
    "amnesia.objective": (str, "surrogate"),  # surrogate | naive
    "amnesia.use_replay": (_bool, True),
    "amnesia.forget_classes": (_int_list, (0,)),
    "amnesia.replay_weight": (float, 1.0),
    "classifier.hidden": (_int_list, (256,)),
    "classifier.epochs": (int, 20),
    "classifier.batch_size": (int, 64),
    "classifier.lr": (float, 1e-3),
    "classifier.seed": (int, 0),
    "classifier.augment_noise": (float, 0.0),
    "classifier.label_smoothing": (float, 0.0),
    "eval.samples": (int, 500),
    "eval.seed": (int, 0),
    "eval.knn_k": (int, 3),
    "eval.remember_samples": (int, 600),
    "output.dir": (str, "out"),
}


class ExperimentConfig:
    """Validated flat configuration; access values with cfg['section.key']."""

    def __init__(self, entries=None):
        entries = dict(entries or {})
        unknown = sorted(set(entries) - set(SCHEMA))
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
        self._values = {}
        for key, (convert, default) in SCHEMA.items():
            if key in entries:
                try:
                    self._values[key] = convert(entries[key])
                except ConfigError:
                    raise
                except (TypeError, ValueError) as exc:
                    raise ConfigError(f"bad value for {key}: {exc}") from exc
            else:
                self._values[key] = default
        self._validate()

    def _validate(self):
        v = self._values
        if v["model.kind"] not in ("vae", "ddpm"):
            raise ConfigError(f"model.kind must be vae or ddpm, got {v['model.kind']!r}")
        if v["amnesia.objective"] not in ("surrogate", "naive"):
            raise ConfigError("amnesia.objective must be surrogate or naive")
        if v["amnesia.lambda"] < 0:
            raise ConfigError("amnesia.lambda must be >= 0")
        if v["surrogate.kind"] not in ("uniform", "remap", "explicit"):
            raise ConfigError("surrogate.kind must be uniform, remap or explicit")
        if set(v["amnesia.forget_classes"]) & (
            {v["surrogate.target"]} if v["surrogate.kind"] == "remap" else set()
        ):
            raise ConfigError("remap target must not be a forget class")

    def __getitem__(self, key):
        return self._values[key]

    def updated(self, **overrides):
        """A copy with dotted keys overridden (underscores map to dots)."""
        entries = {k: v for k, v in self._values.items()}
        for key, value in overrides.items():
            entries[key.replace("__", ".")] = value
        return ExperimentConfig(entries)

    def items(self):
        return self._values.items()

    def dumps(self):
        lines = []
        for key in sorted(self._values):
            value = self._values[key]
            if isinstance(value, tuple):
                value = ",".join(str(x) for x in value)
            elif isinstance(value, bool):
                value = str(value).lower()
            lines.append(f"{key}={value}")
        return "\n".join(lines) + "\n"


def parse_config(text):
    """Parse `key=value` lines; '#' starts a comment, blank lines ignored."""
    entries = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if key in entries:
            raise ConfigError(f"line {lineno}: duplicate key {key}")
        entries[key] = value.strip()
    return ExperimentConfig(entries)


def load_config(path):
    with open(path, "r", encoding="utf-8") as f:
        return parse_config(f.read())
