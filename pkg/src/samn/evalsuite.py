"""External-classifier evaluation: forgotten-class probability, output
entropy, and distribution-quality proxies (Frechet distance and k-NN
precision/recall) computed in the classifier's penultimate feature space.

The Frechet proxy is NOT comparable to Inception-based FID numbers; only
within-experiment orderings are meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import diffcore as dc
from . import genmodels as gm


@dataclass
class EvalClassifier:
    net: dc.NetworkSpec
    params: dc.ParamStore
    class_count: int
    held_out_accuracy: float = float("nan")

    @property
    def reliable(self):
        return self.held_out_accuracy >= 0.95


@dataclass
class ClassifierConfig:
    hidden: tuple = (256,)
    epochs: int = 20
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    holdout_fraction: float = 0.2
    # calibration knobs: sigma of Gaussian pixel jitter per training batch
    # and label-smoothing mass spread over the other classes. A plain MLP is
    # wildly overconfident away from the data manifold, which ruins entropy
    # readouts on forgotten-class samples; both fixes temper off-manifold
    # confidence without costing held-out accuracy
    augment_noise: float = 0.0
    label_smoothing: float = 0.0


@dataclass
class MetricsReport:
    forgotten_class_prob: float
    forgotten_class_prob_stderr: float
    entropy: float
    entropy_stderr: float
    entropy_max: float
    frechet_proxy: float
    precision: float
    recall: float
    sample_count: int
    classifier_reliable: bool = True

    def lines(self):
        return [
            f"forgotten_class_prob={self.forgotten_class_prob:.6f}",
            f"forgotten_class_prob_stderr={self.forgotten_class_prob_stderr:.6f}",
            f"entropy={self.entropy:.6f}",
            f"entropy_stderr={self.entropy_stderr:.6f}",
            f"entropy_max={self.entropy_max:.6f}",
            f"frechet_proxy={self.frechet_proxy:.6f}",
            f"precision={self.precision:.6f}",
            f"recall={self.recall:.6f}",
            f"sample_count={self.sample_count}",
            f"classifier_reliable={str(self.classifier_reliable).lower()}",
        ]


def _log_softmax(logits):
    m = np.max(dc.value_of(logits), axis=-1, keepdims=True)
    shifted = logits - m
    lse = dc.log(dc.vsum(dc.exp(shifted), axis=-1))
    if isinstance(shifted, dc.Var):
        return shifted - lse.reshape(-1, 1)
    return shifted - lse[..., None]


def train_classifier(images, labels, class_count, config=None):
    """Softmax MLP trained on held-in real data; reports held-out accuracy
    (>= 0.95 required for the classifier to count as a reliable evaluator)."""
    config = config or ClassifierConfig()
    images = np.asarray(images, dtype=np.float64)
    labels = np.asarray(labels, dtype=int)
    rng = np.random.default_rng(config.seed)
    n = images.shape[0]
    perm = rng.permutation(n)
    n_hold = max(1, int(round(n * config.holdout_fraction)))
    hold, train = perm[:n_hold], perm[n_hold:]

    net = dc.NetworkSpec(
        in_dim=images.shape[1],
        widths=tuple(config.hidden) + (class_count,),
        activations=("relu",) * len(config.hidden) + ("identity",),
    )
    params = dc.init_params(net, rng)
    state = dc.AdamState.for_params(params)
    x_tr, y_tr = images[train], labels[train]
    onehot = gm.one_hot(y_tr, class_count)
    if config.label_smoothing > 0:
        a = config.label_smoothing
        onehot = onehot * (1.0 - a) + a / class_count
    for _ in range(config.epochs):
        order = rng.permutation(x_tr.shape[0])
        for start in range(0, x_tr.shape[0], config.batch_size):
            idx = order[start : start + config.batch_size]
            xb, yb = x_tr[idx], onehot[idx]
            if config.augment_noise > 0:
                xb = xb + config.augment_noise * rng.standard_normal(xb.shape)

            def loss_fn(pv):
                logits = dc.forward(net, pv, xb)
                return -dc.vmean(dc.vsum(yb * _log_softmax(logits), axis=-1))

            _, grads = dc.value_and_grad(loss_fn, params)
            dc.adam_step(params, grads, state, config.lr)

    clf = EvalClassifier(net, params, class_count)
    preds = np.argmax(dc.forward(net, params, images[hold]), axis=-1)
    clf.held_out_accuracy = float(np.mean(preds == labels[hold]))
    return clf


def predict_proba(clf, samples):
    logits = dc.forward(clf.net, clf.params, np.atleast_2d(samples))
    logp = _log_softmax(logits)
    return np.exp(logp)


def predict(clf, samples):
    return np.argmax(predict_proba(clf, samples), axis=-1)


def features(clf, samples):
    """Penultimate-layer activations."""
    _, hidden = dc.forward(
        clf.net, clf.params, np.atleast_2d(samples), return_hidden=True
    )
    return hidden[-1]


def accuracy(clf, samples, labels):
    return float(np.mean(predict(clf, samples) == np.asarray(labels, dtype=int)))


def forgotten_class_prob(clf, samples, forget_class):
    """Mean softmax probability of the forgotten class over the samples."""
    samples = np.atleast_2d(samples)
    if samples.shape[0] == 0:
        raise ValueError("empty sample set")
    probs = predict_proba(clf, samples)[:, int(forget_class)]
    return float(np.mean(probs)), float(np.std(probs) / np.sqrt(probs.size))


def classifier_entropy(clf_or_probs, samples=None):
    """Mean output entropy -sum p ln p (natural log). Accepts either a
    classifier + samples, or an (n, k) probability matrix directly."""
    if samples is not None:
        probs = predict_proba(clf_or_probs, np.atleast_2d(samples))
    else:
        probs = np.atleast_2d(np.asarray(clf_or_probs, dtype=np.float64))
    if probs.shape[0] == 0:
        raise ValueError("empty sample set")
    with np.errstate(divide="ignore", invalid="ignore"):
        plogp = np.where(probs > 0, probs * np.log(probs), 0.0)
    ents = -np.sum(plogp, axis=-1)
    return float(np.mean(ents)), float(np.std(ents) / np.sqrt(ents.size))


def frechet_distance(feats_a, feats_b, reg=1e-6):
    """||mu_a - mu_b||^2 + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}).

    Covariances get +reg*I; the cross square root uses the symmetric
    eigendecomposition of sqrt(S_a) S_b sqrt(S_a), which shares its trace
    with sqrt(S_a S_b).
    """
    feats_a = np.asarray(feats_a, dtype=np.float64)
    feats_b = np.asarray(feats_b, dtype=np.float64)
    dc.require_finite(feats_a, "features a")
    dc.require_finite(feats_b, "features b")
    d = feats_a.shape[1]
    if feats_a.shape[0] < d + 1 or feats_b.shape[0] < d + 1:
        raise ValueError(f"need at least {d + 1} rows per feature set")
    mu_a, mu_b = feats_a.mean(axis=0), feats_b.mean(axis=0)
    cov_a = np.cov(feats_a, rowvar=False) + reg * np.eye(d)
    cov_b = np.cov(feats_b, rowvar=False) + reg * np.eye(d)
    sqrt_a = _sym_sqrt(cov_a)
    cross = _sym_sqrt(sqrt_a @ cov_b @ sqrt_a)
    value = float(
        np.sum((mu_a - mu_b) ** 2) + np.trace(cov_a + cov_b - 2.0 * cross)
    )
    return max(value, 0.0)


def _sym_sqrt(mat):
    mat = 0.5 * (mat + mat.T)
    w, v = np.linalg.eigh(mat)
    w = np.clip(w, 0.0, None)
    return (v * np.sqrt(w)) @ v.T


def precision_recall(feats_real, feats_gen, k=3):
    """Manifold k-NN precision/recall: a generated point counts toward
    precision if it falls inside any real point's k-th-neighbor ball;
    recall swaps the roles."""
    feats_real = np.asarray(feats_real, dtype=np.float64)
    feats_gen = np.asarray(feats_gen, dtype=np.float64)
    if feats_real.shape[0] <= k or feats_gen.shape[0] <= k:
        raise ValueError(f"both sets need more than k={k} points")
    return (
        _manifold_coverage(feats_real, feats_gen, k),
        _manifold_coverage(feats_gen, feats_real, k),
    )


def _knn_radii(points, k):
    d2 = np.sum((points[:, None, :] - points[None, :, :]) ** 2, axis=-1)
    np.fill_diagonal(d2, np.inf)
    return np.sqrt(np.partition(d2, k - 1, axis=1)[:, k - 1])


def _manifold_coverage(manifold_pts, query_pts, k):
    radii = _knn_radii(manifold_pts, k)
    d2 = np.sum((query_pts[:, None, :] - manifold_pts[None, :, :]) ** 2, axis=-1)
    inside = np.any(np.sqrt(d2) <= radii[None, :], axis=1)
    return float(np.mean(inside))


def metrics_report(clf, forget_samples, forget_class, real_remember, gen_remember, k=3):
    """Assemble the full report: forgetting metrics on c_f samples plus
    feature-space quality proxies on remember-class samples."""
    prob, prob_se = forgotten_class_prob(clf, forget_samples, forget_class)
    ent, ent_se = classifier_entropy(clf, forget_samples)
    feats_real = features(clf, real_remember)
    feats_gen = features(clf, gen_remember)
    prec, rec = precision_recall(feats_real, feats_gen, k=k)
    return MetricsReport(
        forgotten_class_prob=prob,
        forgotten_class_prob_stderr=prob_se,
        entropy=ent,
        entropy_stderr=ent_se,
        entropy_max=float(np.log(clf.class_count)),
        frechet_proxy=frechet_distance(feats_real, feats_gen),
        precision=prec,
        recall=rec,
        sample_count=int(np.atleast_2d(forget_samples).shape[0]),
        classifier_reliable=clf.reliable,
    )
