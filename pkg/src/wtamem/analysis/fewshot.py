"""Few-shot transfer evaluation with a nearest-class-mean classifier."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin
from sklearn.utils.multiclass import unique_labels
from sklearn.utils.validation import check_array, check_is_fitted, check_X_y

from ..autodiff import no_grad
from ..training import inference_mode

FEWSHOT_HEADER = ["n_way", "k_shot", "queries", "runs", "accuracy", "ci95"]


@dataclass(frozen=True)
class FewShotConfig:
    n_way: int = 5
    k_shot: int = 5
    queries_per_class: int = 595
    runs: int = 10000
    pool_size: int = 20
    seed: int = 0
    normalize: bool = False


class NearestClassMean(ClassifierMixin, BaseEstimator):
    """Assigns each sample to the class with the closest mean (Euclidean)."""

    def __init__(self, normalize=False):
        self.normalize = normalize

    def fit(self, X, y):
        X, y = check_X_y(X, y)
        if self.normalize:
            X = unit_norm(X)
        self.classes_ = unique_labels(y)
        self.means_ = np.stack([X[y == k].mean(axis=0) for k in self.classes_])
        self.n_features_in_ = X.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "means_")
        X = check_array(X)
        if self.normalize:
            X = unit_norm(X)
        return self.classes_[_sq_dist(X, self.means_).argmin(axis=1)]


def unit_norm(X: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1, keepdims=True)
    return X / np.maximum(norms, 1e-12)


def _sq_dist(X, M):
    return (X ** 2).sum(axis=1)[:, None] - 2 * X @ M.T + (M ** 2).sum(axis=1)[None, :]


def confidence_interval(accuracies) -> tuple:
    """Mean and 95% half-width ``1.96 * std / sqrt(n)`` (population std)."""
    a = np.asarray(accuracies, dtype=np.float64)
    return float(a.mean()), float(1.96 * a.std() / np.sqrt(a.size))


def ncm_fewshot(features_by_class, config: FewShotConfig = FewShotConfig()) -> tuple:
    """Mean accuracy and 95% half-width over random few-shot episodes.

    ``features_by_class`` is a mapping (or sequence) of per-class feature
    matrices; the first ``pool_size`` classes form the candidate pool.
    """
    if isinstance(features_by_class, dict):
        classes = [np.asarray(features_by_class[k], dtype=np.float64) for k in sorted(features_by_class)]
    else:
        classes = [np.asarray(f, dtype=np.float64) for f in features_by_class]
    if len(classes) < config.pool_size or config.pool_size < config.n_way:
        raise ValueError(f"need at least {max(config.pool_size, config.n_way)} classes, got {len(classes)}")
    pool = classes[:config.pool_size]
    need = config.k_shot + config.queries_per_class
    short = [i for i, f in enumerate(pool) if len(f) < need]
    if short:
        raise ValueError(f"classes {short} have fewer than {need} examples")
    if config.normalize:
        pool = [unit_norm(f) for f in pool]

    rng = np.random.default_rng(config.seed)
    accs = np.empty(config.runs)
    k, q = config.k_shot, config.queries_per_class
    for r in range(config.runs):
        chosen = rng.choice(len(pool), size=config.n_way, replace=False)
        means, queries = [], []
        for c in chosen:
            idx = rng.permutation(len(pool[c]))[:need]
            feats = pool[c][idx]
            means.append(feats[:k].mean(axis=0))
            queries.append(feats[k:])
        pred = _sq_dist(np.concatenate(queries), np.stack(means)).argmin(axis=1)
        accs[r] = np.mean(pred == np.repeat(np.arange(config.n_way), q))
    return confidence_interval(accs)


def extract_features(model, images, normalize: bool = False, mode=None,
                     batch_size: int = 500) -> np.ndarray:
    """Penultimate (pooled, pre-classifier) representation."""
    mode = mode or inference_mode(model)
    out = []
    with no_grad():
        for lo in range(0, len(images), batch_size):
            x = model.prepare(images[lo:lo + batch_size])
            out.append(model.forward(x, mode=mode, features=True).data.astype(np.float64))
    feats = np.concatenate(out) if out else np.zeros((0, model.feature_dim))
    return unit_norm(feats) if normalize else feats


def features_by_class(features: np.ndarray, labels) -> dict:
    labels = np.asarray(labels)
    return {int(k): features[labels == k] for k in np.unique(labels)}


def write_fewshot_csv(path, config: FewShotConfig, accuracy: float, ci: float):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(FEWSHOT_HEADER)
        w.writerow([config.n_way, config.k_shot, config.queries_per_class, config.runs,
                    f"{accuracy:.6f}", f"{ci:.6f}"])
