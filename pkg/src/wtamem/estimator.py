"""scikit-learn compatible classifier around the grouped-activation CNNs."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_array, check_is_fitted

from .activation import fixed_c, fixed_l
from .analysis.fewshot import extract_features
from .data import LabeledDataset
from .model import ModelConfig, build
from .training import TrainConfig, inference_mode, train


def check_images(X) -> np.ndarray:
    """Validate an N x C x H x W image batch and return it as uint8."""
    X = check_array(X, allow_nd=True, dtype=None, ensure_all_finite=True)
    if X.ndim != 4:
        raise ValueError(f"expected N x C x H x W images, got shape {X.shape}")
    if X.dtype != np.uint8:
        if X.min() < 0 or X.max() > 255:
            raise ValueError("pixel values must lie in [0, 255]")
        X = np.rint(X).astype(np.uint8)
    return X


class WTANetClassifier(ClassifierMixin, TransformerMixin, BaseEstimator):
    """CNN classifier whose activations are annealed into grouped winner-takes-all.

    ``mode="anneal"`` trains with the softmax-gated activation and predicts
    with the hard winner-takes-all; ``mode="baseline"`` is a plain ReLU
    network.  ``transform`` returns the pooled penultimate features.
    """

    def __init__(self, architecture="toy", widths=(16, 32, 64), blocks=0, stem_stride=2,
                 base_width=64, ell=2, c=None, mode="anneal", t_init=1.0, t_final=1000.0,
                 binary=False, replace_policy="all", epochs=20, batch_size=128, lr=0.05,
                 lr_drop_epochs=(), momentum=0.9, weight_decay=5e-4, augment=True,
                 predict_mode=None, random_state=0):
        self.architecture = architecture
        self.widths = widths
        self.blocks = blocks
        self.stem_stride = stem_stride
        self.base_width = base_width
        self.ell = ell
        self.c = c
        self.mode = mode
        self.t_init = t_init
        self.t_final = t_final
        self.binary = binary
        self.replace_policy = replace_policy
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.lr_drop_epochs = lr_drop_epochs
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.augment = augment
        self.predict_mode = predict_mode
        self.random_state = random_state

    def model_config(self, input_shape, n_classes) -> ModelConfig:
        group = fixed_c(self.c) if self.c is not None else fixed_l(self.ell)
        return ModelConfig(architecture=self.architecture, widths=tuple(self.widths),
                           blocks=self.blocks, stem_stride=self.stem_stride,
                           base_width=self.base_width, input_shape=tuple(input_shape),
                           n_classes=n_classes, group=group, mode=self.mode, binary=self.binary,
                           t_init=self.t_init, t_final=self.t_final,
                           replace_policy=self.replace_policy)

    def train_config(self) -> TrainConfig:
        return TrainConfig(epochs=self.epochs, batch_size=self.batch_size, lr=self.lr,
                           lr_drop_epochs=tuple(self.lr_drop_epochs), momentum=self.momentum,
                           weight_decay=self.weight_decay, seed=self.random_state,
                           augment=self.augment, t_init=self.t_init, t_final=self.t_final)

    def fit(self, X, y, X_val=None, y_val=None):
        X = check_images(X)
        y = np.asarray(y)
        if len(y) != len(X):
            raise ValueError("X and y have inconsistent lengths")
        self._encoder = LabelEncoder().fit(y)
        self.classes_ = self._encoder.classes_
        labels = self._encoder.transform(y)
        config = self.model_config(X.shape[1:], len(self.classes_))
        self.model_ = build(config, seed=self.random_state)
        val = None
        if X_val is not None:
            val = LabeledDataset(check_images(X_val), self._encoder.transform(y_val), len(self.classes_))
        self.report_ = train(self.model_, LabeledDataset(X, labels, len(self.classes_)),
                             self.train_config(), val_set=val)
        self.n_features_in_ = int(np.prod(X.shape[1:]))
        return self

    def _mode(self):
        return self.predict_mode or inference_mode(self.model_)

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        return self.model_.logits(check_images(X), mode=self._mode()).astype(np.float64)

    def predict_proba(self, X):
        z = self.decision_function(X)
        z = np.exp(z - z.max(axis=1, keepdims=True))
        return z / z.sum(axis=1, keepdims=True)

    def predict(self, X):
        check_is_fitted(self, "model_")
        return self.classes_[self.decision_function(X).argmax(axis=1)]

    def transform(self, X):
        check_is_fitted(self, "model_")
        return extract_features(self.model_, check_images(X), mode=self._mode())
