"""scikit-learn compatible wrappers: a classifier over ``[n, C, T]`` trials and a z-score transformer."""
from __future__ import annotations

from typing import Optional

import numpy as np
from scipy.special import softmax
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.model_selection import train_test_split
from sklearn.utils.validation import check_array, check_is_fitted

from .config import ModelConfig, TrainConfig
from .data import zscore
from .exceptions import DataError
from .model import DSAINet
from .training import fit as fit_model
from .training import predict_logits


def check_trials(X, dtype=np.float64) -> np.ndarray:
    """Validate a trial stack: 3-d, finite, non-empty. A single ``[C, T]`` trial is promoted."""
    X = check_array(X, allow_nd=True, ensure_2d=False, dtype=dtype, ensure_all_finite=True)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3:
        raise DataError(f"expected trials [n, C, T], got shape {X.shape}")
    return X


def check_labels(y, n: int) -> np.ndarray:
    y = np.asarray(y)
    if y.ndim != 1 or y.shape[0] != n:
        raise DataError(f"expected {n} labels, got shape {y.shape}")
    return y


class ZScoreTransformer(TransformerMixin, BaseEstimator):
    """Channel-wise z-scoring along time, trial by trial. Stateless."""

    def fit(self, X, y=None):
        check_trials(X)
        return self

    def transform(self, X):
        return zscore(check_trials(X))


class DSAINetClassifier(ClassifierMixin, BaseEstimator):
    """Train the network on ``[n, C, T]`` trials with arbitrary hashable labels.

    Without explicit validation data, ``val_fraction`` of the training trials
    (label-stratified) is held out for best-epoch selection.
    """

    def __init__(self, embed_dim: int = 40, f1: int = 16, n_heads: int = 4, dropout: float = 0.25,
                 aggregation: str = "adaptive", use_fine: bool = True, use_coarse: bool = True,
                 use_intra: bool = True, use_inter: bool = True, use_pe: bool = True,
                 batch_size: int = 32, learning_rate: float = 1e-3, max_epochs: int = 100,
                 weight_decay: float = 1e-4, val_fraction: float = 0.2, normalize: bool = True,
                 dtype: str = "float64", random_state: int = 0):
        self.embed_dim = embed_dim
        self.f1 = f1
        self.n_heads = n_heads
        self.dropout = dropout
        self.aggregation = aggregation
        self.use_fine = use_fine
        self.use_coarse = use_coarse
        self.use_intra = use_intra
        self.use_inter = use_inter
        self.use_pe = use_pe
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.max_epochs = max_epochs
        self.weight_decay = weight_decay
        self.val_fraction = val_fraction
        self.normalize = normalize
        self.dtype = dtype
        self.random_state = random_state

    def _prep(self, X) -> np.ndarray:
        X = check_trials(X)
        if self.normalize:
            X = zscore(X)
        return X.astype(self.dtype, copy=False)

    def fit(self, X, y, X_val=None, y_val=None):
        X = self._prep(X)
        y = check_labels(y, X.shape[0])
        self.classes_, codes = np.unique(y, return_inverse=True)
        if self.classes_.size < 2:
            raise DataError("need at least two classes to fit")
        if X_val is None:
            X, Xv, codes, yv = train_test_split(X, codes, test_size=self.val_fraction, stratify=codes,
                                                random_state=self.random_state)
        else:
            Xv = self._prep(X_val)
            yv = np.searchsorted(self.classes_, check_labels(y_val, Xv.shape[0]))
        self.config_ = ModelConfig(
            n_channels=X.shape[1], n_samples=X.shape[2], n_classes=self.classes_.size,
            f1=self.f1, embed_dim=self.embed_dim, n_heads=self.n_heads, dropout=self.dropout,
            aggregation=self.aggregation, use_fine=self.use_fine, use_coarse=self.use_coarse,
            use_intra=self.use_intra, use_inter=self.use_inter, use_pe=self.use_pe)
        train_cfg = TrainConfig(batch_size=self.batch_size, learning_rate=self.learning_rate,
                                max_epochs=self.max_epochs, weight_decay=self.weight_decay,
                                seeds=(self.random_state,), dtype=self.dtype)
        self.model_ = DSAINet(self.config_, seed=self.random_state, dtype=np.dtype(self.dtype))
        self.history_ = fit_model(self.model_, X, codes, Xv, yv, train_cfg, self.random_state)
        self.n_channels_, self.n_samples_ = X.shape[1], X.shape[2]
        return self

    def decision_function(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        X = self._prep(X)
        if X.shape[1:] != (self.n_channels_, self.n_samples_):
            raise DataError(f"fitted on trials {(self.n_channels_, self.n_samples_)}, got {X.shape[1:]}")
        return predict_logits(self.model_, X)

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.decision_function(X), axis=1)

    def predict(self, X) -> np.ndarray:
        check_is_fitted(self, "model_")
        return self.classes_[self.decision_function(X).argmax(axis=1)]
