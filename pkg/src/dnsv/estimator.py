"""scikit-learn style front door to the embedding network."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.preprocessing import LabelEncoder
from sklearn.utils.validation import check_array, check_is_fitted

from .embedding import default_tap_point, extract
from .exceptions import ConfigError
from .features import FeatureMatrix
from .nn.layers import cross_entropy
from .nn.train import TrainConfig, train


def check_sequences(X, n_features=None):
    """Validate a list of variable-length (T_i, D) matrices.

    Accepts :class:`FeatureMatrix` items or array-likes; a 3-D array is
    treated as a batch of equal-length sequences.
    """
    if isinstance(X, np.ndarray) and X.ndim == 3:
        X = list(X)
    out = []
    for item in X:
        frames = item.frames if isinstance(item, FeatureMatrix) else item
        out.append(check_array(frames, dtype=np.float64, ensure_min_samples=1))
    if not out:
        raise ValueError("expected at least one sequence")
    dims = {s.shape[1] for s in out}
    if len(dims) != 1:
        raise ValueError(f"sequences have inconsistent feature dims {sorted(dims)}")
    if n_features is not None and dims != {n_features}:
        raise ValueError(f"expected {n_features} features per frame, got {dims.pop()}")
    return out


class SpeakerEmbeddingNet(ClassifierMixin, TransformerMixin, BaseEstimator):
    """Speaker classifier whose hidden representation is the embedding.

    ``fit`` trains on a list of frame matrices with speaker labels;
    ``transform`` returns one embedding per utterance at ``tap_point``
    (``None`` picks post-normalization when the model has that layer);
    ``predict``/``predict_proba`` use the training-speaker output layer.
    """

    def __init__(self, encoder="tdnn", hidden=(64, 64), channels=(4, 8, 16, 32),
                 blocks=(1, 1, 1, 1), embedding_dim=32, normalize=True, alpha=None,
                 alpha_trainable=False, batch_size=64, lr_schedule=(0.1, 0.01, 0.001),
                 momentum=0.9, weight_decay=1e-4, epochs=30, L_min=100, L_max=200,
                 plateau_rel_tol=0.01, plateau_patience=3, tap_point=None, dtype="float64",
                 random_state=0):
        self.encoder = encoder
        self.hidden = hidden
        self.channels = channels
        self.blocks = blocks
        self.embedding_dim = embedding_dim
        self.normalize = normalize
        self.alpha = alpha
        self.alpha_trainable = alpha_trainable
        self.batch_size = batch_size
        self.lr_schedule = lr_schedule
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.L_min = L_min
        self.L_max = L_max
        self.plateau_rel_tol = plateau_rel_tol
        self.plateau_patience = plateau_patience
        self.tap_point = tap_point
        self.dtype = dtype
        self.random_state = random_state

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            batch_size=self.batch_size, momentum=self.momentum, weight_decay=self.weight_decay,
            lr_schedule=tuple(self.lr_schedule), plateau_rel_tol=self.plateau_rel_tol,
            plateau_patience=self.plateau_patience, L_min=self.L_min, L_max=self.L_max,
            epochs=self.epochs, rng_seed=int(self.random_state or 0), encoder=self.encoder,
            hidden=tuple(self.hidden), channels=tuple(self.channels), blocks=tuple(self.blocks),
            embedding_dim=self.embedding_dim, normalize=self.normalize, alpha=self.alpha,
            alpha_trainable=self.alpha_trainable, dtype=self.dtype)

    def fit(self, X, y):
        seqs = check_sequences(X)
        if len(seqs) != len(y):
            raise ValueError("X and y have different lengths")
        self.label_encoder_ = LabelEncoder().fit(y)
        self.classes_ = self.label_encoder_.classes_
        self.n_features_in_ = seqs[0].shape[1]
        self.model_, self.stats_ = train(self.train_config(), seqs,
                                         self.label_encoder_.transform(y), len(self.classes_))
        return self

    @classmethod
    def from_model(cls, model, **params):
        """Wrap an already trained :class:`~dnsv.nn.Model` (e.g. a loaded checkpoint)."""
        est = cls(**params)
        est.model_ = model
        est.classes_ = np.arange(model.num_classes)
        est.label_encoder_ = LabelEncoder().fit(est.classes_)
        est.n_features_in_ = model.arch.feat_dim if model.arch is not None else None
        est.stats_ = None
        return est

    def _tap(self):
        return self.tap_point or default_tap_point(self.model_)

    def transform(self, X):
        check_is_fitted(self, "model_")
        seqs = check_sequences(X, self.n_features_in_)
        return np.stack([extract(self.model_, s, self._tap()) for s in seqs])

    def decision_function(self, X):
        check_is_fitted(self, "model_")
        seqs = check_sequences(X, self.n_features_in_)
        dtype = np.dtype(self.dtype)
        return np.vstack([self.model_.forward(s[None].astype(dtype), "eval")[0] for s in seqs])

    def predict_proba(self, X):
        logits = self.decision_function(X)
        z = logits - logits.max(axis=1, keepdims=True)
        p = np.exp(z)
        return p / p.sum(axis=1, keepdims=True)

    def predict(self, X):
        return self.classes_[np.argmax(self.decision_function(X), axis=1)]

    def loss(self, X, y) -> float:
        """Mean cross-entropy of full-length utterances under the trained model."""
        if not hasattr(self, "label_encoder_"):
            raise ConfigError("estimator is not fitted")
        logits = self.decision_function(X)
        return cross_entropy(logits, self.label_encoder_.transform(y))[0]
