"""scikit-learn style wrappers around the training pipeline and the latent-cloud classifier."""

from __future__ import annotations

from dataclasses import fields
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, ClassifierMixin, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import analysis, formats, model, pipeline
from .exceptions import InputError
from .records import N_CHANNELS, ModeLabel, PressureRecord

_CFG_DEFAULTS = pipeline.TrainConfig()


def _as_records(X) -> list[PressureRecord]:
    if isinstance(X, PressureRecord):
        return [X]
    if isinstance(X, (list, tuple)) and X and all(isinstance(r, PressureRecord) for r in X):
        return list(X)
    raise InputError("expected a PressureRecord or a non-empty sequence of them")


class BiLSTMVAE(TransformerMixin, BaseEstimator):
    """Bidirectional LSTM variational autoencoder with a 2-D latent space.

    ``fit`` takes pressure records (windowed, split and normalised internally).
    ``transform`` maps a record, or raw windows of shape ``(n, window_len, 16)``,
    to the deterministic latent means ``(n, 2)``.
    """

    def __init__(self, window_len=_CFG_DEFAULTS.window_len, stride=_CFG_DEFAULTS.stride,
                 val_fraction=_CFG_DEFAULTS.val_fraction, batch_size=_CFG_DEFAULTS.batch_size,
                 learning_rate=_CFG_DEFAULTS.learning_rate, beta=_CFG_DEFAULTS.beta,
                 adam_beta1=_CFG_DEFAULTS.adam_beta1, adam_beta2=_CFG_DEFAULTS.adam_beta2,
                 adam_eps=_CFG_DEFAULTS.adam_eps, max_epochs=_CFG_DEFAULTS.max_epochs,
                 patience=_CFG_DEFAULTS.patience, seed=_CFG_DEFAULTS.seed, hidden1=_CFG_DEFAULTS.hidden1,
                 hidden2=_CFG_DEFAULTS.hidden2, min_delta=_CFG_DEFAULTS.min_delta):
        self.window_len = window_len
        self.stride = stride
        self.val_fraction = val_fraction
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.beta = beta
        self.adam_beta1 = adam_beta1
        self.adam_beta2 = adam_beta2
        self.adam_eps = adam_eps
        self.max_epochs = max_epochs
        self.patience = patience
        self.seed = seed
        self.hidden1 = hidden1
        self.hidden2 = hidden2
        self.min_delta = min_delta

    def train_config(self) -> pipeline.TrainConfig:
        return pipeline.TrainConfig(**{f.name: getattr(self, f.name) for f in fields(pipeline.TrainConfig)})

    def fit(self, X, y=None):
        result = pipeline.train(self.train_config(), _as_records(X))
        self._set_checkpoint(result.checkpoint)
        self.history_ = result.history
        self.best_epoch_ = result.best_epoch
        self.stopped_early_ = result.stopped_early
        return self

    def _set_checkpoint(self, ckpt: formats.Checkpoint):
        self.checkpoint_ = ckpt
        self.normalizer_ = ckpt.normalizer
        self.n_features_in_ = ckpt.n_channels

    @classmethod
    def from_checkpoint(cls, ckpt: formats.Checkpoint | str) -> "BiLSTMVAE":
        if not isinstance(ckpt, formats.Checkpoint):
            ckpt = formats.load_checkpoint(ckpt)
        est = cls(window_len=ckpt.window_len, stride=ckpt.stride, beta=ckpt.beta, seed=ckpt.seed,
                  hidden1=ckpt.hidden1, hidden2=ckpt.hidden2)
        est._set_checkpoint(ckpt)
        est.history_ = list(ckpt.history)
        est.best_epoch_ = ckpt.best_epoch
        return est

    def _windows(self, X) -> np.ndarray:
        if isinstance(X, PressureRecord):
            x = self.normalizer_.apply(X.samples)
            return pipeline.make_windows(x, self.window_len, self.stride)
        w = np.asarray(X, dtype=np.float64)
        if w.ndim != 3 or w.shape[1:] != (self.window_len, N_CHANNELS):
            raise InputError(f"expected windows of shape (n, {self.window_len}, {N_CHANNELS}), got {w.shape}")
        return self.normalizer_.apply(w)

    def transform(self, X) -> np.ndarray:
        check_is_fitted(self, "checkpoint_")
        mu, _ = model.encode_batch(self._windows(X), self.checkpoint_.params, self.window_len)
        return mu

    def reconstruct(self, X) -> np.ndarray:
        """Decode the latent means back to normalised windows."""
        check_is_fitted(self, "checkpoint_")
        mu = self.transform(X)
        return model.decode_batch(mu, self.window_len, self.checkpoint_.params)

    def encode_clouds(self, records) -> list[analysis.LatentCloud]:
        check_is_fitted(self, "checkpoint_")
        return [analysis.encode_cloud(self.checkpoint_, r) for r in _as_records(records)]

    def save(self, path) -> None:
        check_is_fitted(self, "checkpoint_")
        formats.save_checkpoint(self.checkpoint_, path)


class LatentModeClassifier(ClassifierMixin, BaseEstimator):
    """Label each latent cloud as Mode I, II or III from its shape.

    ``X`` is a sequence of clouds, each an ``(n, 2)`` array or a
    :class:`LatentCloud`. Labels are the integers 1, 2, 3. The rule has no
    learned parameters, so ``fit`` only validates the inputs.
    """

    def __init__(self, tau_bimodal: float = analysis.TAU_BIMODAL, tau_ratio: float = analysis.TAU_RATIO):
        self.tau_bimodal = tau_bimodal
        self.tau_ratio = tau_ratio

    @staticmethod
    def _clouds(X) -> list[np.ndarray]:
        if isinstance(X, analysis.LatentCloud) or (isinstance(X, np.ndarray) and X.ndim == 2):
            X = [X]
        out = []
        for c in X:
            pts = c.points if isinstance(c, analysis.LatentCloud) else c
            out.append(check_array(pts, ensure_min_samples=analysis.MIN_POINTS))
        if not out:
            raise InputError("no latent clouds given")
        for pts in out:
            if pts.shape[1] != 2:
                raise InputError(f"latent clouds must have 2 columns, got {pts.shape[1]}")
        return out

    def fit(self, X, y=None):
        self._clouds(X)
        self.classes_ = np.array([int(m) for m in ModeLabel])
        return self

    def diagnose(self, X) -> list[analysis.ModeDiagnostics]:
        return [analysis.mode_diagnostics(p) for p in self._clouds(X)]

    def predict(self, X) -> np.ndarray:
        return np.array([int(analysis.classify(d, self.tau_bimodal, self.tau_ratio)) for d in self.diagnose(X)])
