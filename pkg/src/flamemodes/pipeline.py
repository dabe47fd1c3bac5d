"""Windowing, normalisation, Adam and the early-stopped training loop."""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from . import model
from .exceptions import ConfigError, DataError, InputError, NumericError, TrainingError
from .formats import Checkpoint, Normalizer
from .numgrad import ParamStore
from .records import N_CHANNELS, PressureRecord

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    """Training hyperparameters.

    ``patience`` counts consecutive per-epoch validation evaluations without a
    strict improvement larger than ``min_delta``.
    """

    window_len: int = 200
    stride: int = 100
    val_fraction: float = 0.2
    batch_size: int = 32
    learning_rate: float = 1e-3
    beta: float = 1.0
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    max_epochs: int = 5000
    patience: int = 100
    seed: int = 0
    hidden1: int = 32
    hidden2: int = 16
    min_delta: float = 1e-12

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.window_len < 8:
            raise ConfigError(f"window_len must be >= 8, got {self.window_len}")
        if self.stride < 1:
            raise ConfigError(f"stride must be >= 1, got {self.stride}")
        if not 0.0 < self.val_fraction < 1.0:
            raise ConfigError(f"val_fraction must be in (0, 1), got {self.val_fraction}")
        if self.batch_size < 1 or self.max_epochs < 1 or self.patience < 1:
            raise ConfigError("batch_size, max_epochs and patience must be >= 1")
        if self.learning_rate < 0 or self.beta < 0 or self.adam_eps <= 0:
            raise ConfigError("learning_rate and beta must be >= 0, adam_eps > 0")
        if not (0 <= self.adam_beta1 < 1 and 0 <= self.adam_beta2 < 1):
            raise ConfigError("Adam decay rates must lie in [0, 1)")
        if self.hidden1 < 1 or self.hidden2 < 1:
            raise ConfigError("hidden sizes must be >= 1")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name: f.type for f in fields(cls)}
        unknown = set(d) - set(known)
        if unknown:
            raise ConfigError(f"unknown training option(s): {', '.join(sorted(unknown))}")
        defaults = cls()
        kwargs = {k: type(getattr(defaults, k))(v) for k, v in d.items()}
        return cls(**kwargs)


# ---------------------------------------------------------------------------
# windows and normalisation
# ---------------------------------------------------------------------------

def window_count(n: int, window_len: int, stride: int) -> int:
    if n < window_len:
        return 0
    return (n - window_len) // stride + 1


def make_windows(rec: PressureRecord | np.ndarray, window_len: int, stride: int) -> np.ndarray:
    """Time-ordered windows ``(n_windows, window_len, channels)`` starting at 0, stride, 2*stride, ..."""
    x = rec.samples if isinstance(rec, PressureRecord) else np.asarray(rec, dtype=np.float64)
    if window_len < 1 or stride < 1:
        raise InputError("window_len and stride must be >= 1")
    n = x.shape[0]
    if n < window_len:
        raise InputError(f"record has {n} samples, fewer than the window length {window_len}")
    count = window_count(n, window_len, stride)
    view = np.lib.stride_tricks.sliding_window_view(x, window_len, axis=0)[::stride][:count]
    return np.ascontiguousarray(view.transpose(0, 2, 1))


def normalize_fit(windows) -> Normalizer:
    x = np.asarray(windows, dtype=np.float64)
    flat = x.reshape(-1, x.shape[-1])
    if flat.shape[0] < 2:
        raise DataError("normaliser needs at least 2 samples per channel")
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    bad = np.flatnonzero(~(std > 0))
    if bad.size:
        raise DataError(f"channel ch{bad[0]:02d} has zero variance in the training windows")
    return Normalizer(mean, std)


def normalize_apply(normalizer: Normalizer, window) -> np.ndarray:
    return normalizer.apply(window)


@dataclass
class WindowSet:
    """Raw (un-normalised) training and validation windows."""

    train: np.ndarray
    val: np.ndarray
    case_ids: list[str] = field(default_factory=list)
    train_counts: list[int] = field(default_factory=list)
    val_counts: list[int] = field(default_factory=list)


def split_windows(records: Sequence[PressureRecord], window_len: int, stride: int,
                  val_fraction: float = 0.2) -> WindowSet:
    """Per case, the last ``val_fraction`` of windows (at least one) go to validation."""
    train, val, ids, ntr, nva = [], [], [], [], []
    for rec in records:
        w = make_windows(rec, window_len, stride)
        n = w.shape[0]
        n_val = min(max(1, int(round(val_fraction * n))), n - 1) if n >= 2 else 0
        train.append(w[:n - n_val])
        val.append(w[n - n_val:])
        ids.append(rec.case_id)
        ntr.append(n - n_val)
        nva.append(n_val)
    empty = np.zeros((0, window_len, N_CHANNELS))
    return WindowSet(np.concatenate(train) if train else empty, np.concatenate(val) if val else empty,
                     ids, ntr, nva)


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    t: int = 0


def adam_step(params: ParamStore, grads: dict[str, np.ndarray], state: AdamState, cfg: TrainConfig):
    """One bias-corrected Adam update, applied to ``params`` in place."""
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for {name}")
    state.t += 1
    b1, b2 = cfg.adam_beta1, cfg.adam_beta2
    bc1 = 1.0 - b1 ** state.t
    bc2 = 1.0 - b2 ** state.t
    for name, g in grads.items():
        if name not in state.m:
            state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        params[name][...] -= cfg.learning_rate * (m / bc1) / (np.sqrt(v / bc2) + cfg.adam_eps)
    return params, state


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def evaluate(windows: np.ndarray, params: ParamStore, beta: float, chunk: int = 256) -> float:
    """Mean total loss with ``eps = 0``; never touches parameters."""
    if windows.shape[0] == 0:
        raise TrainingError("no validation windows")
    totals = []
    for start in range(0, windows.shape[0], chunk):
        x = windows[start:start + chunk]
        t, _, _ = model.forward_losses(x, np.zeros((x.shape[0], model.LATENT_DIM)), params, beta)
        totals.append(t)
    return float(np.concatenate(totals).mean())


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[tuple[float, float]]
    best_epoch: int
    stopped_early: bool
    params: ParamStore


def train(cfg: TrainConfig, dataset: Sequence[PressureRecord] | WindowSet,
          callback: Callable[[int, float, float], None] | None = None) -> TrainResult:
    """Fit the autoencoder with Adam and validation-based early stopping.

    ``dataset`` is either a list of records (split per case, last windows to
    validation) or a prepared :class:`WindowSet`. The returned checkpoint holds
    the parameters from the epoch with the lowest validation loss.
    """
    cfg.validate()
    ws = dataset if isinstance(dataset, WindowSet) else split_windows(
        list(dataset), cfg.window_len, cfg.stride, cfg.val_fraction)
    if ws.train.shape[0] == 0:
        raise TrainingError("empty training set")
    if ws.val.shape[0] == 0:
        raise TrainingError("validation split is empty; need at least one validation window")
    if ws.train.shape[1] != cfg.window_len:
        raise InputError(f"windows have length {ws.train.shape[1]}, config says {cfg.window_len}")

    normalizer = normalize_fit(ws.train)
    x_train = normalizer.apply(ws.train)
    x_val = normalizer.apply(ws.val)

    init_ss, shuffle_ss, eps_ss = np.random.SeedSequence(cfg.seed).spawn(3)
    params = model.init_params(cfg.hidden1, cfg.hidden2, x_train.shape[-1], seed=np.random.default_rng(init_ss))
    shuffle_rng = np.random.default_rng(shuffle_ss)
    eps_rng = np.random.default_rng(eps_ss)
    state = AdamState()

    history: list[tuple[float, float]] = []
    best_val = math.inf
    best_epoch = 0
    best_params = params.copy()
    since_best = 0
    n = x_train.shape[0]
    stopped_early = False
    for epoch in range(1, cfg.max_epochs + 1):
        order = shuffle_rng.permutation(n)
        running = 0.0
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            eps = eps_rng.standard_normal((idx.size, model.LATENT_DIM))
            try:
                total, _, _, per_window = model.forward_backward(x_train[idx], eps, params, cfg.beta)
                adam_step(params, model.batch_mean(per_window), state, cfg)
            except NumericError as exc:
                raise TrainingError(f"epoch {epoch}: {exc}") from None
            running += float(total.sum())
        train_loss = running / n
        try:
            val_loss = evaluate(x_val, params, cfg.beta)
        except NumericError as exc:
            raise TrainingError(f"epoch {epoch}: {exc}") from None
        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise TrainingError(f"epoch {epoch}: non-finite loss")
        history.append((train_loss, val_loss))
        if callback is not None:
            callback(epoch, train_loss, val_loss)
        if val_loss < best_val - cfg.min_delta:
            best_val = val_loss
            best_epoch = epoch
            best_params = params.copy()
            since_best = 0
        else:
            since_best += 1
        if epoch == 1 or epoch % 25 == 0:
            log.info("epoch %d train %.6g val %.6g best %.6g@%d", epoch, train_loss, val_loss, best_val, best_epoch)
        if since_best >= cfg.patience:
            stopped_early = True
            log.info("early stop at epoch %d (best %d)", epoch, best_epoch)
            break

    ckpt = Checkpoint(params=best_params, normalizer=normalizer, hidden1=cfg.hidden1, hidden2=cfg.hidden2,
                      window_len=cfg.window_len, stride=cfg.stride, beta=cfg.beta, seed=cfg.seed,
                      best_epoch=best_epoch, history=history)
    return TrainResult(ckpt, history, best_epoch, stopped_early, best_params)
