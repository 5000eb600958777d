"""Mini-batch training loop with random-length crops."""

from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from ..exceptions import ConfigError, DegenerateNorm, TrainingDataError, TrainingDiverged
from .model import ArchConfig, Model
from .optim import PlateauSchedule, sgd_step

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    batch_size: int = 64
    momentum: float = 0.9
    weight_decay: float = 1e-4
    lr_schedule: tuple = (0.1, 0.01, 0.001)
    plateau_rel_tol: float = 0.01
    plateau_patience: int = 3
    L_min: int = 100
    L_max: int = 200
    epochs: int = 30
    rng_seed: int = 0
    # architecture
    encoder: str = "tdnn"
    hidden: tuple = (64, 64)
    channels: tuple = (4, 8, 16, 32)
    blocks: tuple = (1, 1, 1, 1)
    embedding_dim: int = 32
    normalize: bool = True
    alpha: float | None = None  # None: 12 when fixed, initial value 10 when trainable
    alpha_trainable: bool = False
    dtype: str = "float64"

    def __post_init__(self):
        for k in ("lr_schedule", "hidden", "channels", "blocks"):
            setattr(self, k, tuple(getattr(self, k)))
        self.validate()

    def validate(self):
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if not 0 <= self.momentum < 1:
            raise ConfigError("momentum must be in [0, 1)")
        if self.weight_decay < 0:
            raise ConfigError("weight_decay must be >= 0")
        if not 1 <= self.L_min <= self.L_max:
            raise ConfigError("need 1 <= L_min <= L_max")
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.alpha is not None and self.alpha <= 0:
            raise ConfigError("alpha must be positive")
        if self.dtype not in ("float64", "float32"):
            raise ConfigError("dtype must be float64 or float32")
        if not self.lr_schedule:
            raise ConfigError("lr_schedule must not be empty")

    def arch(self, feat_dim: int, num_classes: int) -> ArchConfig:
        return ArchConfig(feat_dim=feat_dim, num_classes=num_classes,
                          embedding_dim=self.embedding_dim, encoder=self.encoder,
                          hidden=self.hidden, channels=self.channels, blocks=self.blocks,
                          normalize=self.normalize, alpha=self.alpha,
                          alpha_trainable=self.alpha_trainable)

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("lr_schedule", "hidden", "channels", "blocks"):
            d[k] = list(d[k])
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown TrainConfig keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "TrainConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


@dataclass
class TrainStats:
    loss: list = field(default_factory=list)
    accuracy: list = field(default_factory=list)
    lr: list = field(default_factory=list)
    alpha: list = field(default_factory=list)
    steps: int = 0

    def to_dict(self):
        return asdict(self)


def crop_or_extend(seq, L: int, rng) -> np.ndarray:
    """Random contiguous crop of ``L`` rows, or periodic tiling when too short."""
    seq = np.asarray(seq)
    T = seq.shape[0]
    if T < 1:
        raise ConfigError("cannot crop an empty sequence")
    if T >= L:
        start = int(rng.integers(0, T - L + 1))
        return seq[start:start + L]
    return seq[np.arange(L) % T]


def _check_dataset(sequences, labels):
    if len(sequences) != len(labels):
        raise TrainingDataError("sequences and labels differ in length")
    if len(sequences) == 0:
        raise TrainingDataError("empty training set")
    labels = np.asarray(labels, dtype=np.int64)
    if labels.min() < 0:
        raise TrainingDataError("labels must be non-negative class indices")
    num_classes = int(labels.max()) + 1
    if len(np.unique(labels)) < 2:
        raise TrainingDataError("need at least two speakers")
    dims = {np.asarray(s).shape[1] for s in sequences}
    if len(dims) != 1:
        raise TrainingDataError(f"inconsistent feature dims {sorted(dims)}")
    return labels, num_classes, dims.pop()


def train(config: TrainConfig, sequences, labels, num_classes: int | None = None,
          callback=None):
    """Train a speaker classifier; returns ``(model, stats)``.

    ``sequences`` is a list of (T_i, D) arrays and ``labels`` integer class
    indices. Every step draws one crop length ``L`` in ``[L_min, L_max]`` and
    crops or tiles each utterance of the batch to it. Results depend only on
    ``config.rng_seed``.
    """
    labels, inferred, feat_dim = _check_dataset(sequences, labels)
    num_classes = num_classes or inferred
    dtype = np.dtype(config.dtype)
    rng = np.random.default_rng(config.rng_seed)
    model = Model.build(config.arch(feat_dim, num_classes), seed=int(rng.integers(2**31)))
    model.astype(dtype)
    seqs = [np.asarray(s, dtype=dtype) for s in sequences]
    params = model.params()
    no_decay = {k for k in params if k.endswith("alpha_raw")}
    velocity: dict = {}
    schedule = PlateauSchedule(config.lr_schedule, config.plateau_rel_tol, config.plateau_patience)
    stats = TrainStats()
    n = len(seqs)

    for epoch in range(config.epochs):
        lr = schedule.lr
        order = rng.permutation(n)
        total_loss, correct = 0.0, 0
        for step, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            L = int(rng.integers(config.L_min, config.L_max + 1))
            xb = np.stack([crop_or_extend(seqs[i], L, rng) for i in idx])
            yb = labels[idx]
            try:
                loss, grads, logits = model.loss_and_grads(xb, yb)
            except DegenerateNorm as exc:
                raise DegenerateNorm(f"epoch {epoch} step {step}: {exc}") from exc
            if not np.isfinite(loss):
                raise TrainingDiverged(f"non-finite loss at epoch {epoch} step {step}")
            sgd_step(params, grads, velocity, lr, config.momentum, config.weight_decay, no_decay)
            total_loss += loss * len(idx)
            correct += int(np.sum(np.argmax(logits, axis=1) == yb))
            stats.steps += 1
        epoch_loss = total_loss / n
        stats.loss.append(float(epoch_loss))
        stats.accuracy.append(correct / n)
        stats.lr.append(lr)
        stats.alpha.append(model.alpha)
        log.info("epoch %d loss %.5f acc %.4f lr %g alpha %s", epoch, epoch_loss,
                 correct / n, lr, model.alpha)
        if callback is not None:
            callback(epoch, stats)
        schedule.step(epoch_loss)
    return model, stats
