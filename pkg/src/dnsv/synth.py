"""Synthetic speaker corpora with known ground truth.

Each speaker has a mean vector drawn from N(0, between_scale^2 I); every
frame of an utterance is that mean plus stationary AR(1) noise with marginal
standard deviation ``within_scale``. Test speakers never appear in training.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import asdict, dataclass, fields
from pathlib import Path

import numpy as np

from .exceptions import ConfigError
from .features import FeatureMatrix


@dataclass
class SynthSpec:
    n_speakers: int = 50
    utts_per_speaker: int = 20
    n_test_speakers: int = 10
    test_utts_per_speaker: int = 10
    frames_min: int = 200
    frames_max: int = 400
    feature_dim: int = 24
    between_scale: float = 1.0
    within_scale: float = 2.0
    temporal_smoothing: float = 0.9
    rng_seed: int = 0

    def __post_init__(self):
        if self.n_speakers < 2:
            raise ConfigError("need at least two training speakers")
        if self.n_test_speakers < 2:
            raise ConfigError("need at least two test speakers for nontarget trials")
        if self.utts_per_speaker < 1 or self.test_utts_per_speaker < 2:
            raise ConfigError("need >=1 train and >=2 test utterances per speaker")
        if not 1 <= self.frames_min <= self.frames_max:
            raise ConfigError("need 1 <= frames_min <= frames_max")
        if self.between_scale < 0 or self.within_scale < 0:
            raise ConfigError("scales must be non-negative")
        if not 0 <= self.temporal_smoothing < 1:
            raise ConfigError("temporal_smoothing must be in [0, 1)")

    @classmethod
    def from_dict(cls, d):
        known = {f.name for f in fields(cls)}
        if set(d) - known:
            raise ConfigError(f"unknown SynthSpec keys: {sorted(set(d) - known)}")
        return cls(**d)

    def to_dict(self):
        return asdict(self)


@dataclass
class SynthCorpus:
    train: list
    test: list
    train_labels: dict
    test_labels: dict
    trials: list  # (label, utt_a, utt_b)


def _utterance(rng, mean, n_frames, within, rho):
    d = mean.shape[0]
    noise = rng.standard_normal((n_frames, d))
    innov = np.sqrt(1.0 - rho * rho)
    out = np.empty((n_frames, d))
    out[0] = noise[0]
    for t in range(1, n_frames):
        out[t] = rho * out[t - 1] + innov * noise[t]
    return mean + within * out


def _speakers(rng, spec, prefix, n_spk, n_utt):
    feats, labels = [], {}
    for s in range(n_spk):
        spk = f"{prefix}{s:04d}"
        mean = spec.between_scale * rng.standard_normal(spec.feature_dim)
        for u in range(n_utt):
            utt = f"{spk}-{u:03d}"
            n = int(rng.integers(spec.frames_min, spec.frames_max + 1))
            feats.append(FeatureMatrix(utt, _utterance(rng, mean, n, spec.within_scale,
                                                       spec.temporal_smoothing)))
            labels[utt] = spk
    return feats, labels


def make_trials(labels: dict, rng) -> list:
    """All target pairs plus an equal-sized random sample of nontarget pairs."""
    utts = sorted(labels)
    pairs = list(itertools.combinations(utts, 2))
    target = [p for p in pairs if labels[p[0]] == labels[p[1]]]
    nontarget = [p for p in pairs if labels[p[0]] != labels[p[1]]]
    k = min(len(target), len(nontarget))
    if k == 0:
        raise ConfigError("cannot build trials without both target and nontarget pairs")
    if len(target) > k:
        target = [target[i] for i in sorted(rng.choice(len(target), k, replace=False))]
    if len(nontarget) > k:
        nontarget = [nontarget[i] for i in sorted(rng.choice(len(nontarget), k, replace=False))]
    trials = [(1, a, b) for a, b in target] + [(0, a, b) for a, b in nontarget]
    return sorted(trials, key=lambda t: (t[1], t[2]))


def generate(spec: SynthSpec) -> SynthCorpus:
    rng = np.random.default_rng(spec.rng_seed)
    train, train_labels = _speakers(rng, spec, "spk", spec.n_speakers, spec.utts_per_speaker)
    test, test_labels = _speakers(rng, spec, "tst", spec.n_test_speakers, spec.test_utts_per_speaker)
    trials = make_trials(test_labels, rng)
    return SynthCorpus(train, test, train_labels, test_labels, trials)


def write_corpus(corpus: SynthCorpus, out_dir, binary: bool = False) -> dict:
    """Write train/test feature files, label maps and the trial list."""
    from .features import write_features
    from .metrics import write_trials

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ext = "featb" if binary else "feat"
    paths = {
        "train_feats": out / f"train.{ext}",
        "test_feats": out / f"test.{ext}",
        "train_labels": out / "train.utt2spk",
        "test_labels": out / "test.utt2spk",
        "trials": out / "trials.txt",
    }
    write_features(paths["train_feats"], corpus.train, binary=binary)
    write_features(paths["test_feats"], corpus.test, binary=binary)
    write_labels(paths["train_labels"], corpus.train_labels)
    write_labels(paths["test_labels"], corpus.test_labels)
    write_trials(paths["trials"], corpus.trials)
    return {k: str(v) for k, v in paths.items()}


def write_labels(path, labels: dict) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for utt in sorted(labels):
            fh.write(f"{utt} {labels[utt]}\n")


def read_labels(path) -> dict:
    labels = {}
    with open(path, "r", encoding="utf-8") as fh:
        for n, line in enumerate(fh, 1):
            parts = line.split()
            if not parts:
                continue
            if len(parts) != 2:
                raise ConfigError(f"{path}:{n}: expected '<utt_id> <speaker_id>'")
            labels[parts[0]] = parts[1]
    return labels


def load_spec(path) -> SynthSpec:
    with open(path, "r", encoding="utf-8") as fh:
        return SynthSpec.from_dict(json.load(fh))
