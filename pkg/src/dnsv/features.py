"""Log mel-filterbank front-end: framing, log-mel energies, energy VAD and
sliding-window mean normalization, plus the corpus feature-file formats."""

from __future__ import annotations

import struct
import wave
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Iterable, Iterator

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .exceptions import ConfigError, FormatError, UtteranceTooShort

DEFAULT_FLOOR = 1e-10


@dataclass
class Waveform:
    samples: np.ndarray
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples)
        if self.samples.ndim != 1:
            raise ConfigError("waveform samples must be one-dimensional")
        if int(self.sample_rate) <= 0:
            raise ConfigError(f"sample_rate must be positive, got {self.sample_rate}")
        self.sample_rate = int(self.sample_rate)


@dataclass
class FeatureMatrix:
    utt_id: str
    frames: np.ndarray
    frame_shift_ms: float = 10.0
    vad_mask_applied: bool = False
    cmn_applied: bool = False

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[0] < 1:
            raise ConfigError(f"{self.utt_id}: frames must be a non-empty T x D matrix")
        if not np.all(np.isfinite(self.frames)):
            raise ConfigError(f"{self.utt_id}: non-finite feature values")

    @property
    def num_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def dim(self) -> int:
        return self.frames.shape[1]


def read_wav(path) -> Waveform:
    """Read a RIFF/WAVE PCM16 file; multi-channel input keeps channel 0."""
    with wave.open(str(path), "rb") as wf:
        if wf.getsampwidth() != 2:
            raise FormatError(f"{path}: only 16-bit PCM is supported")
        n_channels = wf.getnchannels()
        rate = wf.getframerate()
        raw = wf.readframes(wf.getnframes())
    samples = np.frombuffer(raw, dtype="<i2")
    if n_channels > 1:
        samples = samples.reshape(-1, n_channels)[:, 0]
    return Waveform(samples.astype(np.int16), rate)


def write_wav(path, w: Waveform) -> None:
    data = np.clip(np.round(np.asarray(w.samples, dtype=np.float64)), -32768, 32767)
    with wave.open(str(path), "wb") as wf:
        wf.setnchannels(1)
        wf.setsampwidth(2)
        wf.setframerate(w.sample_rate)
        wf.writeframes(data.astype("<i2").tobytes())


def _ms_to_samples(ms: float, sample_rate: int) -> int:
    return int(round(ms * sample_rate / 1000.0))


def frame_signal(w: Waveform, frame_len_ms: float = 25.0, hop_ms: float = 10.0,
                 window: str = "hamming") -> np.ndarray:
    """Slice a waveform into overlapping windowed frames.

    Returns a ``(T, win)`` array with ``T = floor((N - win) / hop) + 1``.
    No padding is applied; a signal shorter than one window raises
    :class:`UtteranceTooShort`.
    """
    if not (frame_len_ms >= hop_ms > 0):
        raise ConfigError("require frame_len_ms >= hop_ms > 0")
    win = _ms_to_samples(frame_len_ms, w.sample_rate)
    hop = _ms_to_samples(hop_ms, w.sample_rate)
    if hop < 1:
        raise ConfigError("hop is shorter than one sample")
    x = np.asarray(w.samples, dtype=np.float64)
    if x.size < win:
        raise UtteranceTooShort(f"signal has {x.size} samples, need at least {win}")
    n_frames = (x.size - win) // hop + 1
    frames = np.lib.stride_tricks.sliding_window_view(x, win)[::hop][:n_frames]
    return frames * _window(window, win)


def _window(name: str, n: int) -> np.ndarray:
    if name == "hamming":
        return np.hamming(n)
    if name == "hann":
        return np.hanning(n)
    if name in ("rect", "rectangular", "none"):
        return np.ones(n)
    raise ConfigError(f"unknown window {name!r}")


def hz_to_mel(hz):
    return 2595.0 * np.log10(1.0 + np.asarray(hz, dtype=np.float64) / 700.0)


def mel_to_hz(mel):
    return 700.0 * (10.0 ** (np.asarray(mel, dtype=np.float64) / 2595.0) - 1.0)


def mel_center_frequencies(n_mels: int, sample_rate: int) -> np.ndarray:
    """Center frequency (Hz) of each triangular filter spanning 0..Nyquist."""
    edges = np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2)
    return mel_to_hz(edges[1:-1])


def mel_filterbank(n_mels: int, n_fft: int, sample_rate: int) -> np.ndarray:
    """Triangular filters on the HTK mel scale, unit peak, shape (n_mels, n_fft//2+1)."""
    if n_mels < 1:
        raise ConfigError("n_mels must be >= 1")
    mel_edges = np.linspace(0.0, hz_to_mel(sample_rate / 2.0), n_mels + 2)
    bin_mel = hz_to_mel(np.arange(n_fft // 2 + 1) * sample_rate / n_fft)
    left, center, right = mel_edges[:-2, None], mel_edges[1:-1, None], mel_edges[2:, None]
    up = (bin_mel - left) / (center - left)
    down = (right - bin_mel) / (right - center)
    return np.maximum(0.0, np.minimum(up, down))


def power_spectrum(frames: np.ndarray, n_fft: int | None = None) -> np.ndarray:
    frames = np.atleast_2d(frames)
    if n_fft is None:
        n_fft = 1 << int(np.ceil(np.log2(frames.shape[1])))
    return np.abs(np.fft.rfft(frames, n=n_fft, axis=1)) ** 2


def log_mel(frames: np.ndarray, n_mels: int = 64, sample_rate: int = 16000,
            floor_value: float = DEFAULT_FLOOR, n_fft: int | None = None,
            utt_id: str = "", frame_shift_ms: float = 10.0) -> FeatureMatrix:
    """Floored natural-log mel energies of already windowed frames."""
    if floor_value <= 0:
        raise ConfigError("floor_value must be positive")
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    if n_fft is None:
        n_fft = 1 << int(np.ceil(np.log2(frames.shape[1])))
    spec = power_spectrum(frames, n_fft)
    bank = mel_filterbank(n_mels, n_fft, sample_rate)
    energies = spec @ bank.T
    return FeatureMatrix(utt_id, np.log(np.maximum(floor_value, energies)),
                         frame_shift_ms=frame_shift_ms)


def frame_log_energy(frames: np.ndarray, floor_value: float = DEFAULT_FLOOR) -> np.ndarray:
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    return np.log(np.maximum(floor_value, np.sum(frames ** 2, axis=1)))


def energy_vad(f, threshold_offset: float = 0.0) -> np.ndarray:
    """Boolean speech mask from per-frame log energies.

    ``f`` is either a 1-D array of frame log-energies or a
    :class:`FeatureMatrix`, whose per-frame energy is taken as the
    log-sum-exp over its log-mel bins. A frame is kept when its log energy
    strictly exceeds ``mean + threshold_offset``. If nothing passes, the single
    highest-energy frame is kept, so the mask is never empty.
    """
    if isinstance(f, FeatureMatrix):
        x = f.frames
        peak = x.max(axis=1, keepdims=True)
        energy = (peak + np.log(np.exp(x - peak).sum(axis=1, keepdims=True)))[:, 0]
    else:
        energy = np.asarray(f, dtype=np.float64).ravel()
    if energy.size < 1:
        raise ConfigError("energy_vad needs at least one frame")
    mask = energy > energy.mean() + threshold_offset
    if not mask.any():
        mask[int(np.argmax(energy))] = True
    return mask


def apply_vad(f: FeatureMatrix, mask: np.ndarray) -> FeatureMatrix:
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (f.num_frames,):
        raise ConfigError("VAD mask length does not match frame count")
    return replace(f, frames=f.frames[mask], vad_mask_applied=True)


def sliding_cmn(f: FeatureMatrix, window_frames: int = 300) -> FeatureMatrix:
    """Subtract a centered moving mean (truncated at the edges) per dimension.

    Frame ``t`` uses rows ``[t - (w-1)//2, t + w//2]`` clipped to the
    utterance, so a window covering the whole utterance reduces to global
    mean subtraction.
    """
    if window_frames < 1:
        raise ConfigError("window_frames must be >= 1")
    x = f.frames
    n = x.shape[0]
    csum = np.vstack([np.zeros((1, x.shape[1])), np.cumsum(x, axis=0)])
    t = np.arange(n)
    lo = np.maximum(0, t - (window_frames - 1) // 2)
    hi = np.minimum(n, t + window_frames // 2 + 1)
    if n <= window_frames:
        means = np.broadcast_to(x.mean(axis=0), x.shape)
    else:
        means = (csum[hi] - csum[lo]) / (hi - lo)[:, None]
    return replace(f, frames=x - means, cmn_applied=True)


def extract_features(w: Waveform, utt_id: str = "", n_mels: int = 64,
                     frame_len_ms: float = 25.0, hop_ms: float = 10.0,
                     vad: bool = True, vad_offset: float = 0.0,
                     cmn_window_ms: float = 3000.0,
                     floor_value: float = DEFAULT_FLOOR) -> FeatureMatrix:
    """Full front-end for one utterance: log-mel, then VAD, then sliding CMN."""
    frames = frame_signal(w, frame_len_ms, hop_ms)
    feats = log_mel(frames, n_mels, w.sample_rate, floor_value,
                    utt_id=utt_id, frame_shift_ms=hop_ms)
    if vad:
        feats = apply_vad(feats, energy_vad(frame_log_energy(frames, floor_value), vad_offset))
    if cmn_window_ms and cmn_window_ms > 0:
        feats = sliding_cmn(feats, max(1, int(round(cmn_window_ms / hop_ms))))
    return feats


class LogMelExtractor(TransformerMixin, BaseEstimator):
    """Stateless transformer mapping waveforms to normalized log-mel matrices.

    ``transform`` accepts an iterable of :class:`Waveform` (or ``(utt_id,
    Waveform)`` pairs) and returns a list of :class:`FeatureMatrix`.
    """

    def __init__(self, n_mels=64, frame_len_ms=25.0, hop_ms=10.0, vad=True,
                 vad_offset=0.0, cmn_window_ms=3000.0, floor_value=DEFAULT_FLOOR):
        self.n_mels = n_mels
        self.frame_len_ms = frame_len_ms
        self.hop_ms = hop_ms
        self.vad = vad
        self.vad_offset = vad_offset
        self.cmn_window_ms = cmn_window_ms
        self.floor_value = floor_value

    def fit(self, X=None, y=None):
        return self

    def __sklearn_is_fitted__(self):
        return True

    def transform(self, X):
        out = []
        for i, item in enumerate(X):
            utt_id, w = item if isinstance(item, tuple) else (f"utt{i:06d}", item)
            out.append(extract_features(
                w, utt_id, self.n_mels, self.frame_len_ms, self.hop_ms, self.vad,
                self.vad_offset, self.cmn_window_ms, self.floor_value))
        return out


# ---------------------------------------------------------------------------
# Feature files

TEXT_HEADER = "#feat v1 dim="
BINARY_MAGIC = b"FEATB1"


def write_features(path, feats: Iterable[FeatureMatrix], binary: bool = False) -> None:
    feats = list(feats)
    if not feats:
        raise ConfigError("refusing to write an empty feature file")
    dim = feats[0].dim
    for f in feats:
        if f.dim != dim:
            raise ConfigError(f"{f.utt_id}: dim {f.dim} differs from corpus dim {dim}")
        if not f.utt_id or any(c.isspace() for c in f.utt_id):
            raise ConfigError(f"invalid utterance id {f.utt_id!r}")
    if binary:
        with open(path, "wb") as fh:
            fh.write(BINARY_MAGIC)
            for f in feats:
                uid = f.utt_id.encode("utf-8")
                fh.write(struct.pack("<I", len(uid)))
                fh.write(uid)
                fh.write(struct.pack("<II", f.num_frames, f.dim))
                fh.write(np.ascontiguousarray(f.frames, dtype="<f8").tobytes())
        return
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"{TEXT_HEADER}{dim}\n")
        for f in feats:
            fh.write(f"{f.utt_id} {f.num_frames}\n")
            for row in f.frames:
                fh.write(" ".join(format(v, ".17g") for v in row))
                fh.write("\n")


def _iter_text(path) -> Iterator[FeatureMatrix]:
    with open(path, "r", encoding="utf-8") as fh:
        header = fh.readline().strip()
        if not header.startswith(TEXT_HEADER):
            raise FormatError(f"{path}: missing '{TEXT_HEADER}<D>' header")
        dim = int(header[len(TEXT_HEADER):])
        for line in fh:
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 2:
                raise FormatError(f"{path}: malformed utterance header {line!r}")
            utt_id, n = parts[0], int(parts[1])
            rows = [fh.readline() for _ in range(n)]
            try:
                data = np.array([[float(v) for v in r.split()] for r in rows], dtype=np.float64)
            except ValueError as exc:
                raise FormatError(f"{path}: bad numeric data in {utt_id}") from exc
            if data.shape != (n, dim):
                raise FormatError(f"{path}: {utt_id} expected {n}x{dim}, got {data.shape}")
            yield FeatureMatrix(utt_id, data)


def _iter_binary(path) -> Iterator[FeatureMatrix]:
    with open(path, "rb") as fh:
        if fh.read(len(BINARY_MAGIC)) != BINARY_MAGIC:
            raise FormatError(f"{path}: bad magic, expected FEATB1")
        while True:
            head = fh.read(4)
            if not head:
                return
            (n_id,) = struct.unpack("<I", head)
            utt_id = fh.read(n_id).decode("utf-8")
            n, d = struct.unpack("<II", fh.read(8))
            buf = fh.read(8 * n * d)
            if len(buf) != 8 * n * d:
                raise FormatError(f"{path}: truncated data for {utt_id}")
            yield FeatureMatrix(utt_id, np.frombuffer(buf, dtype="<f8").reshape(n, d).copy())


def read_features(path) -> list[FeatureMatrix]:
    """Read a text or binary feature file (format detected from the magic)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(BINARY_MAGIC))
    reader = _iter_binary if magic == BINARY_MAGIC else _iter_text
    return list(reader(path))


def features_by_id(feats: Iterable[FeatureMatrix]) -> dict[str, FeatureMatrix]:
    out: dict[str, FeatureMatrix] = {}
    for f in feats:
        if f.utt_id in out:
            raise FormatError(f"duplicate utterance id {f.utt_id}")
        out[f.utt_id] = f
    return out


def read_wav_dir(directory) -> list[tuple[str, Waveform]]:
    paths = sorted(Path(directory).glob("*.wav"))
    return [(p.stem, read_wav(p)) for p in paths]
