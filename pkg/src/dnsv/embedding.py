"""Utterance embedding extraction at a chosen tap point, and embedding files."""

from __future__ import annotations

import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .exceptions import ConfigError, FormatError, TapPointUnavailable
from .features import FeatureMatrix
from .nn.model import Model

TAP_POINTS = ("penultimate", "post_norm")
EMB_MAGIC = b"EMBB1"


@dataclass
class EmbeddingSet:
    entries: dict = field(default_factory=dict)
    tap_point: str = "penultimate"
    model_fingerprint: str = ""

    @property
    def dim(self) -> int:
        if not self.entries:
            return 0
        return next(iter(self.entries.values())).shape[0]

    def __len__(self):
        return len(self.entries)

    def matrix(self, utt_ids):
        return np.stack([self.entries[u] for u in utt_ids])

    def validate(self):
        dims = {v.shape for v in self.entries.values()}
        if len(dims) > 1:
            raise FormatError(f"embeddings have inconsistent shapes {sorted(dims)}")


def default_tap_point(model: Model) -> str:
    return "post_norm" if model.norm_index is not None else "penultimate"


def extract(model: Model, features, tap_point: str | None = None) -> np.ndarray:
    """Forward one whole utterance (no cropping) and return the tapped vector."""
    tap_point = tap_point or default_tap_point(model)
    if tap_point not in TAP_POINTS:
        raise ConfigError(f"tap_point must be one of {TAP_POINTS}")
    if tap_point == "post_norm" and model.norm_index is None:
        raise TapPointUnavailable("post_norm tap requested on a model without a normalization layer")
    frames = features.frames if isinstance(features, FeatureMatrix) else np.asarray(features)
    dtype = next(iter(model.params().values())).dtype
    v = model.embed(frames[None].astype(dtype, copy=False), tap_point)[0]
    v = np.asarray(v, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise FloatingPointError("non-finite embedding")
    return v


def extract_all(model: Model, features, tap_point: str | None = None, jobs: int = 1) -> EmbeddingSet:
    tap_point = tap_point or default_tap_point(model)
    feats = list(features)
    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            vecs = list(pool.map(lambda f: extract(model, f, tap_point), feats))
    else:
        vecs = [extract(model, f, tap_point) for f in feats]
    entries = {}
    for f, v in zip(feats, vecs):
        if f.utt_id in entries:
            raise FormatError(f"duplicate utterance id {f.utt_id}")
        entries[f.utt_id] = v
    return EmbeddingSet(entries, tap_point, model.fingerprint())


def write_embeddings(path, emb: EmbeddingSet, binary: bool = False) -> None:
    """Text: one ``<utt_id> <d1> ... <dD>`` line per utterance, sorted by id,
    preceded by a ``#`` provenance comment. Binary: magic ``EMBB1``."""
    emb.validate()
    ids = sorted(emb.entries)
    if binary:
        with open(path, "wb") as fh:
            fh.write(EMB_MAGIC)
            meta = f"{emb.tap_point} {emb.model_fingerprint}".encode("utf-8")
            fh.write(struct.pack("<I", len(meta)))
            fh.write(meta)
            fh.write(struct.pack("<II", len(ids), emb.dim))
            for u in ids:
                b = u.encode("utf-8")
                fh.write(struct.pack("<I", len(b)))
                fh.write(b)
                fh.write(np.asarray(emb.entries[u], dtype="<f8").tobytes())
        return
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(f"# tap_point={emb.tap_point} model={emb.model_fingerprint or '-'}\n")
        for u in ids:
            fh.write(u + " " + " ".join(format(x, ".17g") for x in emb.entries[u]) + "\n")


def read_embeddings(path) -> EmbeddingSet:
    with open(path, "rb") as fh:
        data = fh.read()
    if data.startswith(EMB_MAGIC):
        off = len(EMB_MAGIC)
        (mlen,) = struct.unpack_from("<I", data, off)
        off += 4
        tap, _, fp = data[off:off + mlen].decode("utf-8").partition(" ")
        off += mlen
        n, d = struct.unpack_from("<II", data, off)
        off += 8
        entries = {}
        for _ in range(n):
            (ulen,) = struct.unpack_from("<I", data, off)
            off += 4
            u = data[off:off + ulen].decode("utf-8")
            off += ulen
            entries[u] = np.frombuffer(data, dtype="<f8", count=d, offset=off).copy()
            off += 8 * d
        return EmbeddingSet(entries, tap, fp)

    tap, fp = "penultimate", ""
    entries = {}
    for n, line in enumerate(data.decode("utf-8").splitlines(), 1):
        if line.startswith("#"):
            for tok in line[1:].split():
                k, _, v = tok.partition("=")
                if k == "tap_point":
                    tap = v
                elif k == "model" and v != "-":
                    fp = v
            continue
        parts = line.split()
        if not parts:
            continue
        if len(parts) < 2:
            raise FormatError(f"{path}:{n}: embedding line has no values")
        entries[parts[0]] = np.array([float(x) for x in parts[1:]])
    emb = EmbeddingSet(entries, tap, fp)
    emb.validate()
    return emb
