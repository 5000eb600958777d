"""Speaker-embedding network: encoder -> average pool -> embedding FC ->
optional length-normalization/scale -> output classifier."""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np

from ..exceptions import ConfigError, FormatError
from .layers import (AddChannelAxis, AveragePool, Conv2D, Dense, L2NormScale, Layer, ReLU,
                     ResidualBlock, cross_entropy, layer_from_config)

CHECKPOINT_MAGIC = b"DNSV1"
CHECKPOINT_VERSION = 1


FIXED_ALPHA = 12.0
TRAINABLE_ALPHA_INIT = 10.0


def resolve_alpha(alpha, trainable: bool) -> float:
    """``alpha`` if given, else the fixed default or the trainable initial value."""
    if alpha is not None:
        return float(alpha)
    return TRAINABLE_ALPHA_INIT if trainable else FIXED_ALPHA


@dataclass
class ArchConfig:
    """Topology of the network.

    ``encoder="tdnn"`` stacks frame-level FC+ReLU layers of widths ``hidden``.
    ``encoder="resnet"`` is a reduced residual CNN over (freq, time) images:
    a 3x3 stem with ``channels[0]`` maps, then one stage per entry of
    ``channels``/``blocks``; every stage after the first halves both axes.
    """

    feat_dim: int
    num_classes: int
    embedding_dim: int = 32
    encoder: str = "tdnn"
    hidden: tuple = (64, 64)
    channels: tuple = (4, 8, 16, 32)
    blocks: tuple = (1, 1, 1, 1)
    normalize: bool = True
    alpha: float | None = None
    alpha_trainable: bool = False

    def __post_init__(self):
        if self.alpha is None:
            self.alpha = resolve_alpha(None, self.alpha_trainable)

    def to_dict(self):
        d = dict(self.__dict__)
        d["hidden"], d["channels"], d["blocks"] = list(self.hidden), list(self.channels), list(self.blocks)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        for k in ("hidden", "channels", "blocks"):
            if k in d:
                d[k] = tuple(d[k])
        return cls(**d)


@dataclass
class ForwardCache:
    layer_caches: list
    taps: dict = field(default_factory=dict)


class Model:
    """Ordered layer stack with named tap points.

    ``penultimate`` is the embedding FC output; ``post_norm`` is the output of
    the length-normalization layer when the model has one.
    """

    def __init__(self, layers: list[Layer], embed_index: int, norm_index: int | None,
                 arch: ArchConfig | None = None):
        self.layers = layers
        self.embed_index = embed_index
        self.norm_index = norm_index
        self.arch = arch

    @classmethod
    def build(cls, arch: ArchConfig, seed: int = 0) -> "Model":
        if arch.num_classes < 2:
            raise ConfigError("need at least two output classes")
        if arch.feat_dim < 1 or arch.embedding_dim < 1:
            raise ConfigError("feat_dim and embedding_dim must be positive")
        rng = np.random.default_rng(seed)
        layers: list[Layer] = []
        if arch.encoder == "tdnn":
            width = arch.feat_dim
            for h in arch.hidden:
                layers += [Dense(width, h, rng=rng), ReLU()]
                width = h
            layers.append(AveragePool(axes=(1,)))
        elif arch.encoder == "resnet":
            if len(arch.channels) != len(arch.blocks) or not arch.channels:
                raise ConfigError("channels and blocks must be non-empty and equally long")
            c = arch.channels[0]
            layers += [AddChannelAxis(), Conv2D(1, c, 3, rng=rng), ReLU()]
            for stage, (c_out, n_blocks) in enumerate(zip(arch.channels, arch.blocks)):
                for b in range(n_blocks):
                    stride = 2 if (stage > 0 and b == 0) else 1
                    layers.append(ResidualBlock(c, c_out, stride, rng=rng))
                    c = c_out
            layers.append(AveragePool(axes=(2, 3)))
            width = c
        else:
            raise ConfigError(f"unknown encoder {arch.encoder!r}")
        layers.append(Dense(width, arch.embedding_dim, rng=rng))
        embed_index = len(layers) - 1
        norm_index = None
        if arch.normalize:
            layers.append(L2NormScale(arch.alpha, arch.alpha_trainable))
            norm_index = len(layers) - 1
        layers.append(Dense(arch.embedding_dim, arch.num_classes, rng=rng))
        return cls(layers, embed_index, norm_index, arch)

    # -- parameters -------------------------------------------------------

    def named_params(self):
        for i, layer in enumerate(self.layers):
            for k, v in layer.params.items():
                yield f"{i}.{k}", v

    def params(self) -> dict[str, np.ndarray]:
        return dict(self.named_params())

    def num_params(self) -> int:
        return sum(v.size for _, v in self.named_params())

    @property
    def norm_layer(self) -> L2NormScale | None:
        return None if self.norm_index is None else self.layers[self.norm_index]

    @property
    def alpha(self) -> float | None:
        layer = self.norm_layer
        return None if layer is None else layer.alpha

    @property
    def output_layer(self) -> Dense:
        return self.layers[-1]

    @property
    def num_classes(self) -> int:
        return self.output_layer.n_out

    @property
    def embedding_dim(self) -> int:
        return self.layers[self.embed_index].n_out

    def astype(self, dtype):
        for layer in self.layers:
            if isinstance(layer, ResidualBlock):
                for _, child in layer._children():
                    for k in list(child.params):
                        child.params[k] = child.params[k].astype(dtype)
                layer._sync_params()
            else:
                for k in list(layer.params):
                    layer.params[k] = layer.params[k].astype(dtype)
        return self

    # -- computation ------------------------------------------------------

    def forward(self, x, mode: str = "train", stop_at: int | None = None):
        """Run the stack on a batch ``x`` of shape (M, T, D).

        Returns ``(output, cache)``; ``output`` is the logits unless ``stop_at``
        truncates the stack after that layer index.
        """
        if mode not in ("train", "eval"):
            raise ConfigError(f"mode must be 'train' or 'eval', got {mode!r}")
        x = np.asarray(x)
        if x.ndim != 3:
            raise ConfigError(f"expected (M, T, D) input, got shape {x.shape}")
        if self.arch is not None and x.shape[2] != self.arch.feat_dim:
            raise ConfigError(f"model expects feature dim {self.arch.feat_dim}, got {x.shape[2]}")
        caches = []
        taps = {}
        last = len(self.layers) - 1 if stop_at is None else stop_at
        for i, layer in enumerate(self.layers[:last + 1]):
            x, c = layer.forward(x)
            caches.append(c)
            if i == self.embed_index:
                taps["penultimate"] = x
            elif i == self.norm_index:
                taps["post_norm"] = x
        return x, ForwardCache(caches, taps)

    def backward(self, cache: ForwardCache, dlogits):
        grads = {}
        dy = dlogits
        for i in range(len(cache.layer_caches) - 1, -1, -1):
            dy, g = self.layers[i].backward(cache.layer_caches[i], dy)
            for k, v in g.items():
                grads[f"{i}.{k}"] = v
        return grads, dy

    def loss_and_grads(self, x, labels):
        logits, cache = self.forward(x, "train")
        loss, dlogits = cross_entropy(logits, labels)
        grads, _ = self.backward(cache, dlogits)
        return loss, grads, logits

    def embed(self, x, tap_point: str = "post_norm"):
        if tap_point == "penultimate":
            out, _ = self.forward(x, "eval", stop_at=self.embed_index)
        elif tap_point == "post_norm":
            if self.norm_index is None:
                raise ConfigError("model has no normalization layer")
            out, _ = self.forward(x, "eval", stop_at=self.norm_index)
        else:
            raise ConfigError(f"unknown tap point {tap_point!r}")
        return out

    def without_norm(self) -> "Model":
        """Same parameters with the normalization layer removed (baseline path)."""
        if self.norm_index is None:
            return self
        layers = [l for i, l in enumerate(self.layers) if i != self.norm_index]
        arch = None
        if self.arch is not None:
            arch = ArchConfig.from_dict({**self.arch.to_dict(), "normalize": False})
        return Model(layers, self.embed_index, None, arch)

    # -- persistence ------------------------------------------------------

    def describe(self) -> dict:
        return {
            "format": "DNSV1",
            "version": CHECKPOINT_VERSION,
            "arch": self.arch.to_dict() if self.arch is not None else None,
            "layers": [l.config() for l in self.layers],
            "embed_index": self.embed_index,
            "norm_index": self.norm_index,
            "params": {k: list(v.shape) for k, v in self.named_params()},
        }

    def to_bytes(self) -> bytes:
        header = json.dumps({k: v for k, v in self.describe().items() if k != "params"},
                            sort_keys=True).encode("utf-8")
        parts = [CHECKPOINT_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(header)), header]
        named = list(self.named_params())
        parts.append(struct.pack("<I", len(named)))
        for name, v in named:
            key = name.encode("utf-8")
            parts.append(struct.pack("<H", len(key)))
            parts.append(key)
            parts.append(struct.pack("<I", v.ndim))
            parts.append(struct.pack(f"<{v.ndim}I", *v.shape))
            parts.append(np.ascontiguousarray(v, dtype="<f8").tobytes())
        return b"".join(parts)

    def fingerprint(self) -> str:
        return hashlib.sha256(self.to_bytes()).hexdigest()[:16]

    @classmethod
    def from_bytes(cls, data: bytes) -> "Model":
        if not data.startswith(CHECKPOINT_MAGIC):
            raise FormatError("not a DNSV1 checkpoint")
        off = len(CHECKPOINT_MAGIC)
        version, hlen = struct.unpack_from("<II", data, off)
        off += 8
        if version != CHECKPOINT_VERSION:
            raise FormatError(f"unsupported checkpoint version {version}")
        header = json.loads(data[off:off + hlen].decode("utf-8"))
        off += hlen
        layers = [layer_from_config(cfg) for cfg in header["layers"]]
        arch = ArchConfig.from_dict(header["arch"]) if header.get("arch") else None
        model = cls(layers, header["embed_index"], header["norm_index"], arch)
        (n,) = struct.unpack_from("<I", data, off)
        off += 4
        targets = model.params()
        for _ in range(n):
            (klen,) = struct.unpack_from("<H", data, off)
            off += 2
            name = data[off:off + klen].decode("utf-8")
            off += klen
            (ndim,) = struct.unpack_from("<I", data, off)
            off += 4
            shape = struct.unpack_from(f"<{ndim}I", data, off)
            off += 4 * ndim
            count = int(np.prod(shape)) if ndim else 1
            arr = np.frombuffer(data, dtype="<f8", count=count, offset=off).reshape(shape)
            off += 8 * count
            if name not in targets or targets[name].shape != arr.shape:
                raise FormatError(f"checkpoint parameter {name} does not match architecture")
            targets[name][...] = arr
        return model

    def save(self, path, sidecar: bool = True) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())
        if sidecar:
            with open(f"{path}.json", "w", encoding="utf-8") as fh:
                json.dump({**self.describe(), "fingerprint": self.fingerprint(),
                           "alpha": self.alpha}, fh, indent=2, sort_keys=True)
                fh.write("\n")

    @classmethod
    def load(cls, path) -> "Model":
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())
