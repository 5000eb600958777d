"""Layers with hand-written backpropagation.

Every layer follows the same protocol::

    y, cache = layer.forward(x)
    dx, grads = layer.backward(cache, dy)

``grads`` maps parameter names to arrays shaped like ``layer.params``.
Layers never keep per-call state, so one instance can serve concurrent
evaluation-mode forwards.
"""

from __future__ import annotations

import numpy as np

from ..exceptions import ConfigError, DegenerateNorm

NORM_EPS = 1e-12


def softplus(z):
    return np.logaddexp(0.0, z)


def inverse_softplus(a: float) -> float:
    if a <= 0:
        raise ConfigError("softplus output must be positive")
    return float(a + np.log(-np.expm1(-a)))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def kaiming_uniform(rng, shape, fan_in):
    bound = np.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}

    def forward(self, x):
        raise NotImplementedError

    def backward(self, cache, dy):
        raise NotImplementedError

    def config(self) -> dict:
        return {"kind": self.kind}

    def output_shape(self, shape):
        return shape

    def __repr__(self):
        cfg = ", ".join(f"{k}={v}" for k, v in self.config().items() if k != "kind")
        return f"{type(self).__name__}({cfg})"


class Dense(Layer):
    """Affine map on the last axis; works on (..., in) inputs of any rank.

    Weights are stored as ``(out, in)`` so the output classifier's matrix
    is laid out one row per class.
    """

    kind = "dense"

    def __init__(self, n_in, n_out, rng=None, bias=True):
        super().__init__()
        self.n_in, self.n_out, self.bias = int(n_in), int(n_out), bool(bias)
        rng = rng if rng is not None else np.random.default_rng(0)
        self.params["W"] = kaiming_uniform(rng, (self.n_out, self.n_in), self.n_in)
        if self.bias:
            self.params["b"] = np.zeros(self.n_out)

    def forward(self, x):
        if x.shape[-1] != self.n_in:
            raise ConfigError(f"dense layer expects last dim {self.n_in}, got {x.shape[-1]}")
        y = x @ self.params["W"].T
        if self.bias:
            y = y + self.params["b"]
        return y, x

    def backward(self, x, dy):
        x2 = x.reshape(-1, self.n_in)
        dy2 = dy.reshape(-1, self.n_out)
        grads = {"W": dy2.T @ x2}
        if self.bias:
            grads["b"] = dy2.sum(axis=0)
        return dy @ self.params["W"], grads

    def config(self):
        return {"kind": self.kind, "n_in": self.n_in, "n_out": self.n_out, "bias": self.bias}

    def output_shape(self, shape):
        return (*shape[:-1], self.n_out)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x):
        mask = x > 0
        return x * mask, mask

    def backward(self, mask, dy):
        return dy * mask, {}


class AveragePool(Layer):
    """Mean over the given axes (time for frame-level stacks; freq+time for CNNs)."""

    kind = "avgpool"

    def __init__(self, axes=(1,)):
        super().__init__()
        self.axes = tuple(int(a) for a in axes)

    def forward(self, x):
        return x.mean(axis=self.axes), x.shape

    def backward(self, shape, dy):
        count = int(np.prod([shape[a] for a in self.axes]))
        expanded = np.expand_dims(dy, self.axes)
        return np.broadcast_to(expanded, shape) / count, {}

    def config(self):
        return {"kind": self.kind, "axes": list(self.axes)}

    def output_shape(self, shape):
        return tuple(s for i, s in enumerate(shape) if i not in self.axes)


def l2norm_scale_forward(x, alpha):
    """Rescale each row of ``x`` to length ``alpha``."""
    x = np.asarray(x)
    if not np.issubdtype(x.dtype, np.floating):
        x = x.astype(np.float64)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms <= NORM_EPS):
        bad = np.flatnonzero(norms.reshape(-1) <= NORM_EPS)
        raise DegenerateNorm(f"embedding norm <= {NORM_EPS} at rows {bad[:10].tolist()}")
    return alpha * x / norms


def l2norm_scale_backward(x, alpha, dy):
    """Gradients of ``alpha * x/|x|`` w.r.t. ``x`` and ``alpha``.

    dx = (alpha/|x|) (dy - xhat (xhat . dy)); d_alpha = sum over rows of xhat . dy
    """
    x = np.asarray(x)
    norms = np.linalg.norm(x, axis=-1, keepdims=True)
    if np.any(norms <= NORM_EPS):
        raise DegenerateNorm(f"embedding norm <= {NORM_EPS}")
    xhat = x / norms
    proj = np.sum(xhat * dy, axis=-1, keepdims=True)
    dx = (alpha / norms) * (dy - xhat * proj)
    return dx, float(np.sum(proj))


class L2NormScale(Layer):
    """Length normalization followed by a scale to radius ``alpha``.

    With ``trainable=True`` the radius is ``softplus(alpha_raw)`` so it stays
    positive; otherwise it is a fixed hyper-parameter with no gradient.
    """

    kind = "l2norm_scale"

    def __init__(self, alpha=12.0, trainable=False):
        super().__init__()
        if alpha <= 0:
            raise ConfigError("alpha must be positive")
        self.trainable = bool(trainable)
        self._fixed_alpha = float(alpha)
        if self.trainable:
            self.params["alpha_raw"] = np.array([inverse_softplus(alpha)])

    @property
    def alpha(self) -> float:
        if self.trainable:
            return float(softplus(self.params["alpha_raw"][0]))
        return self._fixed_alpha

    def forward(self, x):
        return l2norm_scale_forward(x, self.alpha), x

    def backward(self, x, dy):
        dx, d_alpha = l2norm_scale_backward(x, self.alpha, dy)
        grads = {}
        if self.trainable:
            grads["alpha_raw"] = np.array([d_alpha * _sigmoid(self.params["alpha_raw"][0])])
        return dx, grads

    def config(self):
        return {"kind": self.kind, "alpha": self.alpha, "trainable": self.trainable}


def _im2col(x, kh, kw, stride):
    # x is already padded: (M, C, H, W) -> (M, Ho, Wo, C*kh*kw)
    win = np.lib.stride_tricks.sliding_window_view(x, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    m, c, ho, wo = win.shape[:4]
    return win.transpose(0, 2, 3, 1, 4, 5).reshape(m, ho, wo, c * kh * kw)


class Conv2D(Layer):
    """2-D convolution over (M, C, freq, time) tensors, zero 'same'-style padding."""

    kind = "conv2d"

    def __init__(self, c_in, c_out, kernel=3, stride=1, padding=None, rng=None, bias=True):
        super().__init__()
        self.c_in, self.c_out = int(c_in), int(c_out)
        self.kernel, self.stride = int(kernel), int(stride)
        self.padding = self.kernel // 2 if padding is None else int(padding)
        self.bias = bool(bias)
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = self.c_in * self.kernel * self.kernel
        self.params["W"] = kaiming_uniform(rng, (self.c_out, self.c_in, self.kernel, self.kernel), fan_in)
        if self.bias:
            self.params["b"] = np.zeros(self.c_out)

    def _out_hw(self, h, w):
        k, s, p = self.kernel, self.stride, self.padding
        return (h + 2 * p - k) // s + 1, (w + 2 * p - k) // s + 1

    def forward(self, x):
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ConfigError(f"conv2d expects (M, {self.c_in}, H, W), got {x.shape}")
        p = self.padding
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        if xp.shape[2] < self.kernel or xp.shape[3] < self.kernel:
            raise ConfigError(f"input {x.shape} too small for kernel {self.kernel}")
        cols = _im2col(xp, self.kernel, self.kernel, self.stride)
        wmat = self.params["W"].reshape(self.c_out, -1)
        y = cols @ wmat.T
        if self.bias:
            y = y + self.params["b"]
        return y.transpose(0, 3, 1, 2), (cols, x.shape)

    def backward(self, cache, dy):
        cols, xshape = cache
        m, _, h, w = xshape
        k, s, p = self.kernel, self.stride, self.padding
        dy_t = dy.transpose(0, 2, 3, 1)  # (M, Ho, Wo, Cout)
        ho, wo = dy_t.shape[1:3]
        grads = {"W": (dy_t.reshape(-1, self.c_out).T @ cols.reshape(-1, cols.shape[-1]))
                 .reshape(self.params["W"].shape)}
        if self.bias:
            grads["b"] = dy_t.sum(axis=(0, 1, 2))
        dcols = (dy_t @ self.params["W"].reshape(self.c_out, -1)).reshape(m, ho, wo, self.c_in, k, k)
        dxp = np.zeros((m, self.c_in, h + 2 * p, w + 2 * p), dtype=dy.dtype)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + s * ho:s, j:j + s * wo:s] += dcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        dx = dxp[:, :, p:p + h, p:p + w] if p else dxp
        return dx, grads

    def config(self):
        return {"kind": self.kind, "c_in": self.c_in, "c_out": self.c_out, "kernel": self.kernel,
                "stride": self.stride, "padding": self.padding, "bias": self.bias}

    def output_shape(self, shape):
        ho, wo = self._out_hw(shape[2], shape[3])
        return (shape[0], self.c_out, ho, wo)


class ResidualBlock(Layer):
    """Two 3x3 convolutions with an identity or 1x1 projection shortcut.

    ReLU is applied after the first conv and after the addition. There is no
    batch normalization.
    """

    kind = "resblock"

    def __init__(self, c_in, c_out, stride=1, rng=None):
        super().__init__()
        rng = rng if rng is not None else np.random.default_rng(0)
        self.c_in, self.c_out, self.stride = int(c_in), int(c_out), int(stride)
        self.conv1 = Conv2D(c_in, c_out, 3, stride, rng=rng)
        self.conv2 = Conv2D(c_out, c_out, 3, 1, rng=rng)
        self.proj = None
        if stride != 1 or c_in != c_out:
            self.proj = Conv2D(c_in, c_out, 1, stride, padding=0, rng=rng, bias=False)
        self._sync_params()

    def _children(self):
        out = [("conv1", self.conv1), ("conv2", self.conv2)]
        if self.proj is not None:
            out.append(("proj", self.proj))
        return out

    def _sync_params(self):
        # Share arrays with the children so in-place updates propagate.
        self.params = {f"{name}.{k}": v for name, child in self._children() for k, v in child.params.items()}

    def set_param(self, key, value):
        name, k = key.split(".", 1)
        getattr(self, name).params[k] = value
        self._sync_params()

    def forward(self, x):
        h1, c1 = self.conv1.forward(x)
        mask1 = h1 > 0
        h2, c2 = self.conv2.forward(h1 * mask1)
        if self.proj is not None:
            sc, cp = self.proj.forward(x)
        else:
            sc, cp = x, None
        z = h2 + sc
        mask2 = z > 0
        return z * mask2, (c1, mask1, c2, cp, mask2)

    def backward(self, cache, dy):
        c1, mask1, c2, cp, mask2 = cache
        dz = dy * mask2
        dh1, g2 = self.conv2.backward(c2, dz)
        dx, g1 = self.conv1.backward(c1, dh1 * mask1)
        grads = {f"conv1.{k}": v for k, v in g1.items()}
        grads.update({f"conv2.{k}": v for k, v in g2.items()})
        if self.proj is not None:
            dsc, gp = self.proj.backward(cp, dz)
            grads.update({f"proj.{k}": v for k, v in gp.items()})
            dx = dx + dsc
        else:
            dx = dx + dz
        return dx, grads

    def config(self):
        return {"kind": self.kind, "c_in": self.c_in, "c_out": self.c_out, "stride": self.stride}

    def output_shape(self, shape):
        return self.conv2.output_shape(self.conv1.output_shape(shape))


class AddChannelAxis(Layer):
    """(M, T, D) frame sequences -> (M, 1, D, T) single-channel images."""

    kind = "to_image"

    def forward(self, x):
        return x.transpose(0, 2, 1)[:, None, :, :], None

    def backward(self, cache, dy):
        return dy[:, 0].transpose(0, 2, 1), {}

    def output_shape(self, shape):
        return (shape[0], 1, shape[2], shape[1])


def cross_entropy(logits, labels):
    """Mean softmax cross-entropy and its gradient w.r.t. the logits."""
    logits = np.asarray(logits)
    labels = np.asarray(labels, dtype=np.int64)
    m = logits.shape[0]
    if labels.shape != (m,):
        raise ConfigError("labels must be a vector with one entry per logit row")
    rows = np.arange(m)
    top = np.argmax(logits, axis=1)
    shifted = logits - logits[rows, top][:, None]
    rest = np.exp(shifted)
    rest[rows, top] = 0.0
    # log1p keeps precision when one class dominates
    log_z = np.log1p(rest.sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    loss = -float(np.mean(log_p[rows, labels]))
    dlogits = np.exp(log_p)
    dlogits[rows, labels] -= 1.0
    return loss, dlogits / m


def layer_from_config(cfg: dict, rng=None) -> Layer:
    kind = cfg["kind"]
    if kind == "dense":
        return Dense(cfg["n_in"], cfg["n_out"], rng=rng, bias=cfg.get("bias", True))
    if kind == "relu":
        return ReLU()
    if kind == "avgpool":
        return AveragePool(cfg["axes"])
    if kind == "l2norm_scale":
        return L2NormScale(cfg["alpha"], cfg["trainable"])
    if kind == "conv2d":
        return Conv2D(cfg["c_in"], cfg["c_out"], cfg["kernel"], cfg["stride"], cfg["padding"],
                      rng=rng, bias=cfg.get("bias", True))
    if kind == "resblock":
        return ResidualBlock(cfg["c_in"], cfg["c_out"], cfg["stride"], rng=rng)
    if kind == "to_image":
        return AddChannelAxis()
    raise ConfigError(f"unknown layer kind {kind!r}")
