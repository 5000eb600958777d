import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from dnsv.exceptions import DegenerateNorm
from dnsv.nn.layers import (AddChannelAxis, AveragePool, Conv2D, Dense, L2NormScale, ReLU,
                            ResidualBlock, cross_entropy, l2norm_scale_backward,
                            l2norm_scale_forward)
from gradcheck import numeric_grad, rel_error

TOL = 1e-4


class TestL2NormScale:
    def test_345(self):
        np.testing.assert_allclose(l2norm_scale_forward(np.array([[3.0, 4.0]]), 1.0), [[0.6, 0.8]])

    def test_unit_to_alpha(self):
        np.testing.assert_allclose(l2norm_scale_forward(np.array([[1.0, 0, 0]]), 12.0), [[12, 0, 0]])

    def test_zero_vector(self):
        with pytest.raises(DegenerateNorm):
            l2norm_scale_forward(np.zeros((1, 2)), 1.0)
        with pytest.raises(DegenerateNorm):
            l2norm_scale_backward(np.zeros((1, 2)), 1.0, np.ones((1, 2)))

    def _fd(self, x, alpha, dy):
        x = np.array(x, dtype=float)
        a = np.array([alpha], dtype=float)
        f = lambda: float(np.sum(l2norm_scale_forward(x, a[0]) * dy))
        return numeric_grad(f, x), numeric_grad(f, a)[0]

    def test_backward_example_orthogonal(self):
        x, dy = np.array([[1.0, 0.0]]), np.array([[0.0, 1.0]])
        dx, da = l2norm_scale_backward(x, 1.0, dy)
        fdx, fda = self._fd(x, 1.0, dy)
        np.testing.assert_allclose(fdx, [[0.0, 1.0]], atol=1e-8)
        assert abs(fda) < 1e-8
        np.testing.assert_allclose(dx, [[0.0, 1.0]], atol=1e-12)
        assert da == pytest.approx(0.0, abs=1e-12)

    def test_backward_dalpha_example(self):
        x, dy = np.array([[3.0, 4.0]]), np.array([[1.0, 1.0]])
        _, fda = self._fd(x, 2.0, dy)
        assert fda == pytest.approx(1.4, abs=1e-7)
        assert l2norm_scale_backward(x, 2.0, dy)[1] == pytest.approx(1.4, abs=1e-12)

    def test_radial_upstream_gives_zero_dx(self, rng):
        x = rng.normal(size=(4, 6))
        dx, _ = l2norm_scale_backward(x, 3.0, 2.5 * x)
        np.testing.assert_allclose(dx, 0, atol=1e-12)

    @given(arrays(np.float64, (3, 5), elements=st.floats(-10, 10)), st.floats(0.1, 50))
    @settings(max_examples=50, deadline=None)
    def test_norm_equals_alpha(self, x, alpha):
        if np.any(np.linalg.norm(x, axis=1) < 1e-3):
            return
        y = l2norm_scale_forward(x, alpha)
        np.testing.assert_allclose(np.linalg.norm(y, axis=1), alpha, rtol=1e-9)

    def test_trainable_alpha_softplus(self):
        layer = L2NormScale(10.0, trainable=True)
        assert layer.alpha == pytest.approx(10.0, rel=1e-12)
        assert "alpha_raw" in layer.params
        assert L2NormScale(10.0).params == {}


class TestCrossEntropy:
    def test_uniform(self):
        loss, _ = cross_entropy(np.zeros((3, 10)), [0, 4, 9])
        assert loss == pytest.approx(math.log(10), abs=1e-12)

    def test_hand_example(self):
        loss, _ = cross_entropy(np.array([[0.0, math.log(3)]]), [0])
        assert loss == pytest.approx(math.log(4), abs=1e-12)

    def test_margin_monotone(self):
        losses = [cross_entropy(np.array([[m, 0.0, 0.0]]), [0])[0] for m in range(0, 60, 5)]
        assert all(a > b for a, b in zip(losses, losses[1:]))
        assert losses[-1] < 1e-20

    def test_large_logits_stable(self):
        loss, d = cross_entropy(np.array([[1000.0, -1000.0]]), [1])
        assert loss == pytest.approx(2000.0) and np.all(np.isfinite(d))

    def test_gradient(self, rng):
        logits = rng.normal(size=(5, 7))
        labels = rng.integers(0, 7, 5)
        _, d = cross_entropy(logits, labels)
        num = numeric_grad(lambda: cross_entropy(logits, labels)[0], logits)
        assert rel_error(d, num) < TOL


class TestAveragePool:
    def test_equal_rows(self):
        y, _ = AveragePool((1,)).forward(np.tile([[1.0, 2.0, 3.0]], (1, 4, 1)))
        np.testing.assert_allclose(y, [[1, 2, 3]])

    def test_two_rows(self):
        y, _ = AveragePool((1,)).forward(np.array([[[0.0, 2.0], [2.0, 0.0]]]))
        np.testing.assert_allclose(y, [[1, 1]])

    def test_permutation_invariant(self, rng):
        x = rng.normal(size=(2, 9, 3))
        y1, _ = AveragePool((1,)).forward(x)
        y2, _ = AveragePool((1,)).forward(x[:, rng.permutation(9)])
        np.testing.assert_allclose(y1, y2, atol=1e-12)


def _check_layer(layer, x, rng):
    """Compare analytic input and parameter gradients to finite differences."""
    y, cache = layer.forward(x)
    w = rng.normal(size=y.shape)
    dx, grads = layer.backward(cache, w)
    f = lambda: float(np.sum(layer.forward(x)[0] * w))
    errs = {"x": rel_error(dx, numeric_grad(f, x))}
    for name, p in layer.params.items():
        errs[name] = rel_error(grads[name], numeric_grad(f, p))
    return errs


def _random_layer(kind, rng):
    m = int(rng.integers(1, 4))
    if kind == "dense":
        n_in, n_out = rng.integers(1, 6, 2)
        return Dense(n_in, n_out, rng=rng), rng.normal(size=(m, int(rng.integers(1, 5)), n_in))
    if kind == "relu":
        x = rng.normal(size=(m, 4, 3))
        x[np.abs(x) < 1e-3] = 0.5
        return ReLU(), x
    if kind == "avgpool":
        return AveragePool((1,)), rng.normal(size=(m, int(rng.integers(1, 6)), 3))
    if kind == "avgpool2d":
        return AveragePool((2, 3)), rng.normal(size=(m, 2, 3, 4))
    if kind == "l2norm":
        return L2NormScale(float(rng.uniform(0.5, 20))), rng.normal(size=(m, int(rng.integers(2, 6))))
    if kind == "l2norm_trainable":
        return L2NormScale(float(rng.uniform(0.5, 20)), trainable=True), rng.normal(size=(m, 4))
    if kind == "conv":
        c_in, c_out = rng.integers(1, 4, 2)
        stride = int(rng.integers(1, 3))
        k = int(rng.choice([1, 3]))
        h, w = rng.integers(3, 7, 2)
        return Conv2D(c_in, c_out, k, stride, rng=rng), rng.normal(size=(m, c_in, h, w))
    if kind == "resblock":
        c_in = int(rng.integers(1, 3))
        c_out = int(rng.integers(1, 4))
        stride = int(rng.integers(1, 3))
        return ResidualBlock(c_in, c_out, stride, rng=rng), rng.normal(size=(m, c_in, 5, 6))
    if kind == "to_image":
        return AddChannelAxis(), rng.normal(size=(m, 5, 3))
    raise ValueError(kind)


KINDS = ["dense", "relu", "avgpool", "avgpool2d", "l2norm", "l2norm_trainable", "conv",
         "resblock", "to_image"]


@pytest.mark.parametrize("kind", KINDS)
@pytest.mark.parametrize("seed", range(5))
def test_layer_gradients(kind, seed):
    rng = np.random.default_rng(100 * seed + KINDS.index(kind))
    layer, x = _random_layer(kind, rng)
    errs = _check_layer(layer, x, rng)
    assert max(errs.values()) < TOL, errs


def test_conv_matches_direct_sum(rng):
    conv = Conv2D(2, 3, 3, stride=2, rng=rng)
    conv.params["b"] = rng.normal(size=3)
    x = rng.normal(size=(1, 2, 5, 6))
    y, _ = conv.forward(x)
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    W, b = conv.params["W"], conv.params["b"]
    for o in range(3):
        for i in range(y.shape[2]):
            for j in range(y.shape[3]):
                patch = xp[0, :, 2 * i:2 * i + 3, 2 * j:2 * j + 3]
                assert y[0, o, i, j] == pytest.approx(np.sum(patch * W[o]) + b[o], abs=1e-12)
