"""Autodiff engine: finite-difference gradients for every op, Adam, layers."""

import numpy as np
import pytest

from wavebridge import nn
from wavebridge.dsp import StftParams


def _param(rng, *shape, lo=None):
    data = rng.standard_normal(shape)
    if lo is not None:
        # keep values away from kinks (abs, maximum) and log's domain edge
        data = np.sign(data) * (np.abs(data) + lo)
    return nn.Tensor(data, requires_grad=True)


def _check(loss_fn, params, rng, tol=1e-5, n=None):
    total = sum(p.data.size for p in params)
    worst = nn.grad_check(loss_fn, params, rng, n_samples=n or total)
    assert worst < tol, f"max rel grad error {worst:.3e}"


# ------------------------------------------------------------ per-op gradients

def test_grad_add_broadcast(rng):
    a = _param(rng, 3, 4)
    b = _param(rng, 4)
    _check(lambda: nn.tsum(nn.mul(nn.add(a, b), nn.add(a, b))), [a, b], rng)


def test_grad_mul_broadcast(rng):
    a = _param(rng, 2, 3, 4)
    b = _param(rng, 3, 1)
    _check(lambda: nn.tsum(nn.mul(a, b)), [a, b], rng)


def test_grad_scalar_mixing(rng):
    a = _param(rng, 5)
    _check(lambda: nn.tsum((2.0 * a - 1.0) * a + (1.0 - a)), [a], rng)


def test_grad_neg_pow_sqrt(rng):
    a = _param(rng, 6, lo=0.5)
    _check(lambda: nn.tsum(nn.sqrt(nn.mul(a, a))), [a], rng)
    _check(lambda: nn.tsum(nn.pow_const(nn.mul(a, a), 1.5)), [a], rng)
    _check(lambda: nn.tsum(nn.neg(a)), [a], rng)


def test_grad_exp_log_tanh(rng):
    a = _param(rng, 8, lo=0.3)
    _check(lambda: nn.tsum(nn.exp(nn.tanh(a))), [a], rng)
    _check(lambda: nn.tsum(nn.log(nn.mul(a, a))), [a], rng)


def test_grad_abs_and_maximum_away_from_kinks(rng):
    a = _param(rng, 10, lo=0.5)
    _check(lambda: nn.tsum(nn.absolute(a)), [a], rng)
    _check(lambda: nn.tsum(nn.maximum_const(a, 0.1)), [a], rng)


def test_grad_reductions(rng):
    a = _param(rng, 3, 5)
    _check(lambda: nn.tsum(nn.mul(nn.tsum(a, axis=1, keepdims=True), a)), [a], rng)
    _check(lambda: nn.tmean(nn.mul(a, a)), [a], rng)
    _check(lambda: nn.tsum(nn.mul(nn.tmean(a, axis=0), nn.tmean(a, axis=0))), [a], rng)


def test_grad_matmul(rng):
    a = _param(rng, 4, 3)
    b = _param(rng, 3, 2)
    _check(lambda: nn.tsum(nn.mul(nn.matmul(a, b), nn.matmul(a, b))), [a, b], rng)


def test_grad_reshape_slice_concat(rng):
    a = _param(rng, 2, 6)
    b = _param(rng, 2, 3)
    def loss():
        r = nn.reshape(a, (3, 4))
        s = nn.slice_last(r, 1, 3)
        c = nn.concat_last([s, s])
        return nn.tsum(nn.mul(c, c)) + nn.tsum(nn.concat_last([a, b]))
    _check(loss, [a, b], rng)


def test_grad_channel_ops(rng):
    a = _param(rng, 2, 4, 5)
    b = _param(rng, 2, 2, 5)
    def loss():
        s = nn.slice_channels(a, 1, 3)
        c = nn.concat_channels([s, b])
        return nn.tsum(nn.mul(c, c))
    _check(loss, [a, b], rng)


def test_grad_pad_reflect(rng):
    a = _param(rng, 2, 2, 7)
    _check(lambda: nn.tsum(nn.mul(nn.pad_reflect_last(a, 3, 2), nn.pad_reflect_last(a, 3, 2))), [a], rng)


def test_pad_reflect_matches_numpy(rng):
    x = rng.standard_normal((1, 2, 9))
    got = nn.pad_reflect_last(nn.Tensor(x), 3, 4).data
    want = np.pad(x, ((0, 0), (0, 0), (3, 4)), mode="reflect")
    assert np.array_equal(got, want)


def test_grad_conv1d(rng):
    x = _param(rng, 2, 3, 14)
    w = _param(rng, 4, 3, 5)
    b = _param(rng, 4)
    for stride, dilation in ((1, 1), (2, 1), (1, 2), (3, 2)):
        _check(lambda: nn.tsum(nn.mul(nn.conv1d(x, w, b, stride, dilation),
                                      nn.conv1d(x, w, b, stride, dilation))),
               [x, w, b], rng, n=80)


def test_grad_conv_transpose1d(rng):
    x = _param(rng, 2, 3, 7)
    w = _param(rng, 3, 2, 4)
    b = _param(rng, 2)
    for stride in (1, 2, 4):
        _check(lambda: nn.tsum(nn.mul(nn.conv_transpose1d(x, w, b, stride),
                                      nn.conv_transpose1d(x, w, b, stride))),
               [x, w, b], rng, n=60)


def test_grad_stft_mag(rng):
    x = _param(rng, 2, 300)
    params = StftParams(128, 32)
    _check(lambda: nn.tsum(nn.mul(nn.stft_mag(x, params), nn.stft_mag(x, params))),
           [x], rng, n=100, tol=1e-4)


def test_stft_mag_zero_input_backward_is_finite():
    x = nn.Tensor(np.zeros((1, 256)), requires_grad=True)
    loss = nn.tsum(nn.stft_mag(x, StftParams(128, 64)))
    nn.backward(loss)
    assert np.all(np.isfinite(x.grad))


def test_stft_mag_too_short_raises():
    with pytest.raises(ValueError):
        nn.stft_mag(nn.Tensor(np.zeros((1, 100))), StftParams(128, 64))


def test_grad_mse(rng):
    a = _param(rng, 3, 4)
    b = _param(rng, 3, 4)
    _check(lambda: nn.mse(a, b), [a, b], rng)


def test_backward_requires_scalar(rng):
    a = _param(rng, 3)
    with pytest.raises(ValueError):
        nn.backward(nn.mul(a, a))


def test_grad_accumulates_over_reuse(rng):
    # the same tensor feeding two branches must sum its gradients
    a = nn.Tensor(np.array([2.0]), requires_grad=True)
    loss = nn.add(nn.mul(a, a), nn.mul(a, nn.Tensor(np.array([3.0]))))
    nn.backward(loss)
    assert a.grad[0] == pytest.approx(2 * 2.0 + 3.0)


# ---------------------------------------------------------------------- Adam

def test_adam_none_grad_is_noop(rng):
    p = _param(rng, 4)
    before = p.data.copy()
    opt = nn.Adam([p], lr=0.1)
    opt.zero_grad()
    opt.step()
    assert np.array_equal(p.data, before)


def test_adam_rejects_nonfinite_gradient(rng):
    p = _param(rng, 3)
    p.name = "enc.w"
    p.grad = np.array([0.0, np.nan, 1.0])
    opt = nn.Adam([p], lr=0.1)
    with pytest.raises(FloatingPointError, match="enc.w"):
        opt.step()


def test_adam_minimizes_quadratic(rng):
    target = np.array([1.0, -2.0, 0.5, 3.0])
    p = nn.Tensor(np.zeros(4), requires_grad=True)
    opt = nn.Adam([p], lr=0.05)
    for _ in range(400):
        opt.zero_grad()
        d = p - nn.Tensor(target)
        nn.backward(nn.tsum(nn.mul(d, d)))
        opt.step()
    assert np.max(np.abs(p.data - target)) < 1e-3


# -------------------------------------------------------------------- layers

def test_conv1d_layer_same_length(rng):
    for length in (16, 17, 31):
        for stride in (1, 2, 4):
            layer = nn.Conv1d(3, 5, 4, rng, stride=stride)
            y = layer(nn.Tensor(rng.standard_normal((2, 3, length))))
            assert y.shape == (2, 5, -(-length // stride))


def test_conv1d_layer_zero_init(rng):
    layer = nn.Conv1d(2, 3, 3, rng, zero_init=True)
    y = layer(nn.Tensor(rng.standard_normal((1, 2, 10))))
    assert np.all(y.data == 0.0)


def test_convt1d_layer_exact_upsample(rng):
    for stride, k in ((2, 2), (2, 4), (4, 5)):
        layer = nn.ConvT1d(3, 2, k, rng, stride=stride)
        y = layer(nn.Tensor(rng.standard_normal((2, 3, 9))))
        assert y.shape == (2, 2, 9 * stride)
    with pytest.raises(ValueError):
        nn.ConvT1d(3, 2, 1, rng, stride=2)


def test_linear_layer(rng):
    layer = nn.Linear(4, 2, rng)
    x = rng.standard_normal((5, 4))
    y = layer(nn.Tensor(x))
    assert y.shape == (5, 2)
    want = x @ layer.w.data + layer.b.data
    assert np.max(np.abs(y.data - want)) < 1e-12


def test_named_params_prefixes(rng):
    layer = nn.Conv1d(1, 1, 3, rng)
    names = [n for n, _ in layer.named_params("enc.0")]
    assert names == ["enc.0.w", "enc.0.b"]
    assert len(layer.params()) == 2


def test_small_net_end_to_end_gradients(rng):
    conv = nn.Conv1d(1, 3, 4, rng, stride=2)
    deconv = nn.ConvT1d(3, 1, 4, rng, stride=2)
    x = nn.Tensor(rng.standard_normal((2, 1, 16)))
    target = nn.Tensor(rng.standard_normal((2, 1, 16)))
    params = conv.params() + deconv.params()
    def loss():
        return nn.mse(deconv(nn.tanh(conv(x))), target)
    worst = nn.grad_check(loss, params, rng, n_samples=sum(p.data.size for p in params))
    assert worst < 1e-5
