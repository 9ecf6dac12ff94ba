"""Convolution kernels: backend agreement, adjoint identities, env selection."""

import subprocess
import sys

import numpy as np
import pytest

from wavebridge import kernels

CONFIGS = [
    # (n, ci, co, length, k, stride, dilation)
    (1, 1, 1, 16, 3, 1, 1),
    (2, 3, 4, 32, 5, 1, 1),
    (2, 3, 4, 33, 5, 2, 1),
    (1, 2, 2, 40, 4, 4, 1),
    (2, 2, 3, 48, 3, 1, 2),
    (1, 4, 2, 50, 5, 3, 2),
    (3, 1, 5, 21, 1, 1, 1),
]


def _rand(rng, *shape):
    return rng.standard_normal(shape)


def test_out_len_matches_forward(rng):
    for n, ci, co, length, k, stride, dilation in CONFIGS:
        x = _rand(rng, n, ci, length)
        w = _rand(rng, co, ci, k)
        y = kernels.conv1d_fwd(x, w, stride, dilation)
        assert y.shape == (n, co, kernels.conv1d_out_len(length, k, stride, dilation))


def test_conv1d_matches_correlate(rng):
    # single channel, unit stride: plain valid cross-correlation
    x = _rand(rng, 1, 1, 64)
    w = _rand(rng, 1, 1, 7)
    y = kernels.conv1d_fwd(x, w, 1, 1)[0, 0]
    want = np.correlate(x[0, 0], w[0, 0], mode="valid")
    assert np.max(np.abs(y - want)) < 1e-12


def test_convt1d_matches_conv1d_grad_x(rng):
    # Transposed convolution is exactly the conv1d input gradient when the
    # lengths line up: a conv1d weight (co, ci, k) read with the convt layout
    # (in, out, k) already maps the gy channels back to the ci channels.
    for stride, k in ((1, 3), (2, 4), (4, 4)):
        lo, co, ci, n = 10, 3, 2, 2
        gy = _rand(rng, n, co, lo)
        w = _rand(rng, co, ci, k)
        length = (lo - 1) * stride + k
        via_grad = kernels.conv1d_grad_x(gy, w, stride, 1, length)
        via_convt = kernels.convt1d_fwd(gy, w, stride)
        assert via_convt.shape == via_grad.shape
        assert np.max(np.abs(via_convt - via_grad)) < 1e-12


def test_conv1d_adjoint_identities(rng):
    for n, ci, co, length, k, stride, dilation in CONFIGS:
        x = _rand(rng, n, ci, length)
        w = _rand(rng, co, ci, k)
        y = kernels.conv1d_fwd(x, w, stride, dilation)
        gy = _rand(rng, *y.shape)
        lhs = np.sum(y * gy)
        gx = kernels.conv1d_grad_x(gy, w, stride, dilation, length)
        gw = kernels.conv1d_grad_w(x, gy, stride, dilation, k)
        assert lhs == pytest.approx(np.sum(x * gx), rel=1e-10)
        assert lhs == pytest.approx(np.sum(w * gw), rel=1e-10)


def test_convt1d_adjoint_identities(rng):
    for stride, k in ((1, 3), (2, 2), (2, 4), (4, 5)):
        n, ci, co, length = 2, 3, 2, 12
        x = _rand(rng, n, ci, length)
        w = _rand(rng, ci, co, k)
        y = kernels.convt1d_fwd(x, w, stride)
        assert y.shape == (n, co, (length - 1) * stride + k)
        gy = _rand(rng, *y.shape)
        lhs = np.sum(y * gy)
        gx = kernels.convt1d_grad_x(gy, w, stride)
        gw = kernels.convt1d_grad_w(x, gy, stride, k)
        assert lhs == pytest.approx(np.sum(x * gx), rel=1e-10)
        assert lhs == pytest.approx(np.sum(w * gw), rel=1e-10)


@pytest.mark.skipif("numba" not in kernels.available_backends(), reason="numba not installed")
def test_backends_agree(rng):
    nb = kernels.get_impl("numba")
    npk = kernels.get_impl("numpy")
    for n, ci, co, length, k, stride, dilation in CONFIGS:
        x = np.ascontiguousarray(_rand(rng, n, ci, length))
        w = np.ascontiguousarray(_rand(rng, co, ci, k))
        ya = nb["conv1d_fwd"](x, w, stride, dilation)
        yb = npk["conv1d_fwd"](x, w, stride, dilation)
        assert np.max(np.abs(ya - yb)) < 1e-12
        gy = np.ascontiguousarray(_rand(rng, *ya.shape))
        assert np.max(np.abs(nb["conv1d_grad_x"](gy, w, stride, dilation, length)
                             - npk["conv1d_grad_x"](gy, w, stride, dilation, length))) < 1e-12
        assert np.max(np.abs(nb["conv1d_grad_w"](x, gy, stride, dilation, k)
                             - npk["conv1d_grad_w"](x, gy, stride, dilation, k))) < 1e-12


@pytest.mark.skipif("numba" not in kernels.available_backends(), reason="numba not installed")
def test_backends_agree_transposed(rng):
    nb = kernels.get_impl("numba")
    npk = kernels.get_impl("numpy")
    for stride, k in ((1, 3), (2, 2), (2, 4), (4, 5)):
        n, ci, co, length = 2, 3, 2, 12
        x = np.ascontiguousarray(_rand(rng, n, ci, length))
        w = np.ascontiguousarray(_rand(rng, ci, co, k))
        ya = nb["convt1d_fwd"](x, w, stride)
        yb = npk["convt1d_fwd"](x, w, stride)
        assert np.max(np.abs(ya - yb)) < 1e-12
        gy = np.ascontiguousarray(_rand(rng, *ya.shape))
        assert np.max(np.abs(nb["convt1d_grad_x"](gy, w, stride) - npk["convt1d_grad_x"](gy, w, stride))) < 1e-12
        assert np.max(np.abs(nb["convt1d_grad_w"](x, gy, stride, k) - npk["convt1d_grad_w"](x, gy, stride, k))) < 1e-12


def test_get_impl_unknown_backend():
    with pytest.raises(ValueError):
        kernels.get_impl("cuda")


def test_env_flag_selects_backend():
    code = "import wavebridge.kernels as k; print(k.BACKEND)"
    for env_val in ("numpy",) + (("numba",) if "numba" in kernels.available_backends() else ()):
        out = subprocess.run(
            [sys.executable, "-c", code],
            capture_output=True, text=True,
            env={"PATH": "/usr/bin:/bin", "WAVEBRIDGE_KERNELS": env_val},
        )
        assert out.returncode == 0, out.stderr
        assert out.stdout.strip() == env_val


def test_env_flag_rejects_unknown_backend():
    out = subprocess.run(
        [sys.executable, "-c", "import wavebridge.kernels"],
        capture_output=True, text=True,
        env={"PATH": "/usr/bin:/bin", "WAVEBRIDGE_KERNELS": "gpu"},
    )
    assert out.returncode != 0
    assert "WAVEBRIDGE_KERNELS" in out.stderr
