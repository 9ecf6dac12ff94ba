"""Minimal reverse-mode autodiff on float64 numpy, plus the layers and
optimizer the package trains with.

Scope is deliberately small: exactly the operations the codec and the noise
predictor need (elementwise arithmetic, tanh/exp/log/abs, axis reductions,
matmul, 1-D convolutions via the kernels module, reflect padding, slicing and
concatenation on the last axis, and a differentiable magnitude STFT whose
backward pass is the rfft adjoint). Everything runs in float64 so central
finite differences agree with analytic gradients to ~1e-6, which the
grad_check utility (and an acceptance gate) enforces.

No broadcasting surprises: binary ops follow numpy broadcasting and gradients
are summed back over broadcast axes.
"""

from __future__ import annotations

import math

import numpy as np

from . import kernels
from .dsp import StftParams


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_backward", "_parents", "name")

    def __init__(self, data, requires_grad: bool = False, name: str = ""):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._backward = None
        self._parents: tuple[Tensor, ...] = ()
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    def accumulate(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    # Convenience operators (all defer to module functions below).
    def __add__(self, other):
        return add(self, _as_tensor(other))

    def __radd__(self, other):
        return add(_as_tensor(other), self)

    def __sub__(self, other):
        return add(self, neg(_as_tensor(other)))

    def __rsub__(self, other):
        return add(_as_tensor(other), neg(self))

    def __mul__(self, other):
        return mul(self, _as_tensor(other))

    def __rmul__(self, other):
        return mul(_as_tensor(other), self)

    def __neg__(self):
        return neg(self)


def _as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


def _node(data, parents, backward_fn) -> Tensor:
    out = Tensor(data)
    out.requires_grad = any(p.requires_grad for p in parents)
    if out.requires_grad:
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _unbroadcast(g: np.ndarray, shape: tuple) -> np.ndarray:
    """Sum gradient g down to `shape` (inverse of numpy broadcasting)."""
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def backward(loss: Tensor) -> None:
    """Reverse-mode sweep from a scalar loss."""
    if loss.data.size != 1:
        raise ValueError(f"backward needs a scalar, got shape {loss.shape}")
    topo: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
    while stack:
        node, done = stack.pop()
        if done:
            topo.append(node)
            continue
        if id(node) in seen or not node.requires_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            stack.append((p, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward()


# ------------------------------------------------------------ primitive ops


def add(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data + b.data

    def back():
        if a.requires_grad:
            a.accumulate(_unbroadcast(out.grad, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(out.grad, b.data.shape))

    out = _node(out_data, (a, b), back)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data * b.data

    def back():
        if a.requires_grad:
            a.accumulate(_unbroadcast(out.grad * b.data, a.data.shape))
        if b.requires_grad:
            b.accumulate(_unbroadcast(out.grad * a.data, b.data.shape))

    out = _node(out_data, (a, b), back)
    return out


def neg(a: Tensor) -> Tensor:
    def back():
        if a.requires_grad:
            a.accumulate(-out.grad)

    out = _node(-a.data, (a,), back)
    return out


def pow_const(a: Tensor, p: float) -> Tensor:
    out_data = a.data**p

    def back():
        if a.requires_grad:
            a.accumulate(out.grad * p * a.data ** (p - 1.0))

    out = _node(out_data, (a,), back)
    return out


def sqrt(a: Tensor) -> Tensor:
    return pow_const(a, 0.5)


def exp(a: Tensor) -> Tensor:
    out_data = np.exp(a.data)

    def back():
        if a.requires_grad:
            a.accumulate(out.grad * out_data)

    out = _node(out_data, (a,), back)
    return out


def log(a: Tensor) -> Tensor:
    def back():
        if a.requires_grad:
            a.accumulate(out.grad / a.data)

    out = _node(np.log(a.data), (a,), back)
    return out


def tanh(a: Tensor) -> Tensor:
    out_data = np.tanh(a.data)

    def back():
        if a.requires_grad:
            a.accumulate(out.grad * (1.0 - out_data * out_data))

    out = _node(out_data, (a,), back)
    return out


def absolute(a: Tensor) -> Tensor:
    """|a|; subgradient sign(a) (0 at 0)."""
    out_data = np.abs(a.data)

    def back():
        if a.requires_grad:
            a.accumulate(out.grad * np.sign(a.data))

    out = _node(out_data, (a,), back)
    return out


def maximum_const(a: Tensor, c: float) -> Tensor:
    """max(a, c) against a scalar floor; gradient flows where a >= c."""
    out_data = np.maximum(a.data, c)

    def back():
        if a.requires_grad:
            a.accumulate(out.grad * (a.data >= c))

    out = _node(out_data, (a,), back)
    return out


def tsum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    out_data = a.data.sum(axis=axis, keepdims=keepdims)

    def back():
        if not a.requires_grad:
            return
        g = out.grad
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        a.accumulate(np.broadcast_to(g, a.data.shape).copy())

    out = _node(out_data, (a,), back)
    return out


def tmean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    if axis is None:
        count = a.data.size
    else:
        axes = axis if isinstance(axis, tuple) else (axis,)
        count = int(np.prod([a.data.shape[i] for i in axes]))
    return mul(tsum(a, axis=axis, keepdims=keepdims), Tensor(1.0 / count))


def matmul(a: Tensor, b: Tensor) -> Tensor:
    out_data = a.data @ b.data

    def back():
        if a.requires_grad:
            a.accumulate(out.grad @ b.data.T)
        if b.requires_grad:
            b.accumulate(a.data.T @ out.grad)

    out = _node(out_data, (a, b), back)
    return out


def reshape(a: Tensor, shape) -> Tensor:
    def back():
        if a.requires_grad:
            a.accumulate(out.grad.reshape(a.data.shape))

    out = _node(a.data.reshape(shape), (a,), back)
    return out


def slice_last(a: Tensor, start: int, stop: int) -> Tensor:
    def back():
        if a.requires_grad:
            g = np.zeros_like(a.data)
            g[..., start:stop] = out.grad
            a.accumulate(g)

    out = _node(a.data[..., start:stop], (a,), back)
    return out


def concat_last(parts: list[Tensor]) -> Tensor:
    out_data = np.concatenate([p.data for p in parts], axis=-1)
    sizes = [p.data.shape[-1] for p in parts]

    def back():
        ofs = 0
        for p, sz in zip(parts, sizes):
            if p.requires_grad:
                p.accumulate(out.grad[..., ofs : ofs + sz])
            ofs += sz

    out = _node(out_data, tuple(parts), back)
    return out


def slice_channels(a: Tensor, start: int, stop: int) -> Tensor:
    """Slice a (N, C, L) tensor along the channel axis."""

    def back():
        if a.requires_grad:
            g = np.zeros_like(a.data)
            g[:, start:stop] = out.grad
            a.accumulate(g)

    out = _node(a.data[:, start:stop], (a,), back)
    return out


def concat_channels(parts: list[Tensor]) -> Tensor:
    """Concatenate (N, C_i, L) tensors along the channel axis."""
    out_data = np.concatenate([p.data for p in parts], axis=1)
    sizes = [p.data.shape[1] for p in parts]

    def back():
        ofs = 0
        for p, sz in zip(parts, sizes):
            if p.requires_grad:
                p.accumulate(out.grad[:, ofs : ofs + sz])
            ofs += sz

    out = _node(out_data, tuple(parts), back)
    return out


def pad_reflect_last(a: Tensor, left: int, right: int) -> Tensor:
    """Reflect-pad the last axis (no edge duplication, numpy 'reflect')."""
    length = a.data.shape[-1]
    if left >= length or right >= length:
        raise ValueError(f"reflect pad ({left},{right}) too large for length {length}")
    idx = np.concatenate(
        [np.arange(left, 0, -1), np.arange(length), np.arange(length - 2, length - 2 - right, -1)]
    )
    out_data = a.data[..., idx]

    def back():
        if a.requires_grad:
            g = np.zeros_like(a.data)
            np.add.at(g, (..., idx), out.grad)
            a.accumulate(g)

    out = _node(out_data, (a,), back)
    return out


def conv1d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1, dilation: int = 1) -> Tensor:
    """Valid 1-D convolution: x (N,Ci,L), w (Co,Ci,K) -> (N,Co,Lo)."""
    out_data = kernels.conv1d_fwd(x.data, w.data, stride, dilation)
    if bias is not None:
        out_data = out_data + bias.data[None, :, None]
    parents = (x, w) if bias is None else (x, w, bias)

    def back():
        g = out.grad
        if x.requires_grad:
            x.accumulate(kernels.conv1d_grad_x(g, w.data, stride, dilation, x.data.shape[2]))
        if w.requires_grad:
            w.accumulate(kernels.conv1d_grad_w(x.data, g, stride, dilation, w.data.shape[2]))
        if bias is not None and bias.requires_grad:
            bias.accumulate(g.sum(axis=(0, 2)))

    out = _node(out_data, parents, back)
    return out


def conv_transpose1d(x: Tensor, w: Tensor, bias: Tensor | None = None, stride: int = 1) -> Tensor:
    """Transposed 1-D convolution: x (N,Ci,L), w (Ci,Co,K) -> (N,Co,(L-1)*stride+K)."""
    out_data = kernels.convt1d_fwd(x.data, w.data, stride)
    if bias is not None:
        out_data = out_data + bias.data[None, :, None]
    parents = (x, w) if bias is None else (x, w, bias)

    def back():
        g = out.grad
        if x.requires_grad:
            x.accumulate(kernels.convt1d_grad_x(g, w.data, stride))
        if w.requires_grad:
            w.accumulate(kernels.convt1d_grad_w(x.data, g, stride, w.data.shape[2]))
        if bias is not None and bias.requires_grad:
            bias.accumulate(g.sum(axis=(0, 2)))

    out = _node(out_data, parents, back)
    return out


def stft_mag(x: Tensor, params: StftParams) -> Tensor:
    """Magnitude STFT of batched signals x (N, L) -> (N, T, F).

    Framing matches metrics.stft_magnitudes (no padding). Backward is the
    analytic rfft adjoint; near-zero bins use a tiny magnitude floor in the
    phase factor only.
    """
    n_fft, hop = params.fft_size, params.hop
    win = params.window_values()
    length = x.data.shape[-1]
    if length < n_fft:
        raise ValueError(f"signal length {length} < fft_size {n_fft}")
    nframes = 1 + (length - n_fft) // hop
    idx = np.arange(n_fft)[None, :] + (hop * np.arange(nframes))[:, None]
    frames = x.data[:, idx] * win[None, None, :]
    spec = np.fft.rfft(frames, axis=2)
    mag = np.abs(spec)

    def back():
        if not x.requires_grad:
            return
        phase = spec / np.maximum(mag, 1e-300)
        g_spec = out.grad * phase  # dL/dRe + i dL/dIm, bin by bin
        # Adjoint of rfft on real input: halve interior bins, irfft, scale by N.
        g_spec = g_spec.copy()
        g_spec[..., 1 : (n_fft // 2)] *= 0.5
        g_frames = np.fft.irfft(g_spec, n=n_fft, axis=2) * n_fft
        g_frames *= win[None, None, :]
        gx = np.zeros_like(x.data)
        np.add.at(gx, (np.arange(x.data.shape[0])[:, None, None], idx[None, :, :]), g_frames)
        x.accumulate(gx)

    out = _node(mag, (x,), back)
    return out


def mse(a: Tensor, b: Tensor) -> Tensor:
    d = a - b
    return tmean(mul(d, d))


# ------------------------------------------------------------------- layers


class Layer:
    def named_params(self, prefix: str) -> list[tuple[str, Tensor]]:
        raise NotImplementedError

    def params(self) -> list[Tensor]:
        return [t for _, t in self.named_params("")]


class Conv1d(Layer):
    """Conv layer with 'same' reflect padding (output length ceil(L/stride))."""

    def __init__(self, cin, cout, k, rng, stride=1, dilation=1, zero_init=False):
        self.stride, self.dilation, self.k = stride, dilation, k
        if zero_init:
            w = np.zeros((cout, cin, k))
        else:
            w = rng.standard_normal((cout, cin, k)) * math.sqrt(1.0 / (cin * k))
        self.w = Tensor(w, requires_grad=True, name="w")
        self.b = Tensor(np.zeros(cout), requires_grad=True, name="b")

    def __call__(self, x: Tensor) -> Tensor:
        length = x.data.shape[-1]
        out_len = -(-length // self.stride)
        span = (self.k - 1) * self.dilation + 1
        total_pad = max(0, (out_len - 1) * self.stride + span - length)
        left = total_pad // 2
        if total_pad:
            x = pad_reflect_last(x, left, total_pad - left)
        return conv1d(x, self.w, self.b, self.stride, self.dilation)

    def named_params(self, prefix):
        return [(f"{prefix}.w", self.w), (f"{prefix}.b", self.b)]


class ConvT1d(Layer):
    """Transposed conv producing exactly L*stride outputs (centered crop)."""

    def __init__(self, cin, cout, k, rng, stride=1):
        if k < stride:
            raise ValueError("kernel must be at least the stride")
        self.stride, self.k = stride, k
        w = rng.standard_normal((cin, cout, k)) * math.sqrt(1.0 / (cin * k))
        self.w = Tensor(w, requires_grad=True, name="w")
        self.b = Tensor(np.zeros(cout), requires_grad=True, name="b")

    def __call__(self, x: Tensor) -> Tensor:
        y = conv_transpose1d(x, self.w, self.b, self.stride)
        extra = self.k - self.stride
        left = extra // 2
        want = x.data.shape[-1] * self.stride
        return slice_last(y, left, left + want)

    def named_params(self, prefix):
        return [(f"{prefix}.w", self.w), (f"{prefix}.b", self.b)]


class Linear(Layer):
    def __init__(self, cin, cout, rng, zero_init=False):
        if zero_init:
            w = np.zeros((cin, cout))
        else:
            w = rng.standard_normal((cin, cout)) * math.sqrt(1.0 / cin)
        self.w = Tensor(w, requires_grad=True, name="w")
        self.b = Tensor(np.zeros(cout), requires_grad=True, name="b")

    def __call__(self, x: Tensor) -> Tensor:
        return add(matmul(x, self.w), self.b)

    def named_params(self, prefix):
        return [(f"{prefix}.w", self.w), (f"{prefix}.b", self.b)]


# ---------------------------------------------------------------- optimizer


class Adam:
    """Adam with bias correction. Aborts loudly on non-finite gradients."""

    def __init__(self, params: list[Tensor], lr: float, beta1: float = 0.9, beta2: float = 0.99, eps: float = 1e-8):
        self.params = list(params)
        self.lr, self.beta1, self.beta2, self.eps = lr, beta1, beta2, eps
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]
        self.t = 0

    def zero_grad(self):
        for p in self.params:
            p.grad = None

    def step(self):
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        for i, p in enumerate(self.params):
            g = p.grad
            if g is None:
                continue
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient in parameter {p.name or i}")
            self.m[i] = b1 * self.m[i] + (1 - b1) * g
            self.v[i] = b2 * self.v[i] + (1 - b2) * (g * g)
            m_hat = self.m[i] / (1 - b1**self.t)
            v_hat = self.v[i] / (1 - b2**self.t)
            p.data -= self.lr * m_hat / (np.sqrt(v_hat) + self.eps)


# ------------------------------------------------------------ grad checking


def grad_check(loss_fn, params: list[Tensor], rng: np.random.Generator, n_samples: int = 120, eps: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients.

    loss_fn() must rebuild the (deterministic) loss from the current parameter
    values. Samples n_samples scalar entries across all parameter tensors.
    """
    for p in params:
        p.grad = None
    loss = loss_fn()
    backward(loss)
    analytic = [np.zeros_like(p.data) if p.grad is None else p.grad.copy() for p in params]

    sizes = np.array([p.data.size for p in params])
    total = int(sizes.sum())
    picks = rng.choice(total, size=min(n_samples, total), replace=False)
    bounds = np.cumsum(sizes)

    worst = 0.0
    for flat in picks:
        pi = int(np.searchsorted(bounds, flat, side="right"))
        local = int(flat - (bounds[pi - 1] if pi else 0))
        p = params[pi]
        orig = p.data.flat[local]
        p.data.flat[local] = orig + eps
        hi = float(loss_fn().data)
        p.data.flat[local] = orig - eps
        lo = float(loss_fn().data)
        p.data.flat[local] = orig
        fd = (hi - lo) / (2 * eps)
        an = float(analytic[pi].flat[local])
        rel = abs(an - fd) / max(abs(an), abs(fd), 1e-8)
        worst = max(worst, rel)
    return worst
