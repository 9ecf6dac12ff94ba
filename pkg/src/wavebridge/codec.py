"""Convolutional waveform VAE.

Encoder: strided conv stack (stride product = compression ratio) ending in a
1x1 head that emits per-frame mean and log-variance. Decoder mirrors with
transposed convs. Trained on multi-resolution STFT reconstruction plus a
weighted KL against the unit Gaussian; a post-hoc scale is fitted so pooled
latents have unit spread before they feed the bridge.

Lengths: encode handles any input of at least `ratio` samples and yields
ceil(L / ratio) frames; decode emits frames * ratio samples and trims back to
a known original length.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import nn
from .dsp import StftParams, Waveform
from .metrics import MRSTFT_FLOOR, MrStftConfig


@dataclass
class Latent:
    """c x l latent frames plus bookkeeping for round trips."""

    data: np.ndarray
    frame_rate: float
    ratio: int
    scale: float = 1.0

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim != 2:
            raise ValueError(f"latent must be 2-D (channels x frames), got {self.data.shape}")
        if not np.all(np.isfinite(self.data)):
            raise ValueError("latent contains NaN or inf")


@dataclass
class CodecConfig:
    ratio: int = 16
    channels: int = 8
    strides: tuple = (2, 2, 2, 2)
    widths: tuple = (16, 24, 32, 32)
    kl_weight: float = 1e-7
    sample_rate: int = 8000

    def __post_init__(self):
        if len(self.strides) != len(self.widths):
            raise ValueError("strides and widths must pair up")
        prod = 1
        for s in self.strides:
            prod *= s
        if prod != self.ratio:
            raise ValueError(f"product of strides {self.strides} is {prod}, not ratio {self.ratio}")
        if self.kl_weight < 0:
            raise ValueError("kl_weight must be >= 0")

    @property
    def frame_rate(self) -> float:
        return self.sample_rate / self.ratio

    def to_dict(self) -> dict:
        return {
            "ratio": self.ratio,
            "channels": self.channels,
            "strides": list(self.strides),
            "widths": list(self.widths),
            "kl_weight": self.kl_weight,
            "sample_rate": self.sample_rate,
        }

    @staticmethod
    def from_dict(d: dict) -> "CodecConfig":
        d = dict(d)
        d["strides"] = tuple(d["strides"])
        d["widths"] = tuple(d["widths"])
        return CodecConfig(**d)


class Codec:
    def __init__(self, cfg: CodecConfig, rng: np.random.Generator):
        self.cfg = cfg
        c = cfg.channels
        self.enc = []
        cin = 1
        for w, s in zip(cfg.widths, cfg.strides):
            self.enc.append(nn.Conv1d(cin, w, 2 * s, rng, stride=s))
            cin = w
        self.enc_head = nn.Conv1d(cin, 2 * c, 1, rng)
        self.dec_head = nn.Conv1d(c, cfg.widths[-1], 1, rng)
        self.dec = []
        cin = cfg.widths[-1]
        for w, s in zip(reversed(cfg.widths), reversed(cfg.strides)):
            self.dec.append(nn.ConvT1d(cin, w, 2 * s, rng, stride=s))
            cin = w
        self.dec_out = nn.Conv1d(cin, 1, 3, rng)

    def named_params(self) -> list[tuple[str, nn.Tensor]]:
        out = []
        for i, layer in enumerate(self.enc):
            out += layer.named_params(f"enc{i}")
        out += self.enc_head.named_params("enc_head")
        out += self.dec_head.named_params("dec_head")
        for i, layer in enumerate(self.dec):
            out += layer.named_params(f"dec{i}")
        out += self.dec_out.named_params("dec_out")
        return out

    def params(self) -> list[nn.Tensor]:
        return [t for _, t in self.named_params()]

    # ---------------------------------------------------------- graph paths

    def encode_dist(self, x: nn.Tensor) -> tuple[nn.Tensor, nn.Tensor]:
        """x: (N, 1, L) -> per-frame mean and log-variance, each (N, c, l)."""
        h = x
        for layer in self.enc:
            h = nn.tanh(layer(h))
        h = self.enc_head(h)
        c = self.cfg.channels
        mu = nn.slice_channels(h, 0, c)
        logvar = nn.slice_channels(h, c, 2 * c)
        return mu, logvar

    def decode_graph(self, z: nn.Tensor) -> nn.Tensor:
        h = nn.tanh(self.dec_head(z))
        for layer in self.dec:
            h = nn.tanh(layer(h))
        return self.dec_out(h)

    # ----------------------------------------------------- numpy-facing API

    def encode(self, wav: Waveform, mode: str = "mean", rng: np.random.Generator | None = None) -> Latent:
        """Encode a waveform; mode 'mean' is deterministic, 'sample' draws."""
        if wav.sample_rate != self.cfg.sample_rate:
            raise ValueError(f"codec trained at {self.cfg.sample_rate} Hz, input is {wav.sample_rate} Hz")
        if len(wav) < self.cfg.ratio:
            raise ValueError(f"input of {len(wav)} samples shorter than one frame ({self.cfg.ratio})")
        x = nn.Tensor(wav.samples[None, None, :])
        mu, logvar = self.encode_dist(x)
        if mode == "mean":
            z = mu.data[0]
        elif mode == "sample":
            if rng is None:
                raise ValueError("sample mode needs an rng")
            z = mu.data[0] + np.exp(0.5 * logvar.data[0]) * rng.standard_normal(mu.data[0].shape)
        else:
            raise ValueError(f"unknown encode mode {mode!r}")
        return Latent(z, self.cfg.frame_rate, self.cfg.ratio)

    def decode(self, z: Latent | np.ndarray, length: int | None = None) -> Waveform:
        data = z.data if isinstance(z, Latent) else np.asarray(z, dtype=np.float64)
        out = self.decode_graph(nn.Tensor(data[None]))
        y = out.data[0, 0]
        if length is not None:
            y = y[:length]
        return Waveform(y, self.cfg.sample_rate)


def vae_loss(codec: Codec, batch: np.ndarray, rng: np.random.Generator, mr_cfg: MrStftConfig) -> tuple[nn.Tensor, float, float]:
    """MR-STFT reconstruction + kl_weight * KL on a (N, L) batch.

    Returns (loss tensor, recon value, kl value). The reconstruction term is
    the batch mean of the same quantity metrics.mrstft_loss computes.
    """
    n, length = batch.shape
    x = nn.Tensor(batch[:, None, :])
    mu, logvar = codec.encode_dist(x)
    noise = rng.standard_normal(mu.shape)
    z = mu + nn.exp(nn.Tensor(0.5) * logvar) * nn.Tensor(noise)
    recon = codec.decode_graph(z)
    recon = nn.reshape(nn.slice_last(recon, 0, length), (n, length))

    total = None
    for params in mr_cfg.resolutions:
        ref_mag = np.maximum(_ref_mags(batch, params), MRSTFT_FLOOR)  # (N, T, F)
        est = nn.maximum_const(nn.stft_mag(recon, params), MRSTFT_FLOOR)
        ref = nn.Tensor(ref_mag)
        diff = est - ref
        sc_num = nn.sqrt(nn.tsum(diff * diff, axis=(1, 2)))
        sc_den = 1.0 / np.sqrt(np.sum(ref.data**2, axis=(1, 2)))
        sc = nn.tmean(sc_num * nn.Tensor(sc_den))
        log_diff = nn.absolute(nn.log(est) - nn.log(ref))
        frames = est.shape[1]
        log_term = nn.tmean(nn.tsum(log_diff, axis=(1, 2)) * nn.Tensor(1.0 / frames))
        term = sc + log_term
        total = term if total is None else total + term

    # KL(q || N(0,1)) summed over latent entries, mean over the batch
    kl_each = nn.Tensor(-0.5) * nn.tsum(
        nn.Tensor(1.0) + logvar - mu * mu - nn.exp(logvar), axis=(1, 2)
    )
    kl = nn.tmean(kl_each)
    loss = total + nn.Tensor(codec.cfg.kl_weight) * kl
    return loss, float(total.data), float(kl.data)


def _ref_mags(batch: np.ndarray, params: StftParams) -> np.ndarray:
    """Constant-side magnitude STFTs, shaped (N, T, F) to match nn.stft_mag."""
    n_fft, hop = params.fft_size, params.hop
    win = params.window_values()
    nframes = 1 + (batch.shape[1] - n_fft) // hop
    idx = np.arange(n_fft)[None, :] + (hop * np.arange(nframes))[:, None]
    return np.abs(np.fft.rfft(batch[:, idx] * win[None, None, :], axis=2))


def train_codec(
    clips: list[Waveform],
    cfg: CodecConfig,
    steps: int,
    rng: np.random.Generator,
    batch_size: int = 8,
    crop_len: int = 2048,
    lr: float = 1e-3,
    log_every: int = 50,
    mr_cfg: MrStftConfig | None = None,
    log_cb=None,
) -> tuple[Codec, list[tuple[int, float, float, float]]]:
    """Train a fresh codec on random crops. Returns (codec, loss trace).

    Trace rows: (step, total, recon, kl). Aborts on non-finite loss.
    """
    if not clips:
        raise ValueError("empty corpus")
    for wav in clips:
        if wav.sample_rate != cfg.sample_rate:
            raise ValueError(f"clip at {wav.sample_rate} Hz in a {cfg.sample_rate} Hz corpus")
        if len(wav) < crop_len:
            raise ValueError(f"clip of {len(wav)} samples shorter than crop {crop_len}")
    mr_cfg = mr_cfg or MrStftConfig()
    codec = Codec(cfg, rng)
    opt = nn.Adam(codec.params(), lr=lr)
    trace = []
    for step in range(steps):
        batch = np.stack([_random_crop(clips, crop_len, rng) for _ in range(batch_size)])
        opt.zero_grad()
        loss, recon, kl = vae_loss(codec, batch, rng, mr_cfg)
        if not np.isfinite(loss.data):
            raise FloatingPointError(f"codec training diverged at step {step}: loss={loss.data}")
        nn.backward(loss)
        opt.step()
        if step % log_every == 0 or step == steps - 1:
            trace.append((step, float(loss.data), recon, kl))
            if log_cb:
                log_cb(step, float(loss.data), recon, kl)
    return codec, trace


def _random_crop(clips: list[Waveform], crop_len: int, rng: np.random.Generator) -> np.ndarray:
    wav = clips[int(rng.integers(len(clips)))]
    start = int(rng.integers(len(wav) - crop_len + 1))
    return wav.samples[start : start + crop_len]


def fit_latent_scale(clips: list[Waveform], codec: Codec) -> float:
    """s = 1 / std of pooled posterior-mean latent entries over the corpus."""
    pool = [codec.encode(wav, mode="mean").data.ravel() for wav in clips]
    std = float(np.std(np.concatenate(pool)))
    if std <= 1e-12:
        raise ValueError("latents have zero variance; cannot fit a scale")
    return 1.0 / std
