"""Objective audio metrics.

lsd / lsd_band / spectral_ssim compare spectrograms (see dsp.stft);
mrstft_loss compares waveforms across several STFT resolutions and doubles as
the codec's reconstruction loss (nn.stft_mag implements the identical framing
differentiably, and a test pins the two to each other).

Conventions, fixed across the package:
  - LSD uses log10 on squared magnitudes floored at 1e-8, root-mean over
    frequency, plain mean over frames.
  - spectral SSIM runs on log10 magnitudes jointly min-max normalized to
    [0, 1] (stability constants 0.01 / 0.02 assume a unit range), averaged
    over non-overlapping 7x7 blocks, remainder dropped.
  - mrstft floors magnitudes at 1e-7 and uses the natural log for its L1 term,
    normalized by frame count only.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dsp import Spectrogram, StftParams, Waveform

LSD_FLOOR = 1e-8
MRSTFT_FLOOR = 1e-7


@dataclass
class SsimConfig:
    block: int = 7
    eps1: float = 0.01
    eps2: float = 0.02


@dataclass
class MrStftConfig:
    resolutions: list[StftParams] = field(
        default_factory=lambda: [
            StftParams(512, 128),
            StftParams(1024, 256),
            StftParams(2048, 512),
        ]
    )

    def __post_init__(self):
        if not self.resolutions:
            raise ValueError("need at least one STFT resolution")


def _check_shapes(ref: Spectrogram, est: Spectrogram) -> None:
    if ref.bins.shape != est.bins.shape:
        raise ValueError(f"spectrogram shapes differ: {ref.bins.shape} vs {est.bins.shape}")


def _log_sq_ratio(ref: Spectrogram, est: Spectrogram) -> np.ndarray:
    s = np.maximum(ref.magnitude(), LSD_FLOOR)
    s_hat = np.maximum(est.magnitude(), LSD_FLOOR)
    return 2.0 * (np.log10(s) - np.log10(s_hat))


def lsd(ref: Spectrogram, est: Spectrogram) -> float:
    """Log-spectral distance: mean over frames of the RMS log10 ratio over bins."""
    _check_shapes(ref, est)
    d = _log_sq_ratio(ref, est)
    return float(np.mean(np.sqrt(np.mean(d * d, axis=0))))


def lsd_band(ref: Spectrogram, est: Spectrogram, f1: float, f2: float) -> float:
    """LSD restricted to bins with f1 <= bin frequency <= f2 (inclusive)."""
    _check_shapes(ref, est)
    nyq = ref.sample_rate / 2.0
    if not (0.0 <= f1 < f2 <= nyq + 1e-9):
        raise ValueError(f"band [{f1}, {f2}] invalid for Nyquist {nyq}")
    freqs = np.arange(ref.bins.shape[0]) * ref.bin_hz
    keep = (freqs >= f1) & (freqs <= f2)
    if not np.any(keep):
        raise ValueError(f"band [{f1}, {f2}] Hz contains no bins (bin spacing {ref.bin_hz:.2f} Hz)")
    d = _log_sq_ratio(ref, est)[keep]
    return float(np.mean(np.sqrt(np.mean(d * d, axis=0))))


def spectral_ssim(ref: Spectrogram, est: Spectrogram, cfg: SsimConfig | None = None) -> float:
    """Blockwise SSIM on jointly normalized log spectrograms, mean over blocks."""
    cfg = cfg or SsimConfig()
    _check_shapes(ref, est)
    b = cfg.block
    nf, nt = ref.bins.shape[0] // b, ref.bins.shape[1] // b
    if nf < 1 or nt < 1:
        raise ValueError(f"spectrograms {ref.bins.shape} smaller than one {b}x{b} block")

    a = np.log10(np.maximum(ref.magnitude(), LSD_FLOOR))
    c = np.log10(np.maximum(est.magnitude(), LSD_FLOOR))
    lo = min(a.min(), c.min())
    hi = max(a.max(), c.max())
    if hi - lo < 1e-12:
        a = np.full_like(a, 0.5)
        c = np.full_like(c, 0.5)
    else:
        a = (a - lo) / (hi - lo)
        c = (c - lo) / (hi - lo)

    def blocks(m):
        return m[: nf * b, : nt * b].reshape(nf, b, nt, b).transpose(0, 2, 1, 3).reshape(nf * nt, b * b)

    pa, pc = blocks(a), blocks(c)
    mu_a, mu_c = pa.mean(axis=1), pc.mean(axis=1)
    var_a, var_c = pa.var(axis=1), pc.var(axis=1)
    cov = (pa * pc).mean(axis=1) - mu_a * mu_c
    num = (2.0 * mu_a * mu_c + cfg.eps1) * (2.0 * cov + cfg.eps2)
    den = (mu_a**2 + mu_c**2 + cfg.eps1) * (var_a + var_c + cfg.eps2)
    return float(np.mean(num / den))


def frame_signal(x: np.ndarray, fft_size: int, hop: int) -> np.ndarray:
    """Frames without padding: shape (1 + (L - fft_size)//hop, fft_size)."""
    if len(x) < fft_size:
        raise ValueError(f"signal of {len(x)} samples shorter than fft_size {fft_size}")
    nframes = 1 + (len(x) - fft_size) // hop
    idx = np.arange(fft_size)[None, :] + (hop * np.arange(nframes))[:, None]
    return x[idx]


def stft_magnitudes(x: np.ndarray, params: StftParams) -> np.ndarray:
    """Magnitude STFT with the loss framing convention, shape F x T."""
    frames = frame_signal(x, params.fft_size, params.hop) * params.window_values()[None, :]
    return np.abs(np.fft.rfft(frames, axis=1)).T


def mrstft_loss(ref: Waveform, est: Waveform, cfg: MrStftConfig | None = None) -> float:
    """Multi-resolution STFT distance (spectral convergence + log-L1 terms).

    Per resolution: ||Mr - Me||_F / ||Mr||_F + (1/T) * sum |ln(Mr/Me)|, with
    Mr/Me the floored magnitude STFTs of ref/est. Zero iff the waveforms match
    up to the floor.
    """
    cfg = cfg or MrStftConfig()
    if ref.sample_rate != est.sample_rate:
        raise ValueError(f"sample rates differ: {ref.sample_rate} vs {est.sample_rate}")
    if len(ref) != len(est):
        raise ValueError(f"lengths differ: {len(ref)} vs {len(est)}")
    total = 0.0
    for params in cfg.resolutions:
        mr = np.maximum(stft_magnitudes(ref.samples, params), MRSTFT_FLOOR)
        me = np.maximum(stft_magnitudes(est.samples, params), MRSTFT_FLOOR)
        sc = np.linalg.norm(mr - me) / np.linalg.norm(mr)
        log_l1 = np.sum(np.abs(np.log(mr) - np.log(me))) / mr.shape[1]
        total += float(sc + log_l1)
    return total
