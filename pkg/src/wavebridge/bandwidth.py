"""Effective-bandwidth estimation from a clip's magnitude spectrum.

The estimator takes one full-clip FFT, smooths the magnitude with a
Savitzky-Golay filter, downsamples, and walks the log-spectrum looking for the
first index whose neighborhood is both flat (five-point second difference
below a curvature threshold) and quiet (level below a fraction of the spectrum
max). That index marks the band edge; if no index qualifies the clip is
treated as full-band and the Nyquist frequency is returned.

Defaults were calibrated on low-passed noise corpora (known cutoffs 2-20 kHz,
Chebyshev order 8): the clip is Hann-windowed before the FFT (a rectangular
window's leakage skirt otherwise buries the stopband), smoothing window 101
bins, curvature threshold 0.1 in log10 units, level threshold 0.03 of the
smoothed max. That configuration hits 100/100 within +/-10% on 1 s clips.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import savgol_filter

from .dsp import Waveform

MIN_CLIP_SECONDS = 0.25


@dataclass
class EstimatorConfig:
    savgol_window: int = 101
    savgol_polyorder: int = 3
    downsample_factor: int = 4
    curvature_eps: float = 0.1
    energy_tau: float = 0.03
    lookahead_k: int = 8
    window: str = "hann"  # window applied to the clip before the FFT

    def __post_init__(self):
        if self.savgol_window <= self.savgol_polyorder:
            raise ValueError("savgol_window must exceed savgol_polyorder")
        if self.savgol_window % 2 == 0:
            raise ValueError("savgol_window must be odd")
        for name in ("savgol_polyorder", "downsample_factor", "curvature_eps", "energy_tau", "lookahead_k"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.window not in ("hann", "rect"):
            raise ValueError(f"window must be 'hann' or 'rect', got {self.window!r}")


@dataclass
class BandwidthEstimate:
    f_eff: float
    trunc_index: int  # index in the downsampled spectrum
    spectrum_len: int  # length of the downsampled spectrum

    def __post_init__(self):
        if not (0 < self.trunc_index <= self.spectrum_len):
            raise ValueError("truncation index outside (0, spectrum_len]")


def magnitude_spectrum(wav: Waveform, window: str = "hann") -> np.ndarray:
    """Single full-clip FFT magnitude, length len(x)//2 + 1."""
    x = wav.samples
    if len(x) == 0:
        raise ValueError("empty waveform")
    if window == "hann":
        x = x * np.hanning(len(x))
    return np.abs(np.fft.rfft(x))


def savgol_smooth(x: np.ndarray, cfg: EstimatorConfig) -> np.ndarray:
    if len(x) < cfg.savgol_window:
        raise ValueError(f"sequence of {len(x)} shorter than smoothing window {cfg.savgol_window}")
    return savgol_filter(np.asarray(x, dtype=np.float64), cfg.savgol_window, cfg.savgol_polyorder)


def curvature(logmag: np.ndarray) -> np.ndarray:
    """Five-point second difference (exact on quadratics); boundary entries 0."""
    x = np.asarray(logmag, dtype=np.float64)
    if len(x) < 5:
        raise ValueError(f"need at least 5 points, got {len(x)}")
    out = np.zeros_like(x)
    out[2:-2] = (-x[4:] + 16.0 * x[3:-1] - 30.0 * x[2:-2] + 16.0 * x[1:-3] - x[:-4]) / 12.0
    return out


def estimate_f_eff(wav: Waveform, cfg: EstimatorConfig | None = None) -> BandwidthEstimate:
    """Estimate the effective bandwidth of a clip (>= 0.25 s).

    Scale-invariant (thresholds are relative to the spectrum max). Silence and
    genuinely full-band content both return the Nyquist frequency.
    """
    cfg = cfg or EstimatorConfig()
    if wav.duration < MIN_CLIP_SECONDS:
        raise ValueError(f"clip too short for bandwidth estimation: {wav.duration:.3f} s < {MIN_CLIP_SECONDS} s")
    nyq = wav.nyquist

    mag = magnitude_spectrum(wav, window=cfg.window)
    smooth = savgol_smooth(mag, cfg)
    xb = smooth[:: cfg.downsample_factor]
    n = len(xb)
    peak = float(np.max(xb)) if n else 0.0
    if peak <= 0.0:
        return BandwidthEstimate(nyq, n, n)  # silence: no band edge exists

    xb = np.maximum(xb, peak * 1e-12)
    level_ok = (xb / peak) < cfg.energy_tau
    acurv = np.abs(curvature(np.log10(xb)))
    # max of |curvature| over [i, i+k]; zero-padding is exact since acurv >= 0
    padded = np.concatenate([acurv, np.zeros(cfg.lookahead_k)])
    flat_ok = np.lib.stride_tricks.sliding_window_view(padded, cfg.lookahead_k + 1).max(axis=1) < cfg.curvature_eps

    hits = np.nonzero(level_ok & flat_ok)[0]
    idx = int(hits[0]) if hits.size else n
    idx = max(idx, 1)
    return BandwidthEstimate((idx / n) * nyq, idx, n)
