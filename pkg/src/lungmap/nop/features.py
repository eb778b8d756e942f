"""Temporal Fourier features of (delayed) RF data."""
import numpy as np
import torch


def temporal_fourier_features(p, axis=0):
    """Real FFT along ``axis``; returns ``(magnitude, cos_phase, sin_phase)``.

    Bins with zero magnitude get phase 0 (cos 1, sin 0).
    """
    if isinstance(p, torch.Tensor):
        P = torch.fft.rfft(p, dim=axis)
        mag = P.abs()
        safe = torch.where(mag > 0, mag, torch.ones_like(mag))
        cos = torch.where(mag > 0, P.real / safe, torch.ones_like(mag))
        sin = torch.where(mag > 0, P.imag / safe, torch.zeros_like(mag))
        return mag, cos, sin
    p = np.asarray(p, dtype=float)
    if p.shape[axis] < 2:
        raise ValueError("need at least 2 time samples")
    P = np.fft.rfft(p, axis=axis)
    mag = np.abs(P)
    safe = np.where(mag > 0, mag, 1.0)
    cos = np.where(mag > 0, P.real / safe, 1.0)
    sin = np.where(mag > 0, P.imag / safe, 0.0)
    return mag, cos, sin


def n_freq(T: int) -> int:
    return T // 2 + 1


def scaled_modes(T: int, paper_modes=87, paper_T=1822, floor=4) -> int:
    """Retained FNO modes for a record of ``T`` samples, proportional to the full-scale choice."""
    F = n_freq(T)
    m = int(round(paper_modes * F / n_freq(paper_T)))
    return int(min(max(m, floor), F // 2 + 1))


def wall_fraction(pleura_depth_m, depth_extent_m):
    """Pleural depth as a fraction of the imaged depth, clipped to [0, 1]."""
    return np.clip(np.asarray(pleura_depth_m, dtype=float) / depth_extent_m, 0.0, 1.0)
