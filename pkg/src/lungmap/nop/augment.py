"""Masking and noise augmentation of RF records."""
from dataclasses import dataclass

import numpy as np


@dataclass
class AugmentConfig:
    mask_t_max: int = 7
    mask_s_max: int = 123
    snr_db: float = 30.0
    temporal: bool = True
    spatial: bool = True

    def validate(self, T, n_traces):
        if not 0 <= self.mask_t_max <= T:
            raise ValueError(f"mask_t_max must be in 0..{T}")
        if not 0 <= self.mask_s_max <= n_traces:
            raise ValueError(f"mask_s_max must be in 0..{n_traces}")


def augment(rf, cfg: AugmentConfig, rng: np.random.Generator):
    """Zero the first m time samples, zero m_s random traces, add white Gaussian noise.

    ``rf`` is ``(T, n_t, n_e)``; m ~ U{0..mask_t_max}, m_s ~ U{0..mask_s_max};
    the noise power is the post-masking signal power divided by 10^(snr/10).
    """
    x = np.array(rf, dtype=float, copy=True)
    T, Nt, Ne = x.shape
    cfg.validate(T, Nt * Ne)
    if cfg.temporal and cfg.mask_t_max > 0:
        m = int(rng.integers(0, cfg.mask_t_max + 1))
        x[:m] = 0.0
    if cfg.spatial and cfg.mask_s_max > 0:
        ms = int(rng.integers(0, cfg.mask_s_max + 1))
        idx = rng.choice(Nt * Ne, size=ms, replace=False)
        x.reshape(T, Nt * Ne)[:, idx] = 0.0
    if np.isfinite(cfg.snr_db):
        power = np.mean(x ** 2)
        if power > 0:
            x += rng.standard_normal(x.shape) * np.sqrt(power / 10 ** (cfg.snr_db / 10))
    return x


def measured_snr_db(clean, noisy):
    clean = np.asarray(clean, dtype=float)
    noise = np.asarray(noisy, dtype=float) - clean
    return 10 * np.log10(np.mean(clean ** 2) / np.mean(noise ** 2))
