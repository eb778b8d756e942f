"""Chest-wall segmentation network and the aeration reconstruction network."""
from __future__ import annotations

from dataclasses import asdict, dataclass

import torch
import torch.nn.functional as F
from torch import nn

from .features import n_freq, temporal_fourier_features
from .layers import DoubleConv, Down, FnoLayer, ResTemporalBlock, Up


@dataclass
class ModelConfig:
    """Shapes and switches of the reconstruction network.

    Full-scale values: ``T=1822, n_t=64, n_e=128, channels=32, modes=87,
    width=64``.  ``input_scale`` normalizes spectral magnitudes and is fixed
    from the training set.
    """

    T: int = 53
    n_t: int = 16
    n_e: int = 32
    H_out: int = 32
    channels: int = 8
    modes: int = 4
    n_temporal: int = 2
    temporal_block: str = "fno"
    width: int = 16
    use_phase: bool = True
    use_wall: bool = True
    input_scale: float = 1.0

    def __post_init__(self):
        F_ = n_freq(self.T)
        if self.temporal_block not in ("fno", "resnet"):
            raise ValueError("temporal_block must be 'fno' or 'resnet'")
        if self.temporal_block == "fno" and not 1 <= self.modes <= F_ // 2 + 1:
            raise ValueError(f"modes={self.modes} outside 1..{F_ // 2 + 1} for T={self.T}")
        if self.input_scale <= 0:
            raise ValueError("input_scale must be positive")

    def to_dict(self):
        return asdict(self)


class SpatialNet(nn.Module):
    """Encoder-decoder over the (receiver, event) plane."""

    def __init__(self, c_in, width):
        super().__init__()
        w = width
        self.inc = DoubleConv(c_in, w)
        self.down1 = Down(w, 2 * w)
        self.down2 = Down(2 * w, 4 * w)
        self.down3 = Down(4 * w, 4 * w)
        self.up1 = Up(8 * w, 2 * w, 4 * w)
        self.up2 = Up(4 * w, w, 2 * w)
        self.up3 = Up(2 * w, w)
        self.up4 = Up(w + c_in, c_in)
        self.out = nn.ConvTranspose2d(c_in, c_in, 3, padding=1)
        self.norm = nn.BatchNorm2d(c_in)

    def forward(self, x0):
        e1 = self.inc(x0)
        e2 = self.down1(e1)
        e3 = self.down2(e2)
        e4 = self.down3(e3)
        y = self.up1(e4, e3)
        y = self.up2(y, e2)
        y = self.up3(y, e1)
        y = self.up4(y, x0)
        return self.norm(self.out(y))


class LunaNet(nn.Module):
    """Delayed RF (+ pleural-depth channel) to a probabilistic aeration map.

    Input ``(B, T, n_t, n_e)`` delayed RF and ``(B, n_e)`` wall fractions;
    output ``(B, H_out, n_e)`` probabilities.
    """

    N_IN = 4

    def __init__(self, cfg: ModelConfig):
        super().__init__()
        self.cfg = cfg
        C = cfg.channels
        self.F = n_freq(cfg.T)
        self.lift = nn.Conv1d(self.N_IN, C, 1)
        if cfg.temporal_block == "fno":
            self.temporal = nn.ModuleList([FnoLayer(C, C, cfg.modes) for _ in range(cfg.n_temporal)])
        else:
            self.temporal = nn.ModuleList([ResTemporalBlock(C, C) for _ in range(cfg.n_temporal)])
        self.project = nn.Linear(C * self.F, C)
        self.spatial = SpatialNet(C, cfg.width)
        self.head = nn.Linear(C * cfg.n_t, cfg.H_out)

    def features(self, rf, wall):
        cfg = self.cfg
        B, T, Nt, Ne = rf.shape
        if (T, Nt, Ne) != (cfg.T, cfg.n_t, cfg.n_e):
            raise ValueError(f"input {(T, Nt, Ne)} does not match configured {(cfg.T, cfg.n_t, cfg.n_e)}")
        mag, cos, sin = temporal_fourier_features(rf, axis=1)
        mag = torch.log1p(mag / cfg.input_scale)
        if not cfg.use_phase:
            cos = torch.zeros_like(cos)
            sin = torch.zeros_like(sin)
        if cfg.use_wall and wall is not None:
            w = wall.to(mag.dtype)[:, None, None, :].expand_as(mag)
        else:
            w = torch.zeros_like(mag)
        return torch.stack([mag, cos, sin, w], dim=1)

    def logits(self, rf, wall=None):
        cfg = self.cfg
        x = self.features(rf, wall)
        B, Cin, Fr, Nt, Ne = x.shape
        x = x.permute(0, 3, 4, 1, 2).reshape(B * Nt * Ne, Cin, Fr)
        x = self.lift(x)
        for layer in self.temporal:
            x = layer(x)
        x = self.project(x.reshape(B * Nt * Ne, -1))
        x = x.reshape(B, Nt, Ne, -1).permute(0, 3, 1, 2)
        x = self.spatial(x)
        x = x.permute(0, 3, 1, 2).reshape(B, Ne, -1)
        return self.head(x).transpose(1, 2)

    def forward(self, rf, wall=None):
        return torch.sigmoid(self.logits(rf, wall))


@dataclass
class SegConfig:
    size: int = 96
    width: int = 16
    n_down: int = 4

    def to_dict(self):
        return asdict(self)


class SegNet(nn.Module):
    """Encoder-decoder with stride-2 downsampling; 2-class logits per pixel (channel 0: chest wall)."""

    def __init__(self, cfg: SegConfig):
        super().__init__()
        self.cfg = cfg
        w = cfg.width
        ladder = [w * 2 ** i for i in range(cfg.n_down)] + [w * 2 ** (cfg.n_down - 1)]
        self.inc = DoubleConv(1, ladder[0])
        self.downs = nn.ModuleList([Down(ladder[i], ladder[i + 1]) for i in range(cfg.n_down)])
        ups = []
        c = ladder[-1]
        for i in range(cfg.n_down - 1, -1, -1):
            skip = ladder[i]
            c_out = ladder[i - 1] if i > 0 else ladder[0]
            ups.append(Up(c + skip, c_out, (c + skip) // 2))
            c = c_out
        self.ups = nn.ModuleList(ups)
        self.outc = nn.Conv2d(c, 2, 1)

    def forward(self, x):
        skips = [self.inc(x)]
        for d in self.downs:
            skips.append(d(skips[-1]))
        y = skips.pop()
        for up in self.ups:
            y = up(y, skips.pop())
        return self.outc(y)


def segment_probabilities(logits):
    return F.softmax(logits, dim=1)


def pleural_line(wall_prob: torch.Tensor) -> torch.Tensor:
    """Deepest row per column whose chest-wall probability exceeds 0.5 (-1 if none).

    ``wall_prob`` is ``(..., H, W)``.
    """
    H = wall_prob.shape[-2]
    rows = torch.arange(H, device=wall_prob.device).view(*([1] * (wall_prob.ndim - 2)), H, 1)
    is_wall = wall_prob > 0.5
    return torch.where(is_wall, rows, torch.full_like(rows, -1)).amax(dim=-2)


def segment_chestwall(model: SegNet, image):
    """Softmax map ``(B, 2, S, S)`` and pleural row per column for a batch of images."""
    prob = segment_probabilities(model(image))
    return prob, pleural_line(prob[:, 0])


def count_parameters(model: nn.Module) -> int:
    return sum(p.numel() for p in model.parameters())
