"""Building blocks: spectral (FNO) layers and the convolutional units of the encoder-decoders."""
from __future__ import annotations

import math
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn


@dataclass
class FnoLayerParams:
    """Weights of one spectral layer.

    ``spectral`` holds complex weights as a real tensor of shape
    ``(modes, C_in, C_out, 2)``; ``pointwise`` is ``(C_in, C_out)``.
    """

    spectral: torch.Tensor
    pointwise: torch.Tensor
    bias: torch.Tensor | None = None

    @property
    def modes(self) -> int:
        return self.spectral.shape[0]


def fno_layer_forward(x: torch.Tensor, params: FnoLayerParams, activation=True) -> torch.Tensor:
    """Spectral conv over the last axis of ``x`` (batch, C_in, L) plus pointwise path.

    The first ``modes`` coefficients of the real FFT are mixed across
    channels with complex weights, higher ones are dropped on that path.
    """
    if x.ndim != 3:
        raise ValueError(f"expected (batch, channels, length), got {tuple(x.shape)}")
    B, C, L = x.shape
    W = torch.view_as_complex(params.spectral)
    modes = W.shape[0]
    if W.shape[1] != C or params.pointwise.shape[0] != C:
        raise ValueError(f"layer expects {W.shape[1]} input channels, got {C}")
    if modes > L // 2 + 1:
        raise ValueError(f"{modes} modes exceed the {L // 2 + 1} available")
    X = torch.fft.rfft(x, dim=-1)
    Y = torch.einsum("bim,mio->bom", X[..., :modes], W)
    out_ft = torch.zeros(B, W.shape[2], L // 2 + 1, dtype=Y.dtype, device=x.device)
    out_ft[..., :modes] = Y
    y = torch.fft.irfft(out_ft, n=L, dim=-1) + torch.einsum("bil,io->bol", x, params.pointwise)
    if params.bias is not None:
        y = y + params.bias[None, :, None]
    return F.gelu(y) if activation else y


class FnoLayer(nn.Module):
    def __init__(self, c_in, c_out, modes):
        super().__init__()
        scale = 1.0 / (c_in * modes)
        self.spectral = nn.Parameter(scale * torch.randn(modes, c_in, c_out, 2) / math.sqrt(2))
        bound = 1.0 / math.sqrt(c_in)
        self.pointwise = nn.Parameter(torch.empty(c_in, c_out).uniform_(-bound, bound))
        self.bias = nn.Parameter(torch.zeros(c_out))

    @property
    def modes(self):
        return self.spectral.shape[0]

    def params(self) -> FnoLayerParams:
        return FnoLayerParams(self.spectral, self.pointwise, self.bias)

    def forward(self, x):
        return fno_layer_forward(x, self.params())


class ResTemporalBlock(nn.Module):
    """1D residual conv block used in place of a spectral layer for ablations."""

    def __init__(self, c_in, c_out, kernel=5):
        super().__init__()
        self.conv1 = nn.Conv1d(c_in, c_out, kernel, padding=kernel // 2)
        self.conv2 = nn.Conv1d(c_out, c_out, kernel, padding=kernel // 2)
        self.skip = nn.Conv1d(c_in, c_out, 1) if c_in != c_out else nn.Identity()

    def forward(self, x):
        return F.gelu(self.skip(x) + self.conv2(F.gelu(self.conv1(x))))


class DoubleConv(nn.Module):
    def __init__(self, c_in, c_out, c_mid=None):
        super().__init__()
        c_mid = c_out if c_mid is None else c_mid
        self.conv1 = nn.Conv2d(c_in, c_mid, 3, padding=1)
        self.conv2 = nn.Conv2d(c_mid, c_out, 3, padding=1)

    def forward(self, x):
        return F.gelu(self.conv2(F.gelu(self.conv1(x))))


class Down(nn.Module):
    """Stride-2 convolution followed by a double conv."""

    def __init__(self, c_in, c_out):
        super().__init__()
        self.reduce = nn.Conv2d(c_in, c_in, 3, stride=2, padding=1)
        self.conv = DoubleConv(c_in, c_out)

    def forward(self, x):
        return self.conv(F.gelu(self.reduce(x)))


class Up(nn.Module):
    """Bilinear upsampling to the skip's size, concatenation, double conv."""

    def __init__(self, c_in, c_out, c_mid=None):
        super().__init__()
        self.conv = DoubleConv(c_in, c_out, c_mid)

    def forward(self, x, skip):
        x = F.interpolate(x, size=skip.shape[-2:], mode="bilinear", align_corners=False)
        return self.conv(torch.cat([skip, x], dim=1))
