"""Delay-and-sum imaging and the delayed-RF representation.

The output depth axis has one sample per RF sample, ``z_n = c n / (2 fs)``.
For depth ``z`` and receiver offset ``x_m`` the echo is read at time

    tau_c + (z + sqrt(z**2 + x_m**2)) / c

where ``tau_c`` is the firing delay of the aperture center, so the transmit
wave reaches depth ``z`` on axis at ``tau_c + z/c``.  Fractional positions use
linear interpolation; positions outside the record contribute zero.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .sequence import RFTensor

DYNAMIC_RANGE_DB = 60.0


@dataclass
class BModeImage:
    img: np.ndarray
    axial_pitch_m: float
    lateral_pitch_m: float


def depth_axis(n, c_ref, fs) -> np.ndarray:
    return c_ref * np.arange(n) / (2.0 * fs)


def receive_delays(depths, offsets, c_ref=1540.0, fs=1.0) -> np.ndarray:
    """Dynamic-focusing delays ``(sqrt(z^2 + x^2) - z)/c`` in samples, shape (depth, receiver)."""
    z = np.asarray(depths, dtype=float)[:, None]
    x = np.asarray(offsets, dtype=float)[None, :]
    return (np.sqrt(z ** 2 + x ** 2) - z) / c_ref * fs


def sample_positions(rf: RFTensor) -> np.ndarray:
    """Fractional read positions ``(T, N_t, N_e)`` into each receiver trace."""
    T = rf.data.shape[0]
    z = depth_axis(T, rf.c_ref, rf.fs)
    tau = receive_delays(z, rf.element_positions, rf.c_ref, rf.fs)
    base = (2 * z / rf.c_ref - rf.t0) * rf.fs
    return base[:, None, None] + tau[:, :, None] + np.asarray(rf.tx_center_delays)[None, None, :] * rf.fs


def apply_delays(rf: RFTensor) -> np.ndarray:
    """Per-receiver delay-compensated traces on the depth axis (no sum)."""
    data = np.asarray(rf.data, dtype=float)
    T, Nt, Ne = data.shape
    pos = sample_positions(rf)
    i0 = np.floor(pos).astype(np.int64)
    frac = pos - i0
    valid = (pos >= 0) & (pos <= T - 1)
    i0c = np.clip(i0, 0, T - 1)
    i1c = np.clip(i0 + 1, 0, T - 1)
    m = np.arange(Nt)[None, :, None]
    e = np.arange(Ne)[None, None, :]
    out = (1 - frac) * data[i0c, m, e] + frac * data[i1c, m, e]
    return np.where(valid, out, 0.0)


def das_sum(rf: RFTensor) -> np.ndarray:
    """Beamformed lines ``(T, N_e)``: receiver-wise accumulation of interpolated traces."""
    data = np.asarray(rf.data, dtype=float)
    T, Nt, Ne = data.shape
    pos = sample_positions(rf)
    grid = np.arange(T, dtype=float)
    out = np.zeros((T, Ne))
    for e in range(Ne):
        for m in range(Nt):
            out[:, e] += np.interp(pos[:, m, e], grid, data[:, m, e], left=0.0, right=0.0)
    return out


def envelope(lines, axis=0) -> np.ndarray:
    """Magnitude of the analytic signal along ``axis`` (FFT length: next power of two)."""
    x = np.asarray(lines, dtype=float)
    n = x.shape[axis]
    if n < 8:
        raise ValueError("envelope needs at least 8 samples")
    N = 1 << (n - 1).bit_length()
    X = np.fft.fft(x, N, axis=axis)
    h = np.zeros(N)
    h[0] = 1.0
    h[1:N // 2] = 2.0
    h[N // 2] = 1.0
    shape = [1] * x.ndim
    shape[axis] = N
    a = np.fft.ifft(X * h.reshape(shape), axis=axis)
    idx = [slice(None)] * x.ndim
    idx[axis] = slice(0, n)
    return np.abs(a[tuple(idx)])


def log_compress(env, dynamic_range_db=DYNAMIC_RANGE_DB) -> np.ndarray:
    """``20 log10(env / max)`` clamped to ``[-dynamic_range_db, 0]``."""
    env = np.asarray(env, dtype=float)
    if np.any(env < 0):
        raise ValueError("envelope must be non-negative")
    peak = env.max() if env.size else 0.0
    if peak <= 0:
        return np.full(env.shape, -float(dynamic_range_db))
    with np.errstate(divide="ignore"):
        db = 20.0 * np.log10(env / peak)
    return np.clip(db, -dynamic_range_db, 0.0)


def _keys(s, a=-0.5):
    s = np.abs(s)
    out = np.zeros_like(s)
    m1 = s <= 1
    m2 = (s > 1) & (s < 2)
    out[m1] = (a + 2) * s[m1] ** 3 - (a + 3) * s[m1] ** 2 + 1
    out[m2] = a * s[m2] ** 3 - 5 * a * s[m2] ** 2 + 8 * a * s[m2] - 4 * a
    return out


def _cubic_matrix(n, m):
    """Interpolation matrix (m, n) mapping n corner-aligned samples to m."""
    if n == 1:
        return np.ones((m, 1))
    x = np.linspace(0, n - 1, m)
    base = np.floor(x).astype(int)
    A = np.zeros((m, n))
    for off in (-1, 0, 1, 2):
        j = base + off
        w = _keys(x - j)
        # linear extrapolation beyond the ends keeps ramps exact
        lo = j < 0
        hi = j > n - 1
        inner = ~(lo | hi)
        np.add.at(A, (np.arange(m)[inner], j[inner]), w[inner])
        np.add.at(A, (np.arange(m)[lo], np.zeros(lo.sum(), int)), 2 * w[lo])
        np.add.at(A, (np.arange(m)[lo], np.ones(lo.sum(), int)), -w[lo])
        np.add.at(A, (np.arange(m)[hi], np.full(hi.sum(), n - 1)), 2 * w[hi])
        np.add.at(A, (np.arange(m)[hi], np.full(hi.sum(), n - 2)), -w[hi])
    return A


def upsample_display(img, factor=4, clip=(-DYNAMIC_RANGE_DB, 0.0)) -> np.ndarray:
    """Separable bicubic (Keys, a = -0.5) resampling to ``factor`` times each dimension."""
    if factor < 1 or int(factor) != factor:
        raise ValueError("factor must be a positive integer")
    img = np.asarray(img, dtype=float)
    if factor == 1:
        return img.copy()
    H, W = img.shape
    out = _cubic_matrix(H, H * factor) @ img @ _cubic_matrix(W, W * factor).T
    if clip is not None:
        out = np.clip(out, *clip)
    return out


def bmode(rf: RFTensor, factor=4, dynamic_range_db=DYNAMIC_RANGE_DB) -> BModeImage:
    """DAS, envelope, log compression and display interpolation."""
    lines = das_sum(rf)
    img = log_compress(envelope(lines, axis=0), dynamic_range_db)
    img = upsample_display(img, factor, clip=(-dynamic_range_db, 0.0))
    axial = rf.c_ref / (2 * rf.fs)
    return BModeImage(img, axial / factor, rf.pitch_m / factor)


def write_pgm(path, img_db, dynamic_range_db=DYNAMIC_RANGE_DB):
    """8-bit binary PGM with ``[-dynamic_range_db, 0]`` dB mapped linearly to ``[0, 255]``."""
    img = np.clip(np.asarray(img_db, dtype=float), -dynamic_range_db, 0.0)
    g = np.round((img + dynamic_range_db) / dynamic_range_db * 255.0).astype(np.uint8)
    H, W = g.shape
    with open(path, "wb") as fh:
        fh.write(f"P5\n{W} {H}\n255\n".encode("ascii"))
        fh.write(g.tobytes())


def read_pgm(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while raw[pos:pos + 1].isspace():
            pos += 1
        if raw[pos:pos + 1] == b"#":
            pos = raw.index(b"\n", pos) + 1
            continue
        end = pos
        while not raw[end:end + 1].isspace():
            end += 1
        tokens.append(raw[pos:end])
        pos = end
    if tokens[0] != b"P5":
        raise ValueError("not a binary PGM")
    W, H, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval > 255:
        raise ValueError("only 8-bit PGM is supported")
    return np.frombuffer(raw[pos + 1: pos + 1 + W * H], dtype=np.uint8).reshape(H, W)
