"""Evaluation metrics and grouped reports."""
from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.ndimage import correlate1d


def aeration_error(pred, truth_gamma) -> float:
    """``|gamma - gamma_hat|``; ``pred`` may be a map (its mean is used) or a scalar."""
    p = np.asarray(pred, dtype=float)
    g_hat = float(p.mean()) if p.ndim else float(p)
    return abs(float(truth_gamma) - g_hat)


def nmse(pred, truth) -> float:
    p = np.asarray(pred, dtype=float)
    t = np.asarray(truth, dtype=float)
    if p.shape != t.shape:
        raise ValueError("shape mismatch")
    energy = np.sum(t ** 2)
    if energy == 0:
        raise ValueError("NMSE undefined for an all-zero reference")
    return float(np.sum((t - p) ** 2) / energy)


def psnr(pred, truth) -> float:
    """``10 log10(max(truth)^2 / MSE)``; identical inputs give ``inf``."""
    p = np.asarray(pred, dtype=float)
    t = np.asarray(truth, dtype=float)
    if p.shape != t.shape:
        raise ValueError("shape mismatch")
    mse = np.mean((t - p) ** 2)
    if mse == 0:
        return float("inf")
    return float(10 * np.log10(t.max() ** 2 / mse))


def _gaussian_taps(size=11, sigma=1.5):
    x = np.arange(size) - (size - 1) / 2
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def ssim(pred, truth, win=11, sigma=1.5, k1=0.01, k2=0.03, data_range=1.0) -> float:
    """Mean SSIM over all fully contained Gaussian windows."""
    x = np.asarray(pred, dtype=float)
    y = np.asarray(truth, dtype=float)
    if x.shape != y.shape:
        raise ValueError("shape mismatch")
    if x.ndim != 2 or min(x.shape) < win:
        raise ValueError(f"SSIM needs 2D images of at least {win}x{win}")
    g = _gaussian_taps(win, sigma)
    h = win // 2

    def blur(a):
        a = correlate1d(a, g, axis=0, mode="constant")
        a = correlate1d(a, g, axis=1, mode="constant")
        return a[h:a.shape[0] - h, h:a.shape[1] - h]

    mx, my = blur(x), blur(y)
    vx = blur(x * x) - mx ** 2
    vy = blur(y * y) - my ** 2
    cxy = blur(x * y) - mx * my
    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    s = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2))
    return float(s.mean())


def dice(pred_mask, truth_mask) -> float:
    a = np.asarray(pred_mask).astype(bool)
    b = np.asarray(truth_mask).astype(bool)
    if a.shape != b.shape:
        raise ValueError("shape mismatch")
    denom = a.sum() + b.sum()
    if denom == 0:
        return 1.0
    return float(2.0 * np.logical_and(a, b).sum() / denom)


def calibration_curve(preds, truths, bins=10):
    """Equal-width bins over predicted probability.

    Returns ``(confidence, accuracy, ece, counts)``; empty bins hold NaN.
    """
    p = np.asarray(preds, dtype=float).ravel()
    y = np.asarray(truths, dtype=float).ravel()
    if np.any((p < 0) | (p > 1)):
        raise ValueError("predictions must lie in [0, 1]")
    idx = np.minimum((p * bins).astype(int), bins - 1)
    counts = np.bincount(idx, minlength=bins).astype(float)
    conf_sum = np.bincount(idx, weights=p, minlength=bins)
    acc_sum = np.bincount(idx, weights=y, minlength=bins)
    with np.errstate(invalid="ignore", divide="ignore"):
        conf = conf_sum / counts
        acc = acc_sum / counts
    used = counts > 0
    ece = float(np.sum(counts[used] / p.size * np.abs(acc[used] - conf[used]))) if p.size else 0.0
    return conf, acc, ece, counts.astype(int)


def expected_calibration_error(preds, truths, bins=10) -> float:
    return calibration_curve(preds, truths, bins)[2]


# ---------------------------------------------------------------------------
# grouped report
# ---------------------------------------------------------------------------

METRIC_KEYS = ("aeration_error", "nmse", "psnr_db", "ssim", "dice")


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)
    depth_range: tuple = (0.0, 1.0)

    def add(self, sample_id, pred_map, truth_map, truth_gamma, depth_m, pred_mask=None, truth_mask=None):
        pred_map = np.asarray(pred_map, dtype=float)
        truth_map = np.asarray(truth_map, dtype=float)
        row = {
            "id": str(sample_id),
            "gamma": float(truth_gamma),
            "gamma_hat": float(pred_map.mean()),
            "depth_m": float(depth_m),
            "aeration_error": aeration_error(pred_map, truth_gamma),
            "nmse": nmse(pred_map, truth_map) if np.any(truth_map) else float("nan"),
            "psnr_db": psnr(pred_map, truth_map),
            "ssim": ssim(pred_map, truth_map) if min(truth_map.shape) >= 11 else float("nan"),
            "dice": dice(pred_mask, truth_mask) if pred_mask is not None else float("nan"),
        }
        self.rows.append(row)
        return row

    @staticmethod
    def _agg(rows):
        out = {"n": len(rows)}
        for k in METRIC_KEYS:
            v = np.array([r[k] for r in rows], dtype=float)
            v = v[np.isfinite(v)]
            out[k + "_mean"] = float(v.mean()) if v.size else float("nan")
            out[k + "_sd"] = float(v.std(ddof=0)) if v.size else float("nan")
        return out

    def aggregates(self):
        return self._agg(self.rows)

    def by_aeration(self, n_bins=10):
        groups = {}
        for r in self.rows:
            b = min(int(r["gamma"] * n_bins), n_bins - 1)
            groups.setdefault(b, []).append(r)
        return {f"{b / n_bins:.1f}-{(b + 1) / n_bins:.1f}": self._agg(rs) for b, rs in sorted(groups.items())}

    def by_depth(self, n_bins=5):
        lo, hi = self.depth_range
        groups = {}
        for r in self.rows:
            b = int(np.clip((r["depth_m"] - lo) / (hi - lo) * n_bins, 0, n_bins - 1)) if hi > lo else 0
            groups.setdefault(b, []).append(r)
        edge = lambda b: lo + (hi - lo) * b / n_bins
        return {f"{edge(b) * 1e3:.2f}-{edge(b + 1) * 1e3:.2f}mm": self._agg(rs) for b, rs in sorted(groups.items())}

    def to_dict(self):
        return {
            "samples": self.rows,
            "aggregate": self.aggregates(),
            "by_aeration": self.by_aeration(),
            "by_depth": self.by_depth(),
        }

    def write(self, csv_path, json_path):
        keys = ["id", "gamma", "gamma_hat", "depth_m", *METRIC_KEYS]
        with open(csv_path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(keys)
            for r in self.rows:
                w.writerow([r[k] if isinstance(r[k], str) else repr(float(r[k])) for k in keys])
        with open(json_path, "w") as fh:
            json.dump(_finite(self.to_dict()), fh, indent=2, sort_keys=True)


def _finite(obj):
    """Replace non-finite floats by the strings "inf", "-inf", "nan" for strict JSON."""
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return "nan" if np.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj
