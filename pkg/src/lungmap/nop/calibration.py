"""Platt scaling of per-pixel probabilities."""
import numpy as np

from ..errors import CalibrationDegenerate


def sigmoid(x):
    x = np.asarray(x, dtype=float)
    return np.where(x >= 0, 1 / (1 + np.exp(-np.abs(x))), np.exp(-np.abs(x)) / (1 + np.exp(-np.abs(x))))


def logit(p, eps=1e-7):
    p = np.clip(np.asarray(p, dtype=float), eps, 1 - eps)
    return np.log(p) - np.log1p(-p)


def platt_fit(scores, labels, max_iter=100, tol=1e-12):
    """Newton iterations for ``(a, b)`` minimizing the log-loss of ``sigmoid(a*s + b)``."""
    s = np.asarray(scores, dtype=float).ravel()
    y = np.asarray(labels, dtype=float).ravel()
    if s.size == 0:
        raise CalibrationDegenerate("calibration-degenerate: empty validation set")
    if y.min() == y.max():
        raise CalibrationDegenerate("calibration-degenerate: validation labels contain a single class")
    a, b = 1.0, 0.0
    X = np.stack([s, np.ones_like(s)], axis=1)
    prev = np.inf
    for _ in range(max_iter):
        p = sigmoid(a * s + b)
        g = X.T @ (p - y)
        w = p * (1 - p)
        Hm = X.T @ (X * w[:, None]) + 1e-12 * np.eye(2)
        step = np.linalg.solve(Hm, g)
        # backtrack so the log-loss never increases
        t = 1.0
        f0 = _nll(s, y, a, b)
        while t > 1e-8:
            a1, b1 = a - t * step[0], b - t * step[1]
            if _nll(s, y, a1, b1) <= f0:
                break
            t *= 0.5
        a, b = a1, b1
        if abs(prev - f0) < tol * max(1.0, abs(f0)):
            break
        prev = f0
    return float(a), float(b)


def _nll(s, y, a, b):
    z = a * s + b
    return float(np.sum(np.logaddexp(0, z) - y * z))


def platt_calibrate(val_preds, val_truths, bins=10):
    """Fit Platt scaling on logits of ``val_preds``.

    Returns ``(a, b, ece_before, ece_after)``.
    """
    from ..metrics import calibration_curve

    p = np.asarray(val_preds, dtype=float).ravel()
    y = np.asarray(val_truths, dtype=float).ravel()
    a, b = platt_fit(logit(p), y)
    before = calibration_curve(p, y, bins)[2]
    after = calibration_curve(apply_platt(p, a, b), y, bins)[2]
    return a, b, before, after


def apply_platt(preds, a, b):
    return sigmoid(a * logit(preds) + b)
