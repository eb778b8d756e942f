"""Training objectives."""
import warnings

import torch

EPS = 1e-7


def _clamp(pred):
    if torch.any((pred <= 0) | (pred >= 1)):
        warnings.warn("predictions outside (0, 1) clamped to [1e-7, 1 - 1e-7]", RuntimeWarning, stacklevel=3)
    return pred.clamp(EPS, 1 - EPS)


def cross_entropy_map(pred, truth):
    """Pixel-summed binary cross-entropy per sample, shape ``(B,)``."""
    pred = _clamp(pred)
    ce = -(truth * torch.log(pred) + (1 - truth) * torch.log1p(-pred))
    return ce.flatten(1).sum(dim=1)


def aeration_term(pred, truth_gamma):
    return (truth_gamma - pred.flatten(1).mean(dim=1)).abs()


def loss_total(pred, truth_map, truth_gamma, eta=0.5, mode="pretrain"):
    """Batch-mean of ``CE + eta*|gamma - mean(pred)|``.

    ``mode="finetune"`` keeps only the aeration term.  Returns
    ``(loss, ce_mean, aeration_mean)``.
    """
    pred = pred.reshape(pred.shape[0], -1)
    truth_map = truth_map.reshape(truth_map.shape[0], -1).to(pred.dtype)
    truth_gamma = torch.as_tensor(truth_gamma, dtype=pred.dtype).reshape(-1)
    lg = aeration_term(pred, truth_gamma)
    if mode == "finetune":
        ce = torch.zeros_like(lg)
        total = eta * lg
    elif mode == "pretrain":
        ce = cross_entropy_map(pred, truth_map)
        total = ce + eta * lg
    else:
        raise ValueError(f"unknown loss mode {mode!r}")
    return total.mean(), ce.mean(), lg.mean()


def segmentation_loss(logits, wall_mask):
    """Pixel-summed 2-class cross-entropy (class 0 = chest wall), averaged over the batch."""
    target = (1 - wall_mask.long())
    ce = torch.nn.functional.cross_entropy(logits, target, reduction="none")
    return ce.flatten(1).sum(dim=1).mean()
