"""Training loops for the reconstruction and segmentation networks."""
from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field

import numpy as np
import torch

from ..beamform import apply_delays
from ..phantom import make_rng
from ..sequence import RFTensor
from .augment import AugmentConfig, augment
from .losses import loss_total, segmentation_loss
from .networks import LunaNet, ModelConfig, SegConfig, SegNet
from .optim import AdamConfig, AdamState, adam_step


@dataclass
class TrainConfig:
    eta: float = 0.5
    lr: float | None = None
    betas: tuple | None = None
    batch: int = 8
    epochs_pretrain: int = 30
    epochs_finetune: int = 10
    seed: int = 0
    augment: AugmentConfig = field(default_factory=AugmentConfig)

    def __post_init__(self):
        if self.eta < 0:
            raise ValueError("eta must be non-negative")
        if isinstance(self.augment, dict):
            self.augment = AugmentConfig(**self.augment)
        if self.betas is not None:
            self.betas = tuple(self.betas)

    def adam(self) -> AdamConfig:
        base = AdamConfig.from_eta(self.eta)
        return AdamConfig(
            lr=base.lr if self.lr is None else self.lr,
            betas=base.betas if self.betas is None else self.betas,
        )

    def to_dict(self):
        return asdict(self)


@dataclass
class Sample:
    """One training record held in memory."""

    rf: RFTensor
    truth: np.ndarray        # (H_out, n_e) binary aeration map
    gamma: float
    wall: np.ndarray         # (n_e,) pleural depth fraction


def delayed_input(sample: Sample, aug: AugmentConfig | None, rng) -> np.ndarray:
    data = sample.rf.data if aug is None else augment(sample.rf.data, aug, rng)
    rf = RFTensor(**{**sample.rf.__dict__, "data": data})
    return apply_delays(rf)


def estimate_input_scale(samples) -> float:
    """Median nonzero spectral magnitude of the delayed training inputs."""
    mags = []
    for s in samples:
        m = np.abs(np.fft.rfft(apply_delays(s.rf), axis=0))
        mags.append(m[m > 0])
    allm = np.concatenate(mags) if mags else np.array([1.0])
    return float(np.median(allm)) if allm.size else 1.0


def make_batch(samples, idx, aug, rng, dtype=torch.float32):
    x = np.stack([delayed_input(samples[i], aug, rng) for i in idx])
    w = np.stack([samples[i].wall for i in idx])
    y = np.stack([samples[i].truth for i in idx])
    g = np.array([samples[i].gamma for i in idx])
    t = lambda a: torch.as_tensor(a, dtype=dtype)
    return t(x), t(w), t(y), t(g)


def predict(model: LunaNet, samples, batch=16, dtype=torch.float32) -> np.ndarray:
    """Probabilistic maps ``(N, H_out, n_e)`` in evaluation mode without augmentation."""
    model.eval()
    out = []
    with torch.no_grad():
        for s in range(0, len(samples), batch):
            idx = list(range(s, min(s + batch, len(samples))))
            x, w, _, _ = make_batch(samples, idx, None, None, dtype)
            out.append(model(x, w).double().numpy())
    return np.concatenate(out) if out else np.zeros((0, model.cfg.H_out, model.cfg.n_e))


def aeration_mae(model, samples) -> float:
    if not samples:
        return float("nan")
    pred = predict(model, samples)
    gam = np.array([s.gamma for s in samples])
    return float(np.mean(np.abs(pred.reshape(len(samples), -1).mean(axis=1) - gam)))


@torch.no_grad()
def recalibrate_batchnorm(model, samples, batch=16, dtype=torch.float32):
    """Re-estimate batch-norm running statistics on clean (unaugmented) inputs.

    The running averages gathered during training mix augmented batches and
    stale weights; evaluation on clean data with those statistics shifts
    the predicted maps.  Only buffers change, so training is unaffected.
    """
    norms = [m for m in model.modules() if isinstance(m, torch.nn.modules.batchnorm._BatchNorm)]
    if not norms or not samples:
        return model
    was_training = model.training
    saved = [m.momentum for m in norms]
    for m in norms:
        m.reset_running_stats()
        m.momentum = None  # cumulative average
    model.train()
    for s in range(0, len(samples), batch):
        idx = list(range(s, min(s + batch, len(samples))))
        if len(idx) < 2:
            continue
        x, w, _, _ = make_batch(samples, idx, None, None, dtype)
        model(x, w)
    for m, mom in zip(norms, saved):
        m.momentum = mom
    model.train(was_training)
    return model


def train_model(model: LunaNet, train, cfg: TrainConfig, val=None, mode="pretrain", epochs=None,
                log_path=None, opt_state: AdamState | None = None):
    """Mini-batch training with augmentation; returns per-epoch rows.

    Each row is ``(epoch, ce, l_gamma, loss, val_mae)`` with batch-averaged
    training terms.  Batch-norm statistics are re-estimated on the clean
    training inputs after every epoch.  Shuffling and augmentation draw from a Philox stream
    seeded by ``cfg.seed``, so identical inputs give identical curves.
    """
    epochs = (cfg.epochs_pretrain if mode == "pretrain" else cfg.epochs_finetune) if epochs is None else epochs
    torch.manual_seed(cfg.seed)
    torch.use_deterministic_algorithms(True)
    rng = make_rng(cfg.seed + (0 if mode == "pretrain" else 1))
    adam = cfg.adam()
    state = AdamState() if opt_state is None else opt_state
    params = [p for p in model.parameters()]
    rows = []
    fh = writer = None
    if log_path is not None:
        fh = open(log_path, "w", newline="")
        writer = csv.writer(fh)
        writer.writerow(["epoch", "ce", "l_gamma", "loss", "val_mae"])
    try:
        for ep in range(1, epochs + 1):
            model.train()
            order = rng.permutation(len(train))
            sums = np.zeros(3)
            n = 0
            for s in range(0, len(order), cfg.batch):
                idx = order[s:s + cfg.batch]
                if len(idx) < 2 and len(order) >= 2:
                    continue  # batch statistics need at least two samples
                x, w, y, g = make_batch(train, idx, cfg.augment, rng)
                pred = model(x, w)
                loss, ce, lg = loss_total(pred, y, g, cfg.eta, mode)
                model.zero_grad()
                loss.backward()
                adam_step(params, [p.grad for p in params], adam, state)
                k = len(idx)
                sums += k * np.array([float(torch.as_tensor(v).detach()) for v in (ce, lg, loss)])
                n += k
            recalibrate_batchnorm(model, train, cfg.batch, dtype=params[0].dtype)
            mae = aeration_mae(model, val) if val else float("nan")
            ce_m, lg_m, loss_m = sums / max(n, 1)
            rows.append((ep, ce_m, lg_m, loss_m, mae))
            if writer is not None:
                writer.writerow([ep, f"{ce_m:.9e}", f"{lg_m:.9e}", f"{loss_m:.9e}", f"{mae:.9e}"])
                fh.flush()
    finally:
        if fh is not None:
            fh.close()
    return rows


def train_segnet(model: SegNet, images, masks, steps=200, batch=4, lr=1e-3, seed=0, optimizer="adam"):
    """Fit the segmentation network on ``images (N,1,S,S)`` and ``masks (N,S,S)``.

    ``optimizer="rmsprop"`` uses the full-scale settings (lr 1e-5,
    momentum 0.999, weight decay 1e-8) instead of Adam.
    """
    torch.manual_seed(seed)
    rng = make_rng(seed)
    if optimizer == "adam":
        opt = torch.optim.Adam(model.parameters(), lr=lr)
    elif optimizer == "rmsprop":
        opt = torch.optim.RMSprop(model.parameters(), lr=1e-5, momentum=0.999, weight_decay=1e-8)
    else:
        raise ValueError(f"unknown optimizer {optimizer!r}")
    x_all = torch.as_tensor(images, dtype=torch.float32)
    m_all = torch.as_tensor(masks)
    losses = []
    model.train()
    for _ in range(steps):
        idx = rng.choice(len(x_all), size=min(batch, len(x_all)), replace=False)
        idx = torch.as_tensor(np.sort(idx))
        loss = segmentation_loss(model(x_all[idx]), m_all[idx])
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(float(loss.detach()))
    return losses


def build_model(cfg: ModelConfig, seed=0, dtype=torch.float32) -> LunaNet:
    torch.manual_seed(seed)
    return LunaNet(cfg).to(dtype)


def build_segnet(cfg: SegConfig, seed=0, dtype=torch.float32) -> SegNet:
    torch.manual_seed(seed)
    return SegNet(cfg).to(dtype)
