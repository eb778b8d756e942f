"""Adam with the (beta1, beta2) schedule tied to the aeration-loss weight."""
from dataclasses import dataclass, field

import torch


@dataclass
class AdamConfig:
    lr: float = 1e-3
    betas: tuple = (0.0, 0.995)
    eps: float = 1e-8

    @classmethod
    def from_eta(cls, eta):
        return cls(lr=eta * 0.002, betas=(0.0, 0.99 ** eta))


@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    @classmethod
    def zeros_like(cls, params):
        return cls(0, [torch.zeros_like(p) for p in params], [torch.zeros_like(p) for p in params])


@torch.no_grad()
def adam_step(params, grads, cfg: AdamConfig, state: AdamState):
    """In-place bias-corrected Adam update of ``params``; returns ``params``."""
    if not state.m:
        fresh = AdamState.zeros_like(params)
        state.m, state.v = fresh.m, fresh.v
    b1, b2 = cfg.betas
    state.step += 1
    c1 = 1 - b1 ** state.step
    c2 = 1 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if g is None:
            continue
        m.mul_(b1).add_(g, alpha=1 - b1)
        v.mul_(b2).addcmul_(g, g, value=1 - b2)
        p.sub_(cfg.lr * (m / c1) / ((v / c2).sqrt() + cfg.eps))
    return params
