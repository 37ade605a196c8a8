"""AdamW with decoupled weight decay, and the cosine-annealing
warm-restarts learning-rate schedule."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np

from .autodiff import Parameter

__all__ = ["AdamW", "CosineWarmRestarts"]


class AdamW:
    """Decoupled-weight-decay Adam: the decay term multiplies the parameter
    directly and never enters the moment estimates."""

    def __init__(
        self,
        params: List[Parameter],
        lr: float = 1e-3,
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
        weight_decay: float = 0.1,
    ):
        names = [p.name for p in params]
        if len(set(names)) != len(names):
            raise ValueError("duplicate parameter names handed to optimizer")
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.weight_decay = weight_decay
        self.t = 0
        self.m: Dict[str, np.ndarray] = {p.name: np.zeros_like(p.data) for p in params}
        self.v: Dict[str, np.ndarray] = {p.name: np.zeros_like(p.data) for p in params}

    def zero_grad(self) -> None:
        for p in self.params:
            p.zero_grad()

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for p in self.params:
            g = p.grad
            if g is None:
                g = np.zeros_like(p.data)
            if not np.all(np.isfinite(g)):
                raise FloatingPointError(f"non-finite gradient for {p.name}")
            m = self.m[p.name]
            v = self.v[p.name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            mhat = m / bc1
            vhat = v / bc2
            p.data -= lr * (mhat / (np.sqrt(vhat) + self.eps) + self.weight_decay * p.data)


@dataclass(frozen=True)
class CosineWarmRestarts:
    """lr follows a cosine from base_lr down to eta_min within each restart
    period; period lengths are t0, t0*t_mult, t0*t_mult^2, ..."""

    base_lr: float
    t0: float
    t_mult: float = 1.0
    eta_min: float = 0.0

    def __post_init__(self):
        if self.t0 <= 0 or self.t_mult < 1 or self.eta_min < 0:
            raise ValueError("invalid schedule configuration")

    def lr_at(self, epoch: float) -> float:
        if epoch < 0:
            raise ValueError(f"negative epoch {epoch}")
        if self.t_mult == 1.0:
            period = self.t0
            t = math.fmod(epoch, self.t0)
        else:
            # index of the period containing `epoch` in the geometric series
            n = int(math.floor(math.log(epoch / self.t0 * (self.t_mult - 1.0) + 1.0, self.t_mult)))
            start = self.t0 * (self.t_mult ** n - 1.0) / (self.t_mult - 1.0)
            period = self.t0 * self.t_mult ** n
            t = epoch - start
        frac = 0.5 * (1.0 + math.cos(math.pi * t / period))
        return self.eta_min + (self.base_lr - self.eta_min) * frac
